use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nidsmoe::data::read_cache;
use nidsmoe::train::{load_checkpoint, save_checkpoint, EvalReport, GatingReport, History};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/flows20.csv");

fn nidsmoe(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nidsmoe"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("NIDSMOE_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

/// The run directory announced on the last stdout line.
fn run_dir(o: &Output) -> PathBuf {
    let s = stdout(o);
    let line = s.lines().last().unwrap();
    PathBuf::from(line.strip_prefix("run directory: ").unwrap())
}

fn read<T: for<'de> serde::Deserialize<'de>>(p: impl AsRef<Path>) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// The 20-row fixture repeated `times` times.
fn bigger_fixture(dir: &Path, times: usize) -> PathBuf {
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let mut lines = text.lines();
    let mut out = String::from(lines.next().unwrap());
    out.push('\n');
    let body: Vec<&str> = lines.collect();
    for _ in 0..times {
        for l in &body {
            out.push_str(l);
            out.push('\n');
        }
    }
    let path = dir.join("flows.csv");
    std::fs::write(&path, out).unwrap();
    path
}

const TINY: &[&str] = &["--experts", "8", "--top-k", "2", "--batch-size", "16", "--epochs", "1"];

#[test]
fn preprocess_writes_78_wide_cache_and_reuses_it() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(nidsmoe(tmp.path(), &["preprocess", "--dataset", FIXTURE]));
    let dir = run_dir(&o);
    assert!(stdout(&o).contains("78 features"));
    let summary: serde_json::Value = read(dir.join("summary.json"));
    assert_eq!(summary["rows"], 20);
    assert_eq!(summary["classes"][0]["name"], "Benign");
    assert_eq!(summary["classes"].as_array().unwrap().len(), 9);
    let dur = summary["missing_values"].as_array().unwrap().iter().find(|m| m["name"] == "Dur").unwrap();
    assert_eq!(dur["count"], 2);
    assert!(dir.join("stats.json").exists() && dir.join("config.toml").exists());

    let caches: Vec<PathBuf> = std::fs::read_dir(tmp.path().join("cache"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    assert_eq!(caches.len(), 1);
    let (_, _, split) = read_cache(&caches[0]).unwrap();
    assert_eq!(split.train.len() + split.test.len(), 20);
    assert!(split.train.iter().chain(&split.test).all(|s| s.features.len() == 78));

    let again = ok(nidsmoe(tmp.path(), &["preprocess", "--dataset", FIXTURE]));
    assert!(stderr(&again).contains("reusing encoded-dataset cache"), "{}", stderr(&again));
    // a different seed changes the split, so the cache is rebuilt
    let other = ok(nidsmoe(tmp.path(), &["preprocess", "--dataset", FIXTURE, "--seed", "4"]));
    assert!(!stderr(&other).contains("reusing"));
}

#[test]
fn missing_column_is_a_schema_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, std::fs::read_to_string(FIXTURE).unwrap().replacen("Proto", "Protocol", 1)).unwrap();
    let o = nidsmoe(tmp.path(), &["preprocess", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("\"Proto\""), "{}", stderr(&o));
}

#[test]
fn config_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nidsmoe(tmp.path(), &["train", "--dataset", FIXTURE, "--ablate", "no_router"]);
    assert_eq!(o.status.code(), Some(2));
    let o = nidsmoe(tmp.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    let o = nidsmoe(tmp.path(), &["train", "--dataset", FIXTURE, "--experts", "4", "--top-k", "9"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let o = nidsmoe(tmp.path(), &["preprocess", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().read_dir().unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("run-")));
}

#[test]
fn defaults_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(nidsmoe(tmp.path(), &["preprocess", "--dataset", FIXTURE]));
    let cfg: toml::Value = toml::from_str(&std::fs::read_to_string(run_dir(&o).join("config.toml")).unwrap()).unwrap();
    let t = &cfg["train"];
    assert_eq!(t["n_experts"].as_integer(), Some(128));
    assert_eq!(t["top_k"].as_integer(), Some(32));
    assert_eq!(t["alpha"].as_float(), Some(0.1));
    assert_eq!(t["batch_size"].as_integer(), Some(1024));
    assert_eq!(t["max_epochs"].as_integer(), Some(40));
    assert_eq!(cfg["imputation"].as_str(), Some("leak-free"));
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "imputation = \"verbatim\"\n[train]\nalpha = 0.5\nseed = 9\n").unwrap();
    let o = ok(nidsmoe(
        tmp.path(),
        &["preprocess", "--dataset", FIXTURE, "--config", cfg.to_str().unwrap(), "--seed", "3"],
    ));
    let echoed = std::fs::read_to_string(run_dir(&o).join("config.toml")).unwrap();
    let v: toml::Value = toml::from_str(&echoed).unwrap();
    assert_eq!(v["imputation"].as_str(), Some("verbatim"));
    assert_eq!(v["train"]["alpha"].as_float(), Some(0.5));
    assert_eq!(v["train"]["seed"].as_integer(), Some(3));
    // the echoed file is itself a valid config
    let again = tmp.path().join("echo.toml");
    std::fs::write(&again, echoed).unwrap();
    ok(nidsmoe(tmp.path(), &["preprocess", "--config", again.to_str().unwrap()]));
}

#[test]
fn no_moe_history_has_no_balancing_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--dataset", "synthetic:180", "--ablate", "no_moe"];
    args.extend_from_slice(TINY);
    let o = ok(nidsmoe(tmp.path(), &args));
    let h: History = read(run_dir(&o).join("history.json"));
    assert!(!h.epochs.is_empty());
    assert!(h.epochs.iter().all(|e| e.importance_loss == 0.0 && e.load_loss == 0.0));
}

#[test]
fn same_seed_same_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = bigger_fixture(tmp.path(), 3);
    let mut args = vec!["train", "--dataset", csv.to_str().unwrap(), "--seed", "7"];
    args.extend_from_slice(TINY);
    let a = run_dir(&ok(nidsmoe(tmp.path(), &args)));
    let b = run_dir(&ok(nidsmoe(tmp.path(), &args)));
    assert_ne!(a, b);
    let (ca, cb) = (std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(ca[ca.len() - 32..], cb[cb.len() - 32..]);
    assert_eq!(ca, cb);
    assert_eq!(std::fs::read(a.join("history.json")).unwrap(), std::fs::read(b.join("history.json")).unwrap());
}

#[test]
fn evaluate_prints_report_in_class_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("fast.toml");
    std::fs::write(&cfg, "[train.optimizer]\nlr = 0.05\n").unwrap();
    let common = [
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        "synthetic:900",
        "--ablate",
        "no_cnn",
        "--epochs",
        "5",
        "--batch-size",
        "32",
    ];
    let mut args = vec!["train"];
    args.extend_from_slice(&common);
    let trained = run_dir(&ok(nidsmoe(tmp.path(), &args)));
    let ckpt = trained.join("model.ckpt");
    let mut args = vec!["evaluate", "--checkpoint", ckpt.to_str().unwrap()];
    args.extend_from_slice(&common);
    let o = ok(nidsmoe(tmp.path(), &args));
    let text = stdout(&o);
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("Benign"), "{text}");
    assert!(text.contains("weighted f1  1.00000"), "{text}");
    let raw = std::fs::read_to_string(run_dir(&o).join("report.json")).unwrap();
    let report: EvalReport = serde_json::from_str(&raw).unwrap();
    assert_eq!(report.weighted_f1, 1.0);
    let names: Vec<&str> = report.classes.iter().map(|c| c.class.as_str()).collect();
    assert_eq!(names, nidsmoe::data::CLASS_NAMES);
    let round: EvalReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(round, report);
}

#[test]
fn evaluate_and_gating_on_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = bigger_fixture(tmp.path(), 3);
    let csv = csv.to_str().unwrap();
    let mut args = vec!["train", "--dataset", csv];
    args.extend_from_slice(TINY);
    let ckpt = run_dir(&ok(nidsmoe(tmp.path(), &args))).join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let o = ok(nidsmoe(tmp.path(), &["evaluate", "--checkpoint", ckpt, "--dataset", csv]));
    let r: EvalReport = read(run_dir(&o).join("report.json"));
    assert_eq!(r.samples, 60);

    let o = ok(nidsmoe(tmp.path(), &["gating-report", "--checkpoint", ckpt, "--dataset", csv]));
    let g: GatingReport = read(run_dir(&o).join("gating.json"));
    assert_eq!(g.experts.len(), 8);
    assert_eq!(g.experts.iter().map(|e| e.selections).sum::<usize>(), 2 * 60);
    assert!(g.cv2_importance.is_finite() && g.cv2_load.is_finite());

    // a checkpoint fitted on another schema is refused
    let mut c = load_checkpoint::<f64>(ckpt).unwrap();
    c.pipeline.as_mut().unwrap().schema_hash = "0".repeat(64);
    let other = tmp.path().join("other.ckpt");
    save_checkpoint(&other, &c.model, c.pipeline.as_ref(), &c.meta).unwrap();
    let o = nidsmoe(tmp.path(), &["evaluate", "--checkpoint", other.to_str().unwrap(), "--dataset", csv]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("schema-hash mismatch"));

    // a damaged checkpoint is a runtime failure
    let mut bytes = std::fs::read(ckpt).unwrap();
    bytes.truncate(bytes.len() - 10);
    let broken = tmp.path().join("broken.ckpt");
    std::fs::write(&broken, bytes).unwrap();
    let o = nidsmoe(tmp.path(), &["evaluate", "--checkpoint", broken.to_str().unwrap(), "--dataset", csv]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}

#[test]
fn ablate_and_expert_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--dataset", "synthetic:180"];
    args.extend_from_slice(TINY);
    let o = ok(nidsmoe(tmp.path(), &args));
    let runs: serde_json::Value = read(run_dir(&o).join("ablation.json"));
    let names: Vec<&serde_json::Value> = runs.as_array().unwrap().iter().map(|r| &r["variant"]).collect();
    assert_eq!(names, ["baseline", "zero_losses", "no_moe", "no_cnn"]);
    assert_eq!(runs[3]["param_count"], 711);

    let mut args = vec!["train", "--dataset", "synthetic:180", "--expert-grid", "8x2,4x1"];
    args.extend_from_slice(TINY);
    let dir = run_dir(&ok(nidsmoe(tmp.path(), &args)));
    for sub in ["n8-k2", "n4-k1"] {
        assert!(dir.join(sub).join("report.json").exists());
        assert!(dir.join(sub).join("model.ckpt").exists());
    }
    let grid: serde_json::Value = read(dir.join("grid.json"));
    assert_eq!(grid.as_array().unwrap().len(), 2);
}
