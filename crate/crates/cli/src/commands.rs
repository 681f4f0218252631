use std::path::{Path, PathBuf};

use log::info;
use nidsmoe::data::{
    apply_imputers, class_counts, gaussian_blobs, input_key, missing_counts, parse_flow_reader, prepare, read_cache,
    stratified_split, write_cache, BlobConfig, EncodedSample, EncodedSplit, FlowSchema, PipelineStats, CLASS_NAMES,
};
use nidsmoe::train::{
    evaluate, gating_report, load_checkpoint, run_ablation, save_checkpoint, train, AblationRun, AblationVariant,
    CheckpointMeta, EvalReport, TrainConfig,
};
use nidsmoe::ModelF64;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// Creates `<out>/run-<timestamp>-s<seed>`, adding a suffix if it exists.
pub fn create_run_dir(out: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = out.join(format!("run-{stamp}-s{seed}"));
    let mut dir = base.clone();
    let mut i = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{i}", base.display()));
        i += 1;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn start_run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = create_run_dir(&cfg.out, cfg.train.seed)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    info!("run directory {}", dir.display());
    Ok(dir)
}

enum Source {
    Csv(PathBuf),
    Synthetic(usize),
}

fn source(cfg: &RunConfig) -> Result<Source, CliError> {
    let d = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::Config("no dataset given (use --dataset or set `dataset` in the config file)".into()))?;
    if d == "synthetic" {
        return Ok(Source::Synthetic(BlobConfig::default().n_samples));
    }
    if let Some(n) = d.strip_prefix("synthetic:") {
        return n
            .parse()
            .map(Source::Synthetic)
            .map_err(|_| CliError::Config(format!("bad synthetic sample count {n:?}")));
    }
    Ok(Source::Csv(PathBuf::from(d)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountRow {
    pub name: String,
    pub count: usize,
}

/// What preprocessing saw: per-class rows and per-feature missing cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub skipped_rows: usize,
    pub classes: Vec<CountRow>,
    pub missing_values: Vec<CountRow>,
    pub train_samples: usize,
    pub test_samples: usize,
}

pub struct Prepared {
    pub split: EncodedSplit,
    pub stats: Option<PipelineStats>,
    pub summary: Option<Summary>,
}

fn schema(cfg: &RunConfig) -> FlowSchema {
    FlowSchema::flow_features(&cfg.label_column)
}

fn synthetic_split(n: usize, cfg: &RunConfig) -> Result<EncodedSplit, CliError> {
    let blobs = gaussian_blobs(&BlobConfig {
        n_samples: n,
        seed: cfg.train.seed,
        ..BlobConfig::default()
    });
    let labels: Vec<usize> = blobs.iter().map(|s| s.label).collect();
    let (tr, te) = stratified_split(&labels, cfg.train_fraction, cfg.train.seed)?;
    Ok(EncodedSplit {
        train: tr.iter().map(|&i| blobs[i].clone()).collect(),
        test: te.iter().map(|&i| blobs[i].clone()).collect(),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Encodes the dataset, reusing `<out>/cache` when the inputs are unchanged.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let path = match source(cfg)? {
        Source::Synthetic(n) => {
            return Ok(Prepared {
                split: synthetic_split(n, cfg)?,
                stats: None,
                summary: None,
            })
        }
        Source::Csv(p) => p,
    };
    let bytes = std::fs::read(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let schema = schema(cfg);
    let options = format!(
        "{};{};{};{};{}",
        cfg.imputation,
        cfg.train_fraction,
        cfg.train.seed,
        schema.hash(),
        cfg.label_column
    );
    let key = input_key(&bytes, &options);
    let cache_dir = cfg.out.join("cache");
    let stem = &key[..16];
    let (cache_path, stats_path, summary_path) = (
        cache_dir.join(format!("{stem}.bin")),
        cache_dir.join(format!("{stem}.stats.json")),
        cache_dir.join(format!("{stem}.summary.json")),
    );
    if cache_path.exists() && stats_path.exists() && summary_path.exists() {
        match read_cache(&cache_path) {
            Ok((hash, k, split)) if hash == schema.hash() && k == key => {
                info!("reusing encoded-dataset cache {} (input hash match)", cache_path.display());
                return Ok(Prepared {
                    split,
                    stats: Some(read_json(&stats_path)?),
                    summary: Some(read_json(&summary_path)?),
                });
            }
            Ok(_) => info!("cache {} is stale; re-encoding", cache_path.display()),
            Err(e) => info!("cache {} unusable ({e}); re-encoding", cache_path.display()),
        }
    }
    let parsed = parse_flow_reader(&bytes[..], &schema)?;
    info!("parsed {} rows from {} ({} skipped)", parsed.records.len(), path.display(), parsed.skipped.len());
    let (split, stats) = prepare(&parsed.records, &schema, cfg.imputation, cfg.train_fraction, cfg.train.seed)?;
    let counts = class_counts(parsed.records.iter().map(|r| r.label));
    let summary = Summary {
        rows: parsed.records.len(),
        skipped_rows: parsed.skipped.len(),
        classes: CLASS_NAMES
            .iter()
            .zip(counts)
            .map(|(n, c)| CountRow {
                name: n.to_string(),
                count: c,
            })
            .collect(),
        missing_values: missing_counts(&parsed.records, &schema)
            .into_iter()
            .map(|(name, count)| CountRow { name, count })
            .collect(),
        train_samples: split.train.len(),
        test_samples: split.test.len(),
    };
    std::fs::create_dir_all(&cache_dir)?;
    write_cache(&cache_path, &split, &stats.schema_hash, &key)?;
    write_json(&stats_path, &stats)?;
    write_json(&summary_path, &summary)?;
    info!("wrote encoded-dataset cache {}", cache_path.display());
    Ok(Prepared {
        split,
        stats: Some(stats),
        summary: Some(summary),
    })
}

pub fn preprocess(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let p = prepare_dataset(cfg)?;
    let dir = start_run(cfg)?;
    if let Some(stats) = &p.stats {
        write_json(&dir.join("stats.json"), stats)?;
    }
    if let Some(s) = &p.summary {
        write_json(&dir.join("summary.json"), s)?;
        println!("rows {} (skipped {})", s.rows, s.skipped_rows);
        for c in &s.classes {
            println!("  {:<18} {}", c.name, c.count);
        }
        let missing: Vec<&CountRow> = s.missing_values.iter().filter(|m| m.count > 0).collect();
        if !missing.is_empty() {
            println!("missing values");
            for m in missing {
                println!("  {:<18} {}", m.name, m.count);
            }
        }
    }
    println!("train {} / test {} samples, 78 features each", p.split.train.len(), p.split.test.len());
    Ok(dir)
}

fn parse_variants(names: &[String]) -> Result<Vec<AblationVariant>, CliError> {
    names
        .iter()
        .map(|n| n.parse::<AblationVariant>().map_err(CliError::from))
        .collect()
}

fn write_report(dir: &Path, name: &str, report: &EvalReport, text: bool) -> Result<(), CliError> {
    write_json(&dir.join(format!("{name}.json")), report)?;
    if text {
        std::fs::write(dir.join(format!("{name}.txt")), report.render())?;
    }
    Ok(())
}

fn train_one(dir: &Path, tcfg: &TrainConfig, data: &Prepared, text: bool) -> Result<EvalReport, CliError> {
    let mut model = ModelF64::new(tcfg.model_config(), tcfg.seed);
    let history = train(&mut model, &data.split.train, tcfg)?;
    let meta = CheckpointMeta {
        epochs_run: history.epochs.len(),
        seed: tcfg.seed,
        final_epoch: history.last().cloned(),
        train_config: Some(tcfg.clone()),
    };
    save_checkpoint(dir.join("model.ckpt"), &model, data.stats.as_ref(), &meta)?;
    write_json(&dir.join("history.json"), &history)?;
    let report = evaluate(&model, &data.split.test, tcfg.batch_size)?;
    write_report(dir, "report", &report, text)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct GridRow {
    n_experts: usize,
    top_k: usize,
    accuracy: f64,
    weighted_f1: f64,
}

pub fn train_cmd(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut base = cfg.train.clone();
    for v in parse_variants(&cfg.ablate)? {
        base = v.apply(&base);
    }
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = prepare_dataset(cfg)?;
    let dir = start_run(cfg)?;
    if cfg.expert_grid.is_empty() {
        let report = train_one(&dir, &base, &data, cfg.text_reports)?;
        print!("{}", report.render());
    } else {
        let mut rows = Vec::new();
        for &(n, k) in &cfg.expert_grid {
            let tcfg = AblationVariant::ExpertGrid { n_experts: n, top_k: k }.apply(&base);
            tcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let sub = dir.join(format!("n{n}-k{k}"));
            std::fs::create_dir_all(&sub)?;
            info!("expert grid: n = {n}, k = {k}");
            let r = train_one(&sub, &tcfg, &data, cfg.text_reports)?;
            println!("(n={n:>3}, k={k:>3})  accuracy {:.5}  weighted f1 {:.5}", r.accuracy, r.weighted_f1);
            rows.push(GridRow {
                n_experts: n,
                top_k: k,
                accuracy: r.accuracy,
                weighted_f1: r.weighted_f1,
            });
        }
        write_json(&dir.join("grid.json"), &rows)?;
    }
    Ok(dir)
}

/// Encodes `cfg.dataset` with the checkpoint's frozen statistics.
///
/// CSV rows are imputed with the label-free fill; a synthetic dataset is
/// regenerated and its test split used.
fn encode_for(cfg: &RunConfig, stats: Option<&PipelineStats>) -> Result<Vec<EncodedSample>, CliError> {
    match source(cfg)? {
        Source::Synthetic(n) => Ok(synthetic_split(n, cfg)?.test),
        Source::Csv(path) => {
            let stats = stats.ok_or_else(|| {
                CliError::Schema("checkpoint carries no pipeline statistics, so it cannot encode a CSV".into())
            })?;
            let current = schema(cfg);
            if stats.schema_hash != current.hash() {
                return Err(CliError::Schema(format!(
                    "schema-hash mismatch: checkpoint was fitted on schema {}, this toolkit uses {}",
                    stats.schema_hash,
                    current.hash()
                )));
            }
            let bytes = std::fs::read(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let parsed = parse_flow_reader(&bytes[..], &current)?;
            let filled = apply_imputers(&parsed.records, &stats.imputation, false);
            Ok(stats.encode(&filled)?)
        }
    }
}

pub fn evaluate_cmd(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf, CliError> {
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    let samples = encode_for(cfg, ckpt.pipeline.as_ref())?;
    let dir = start_run(cfg)?;
    let report = evaluate(&ckpt.model, &samples, cfg.train.batch_size)?;
    write_report(&dir, "report", &report, cfg.text_reports)?;
    print!("{}", report.render());
    Ok(dir)
}

pub fn gating_report_cmd(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf, CliError> {
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    let samples = encode_for(cfg, ckpt.pipeline.as_ref())?;
    let dir = start_run(cfg)?;
    let r = gating_report(&ckpt.model, &samples, cfg.train.batch_size)?;
    write_json(&dir.join("gating.json"), &r)?;
    println!("{} experts, top {} of each, {} samples", r.n_experts, r.top_k, r.samples);
    println!("{:>6} {:>12} {:>10} {:>12}", "expert", "importance", "selected", "load");
    for e in &r.experts {
        println!("{:>6} {:>12.4} {:>10} {:>12.4}", e.expert, e.importance, e.selections, e.load);
    }
    println!(
        "cv^2  importance {:.6}  selections {:.6}  load {:.6}",
        r.cv2_importance, r.cv2_selections, r.cv2_load
    );
    Ok(dir)
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut variants = vec![AblationVariant::Baseline];
    if cfg.ablate.is_empty() && cfg.expert_grid.is_empty() {
        variants.extend([AblationVariant::ZeroLosses, AblationVariant::NoMoe, AblationVariant::NoCnn]);
    }
    variants.extend(parse_variants(&cfg.ablate)?);
    variants.extend(
        cfg.expert_grid
            .iter()
            .map(|&(n_experts, top_k)| AblationVariant::ExpertGrid { n_experts, top_k }),
    );
    for v in &variants {
        v.apply(&cfg.train).validate().map_err(|e| CliError::Config(format!("{v}: {e}")))?;
    }
    let data = prepare_dataset(cfg)?;
    let dir = start_run(cfg)?;
    let mut runs: Vec<AblationRun> = Vec::new();
    println!("{:<22} {:>10} {:>10} {:>12}", "variant", "params", "accuracy", "weighted f1");
    for v in variants {
        info!("ablation variant {v}");
        let run = run_ablation::<f64>(&cfg.train, v, &data.split.train, &data.split.test)?;
        println!(
            "{:<22} {:>10} {:>10.5} {:>12.5}",
            v.to_string(),
            run.param_count,
            run.report.accuracy,
            run.report.weighted_f1
        );
        runs.push(run);
    }
    write_json(&dir.join("ablation.json"), &runs)?;
    Ok(dir)
}
