use proptest::prelude::*;

use super::*;
use crate::autodiff::Graph;
use crate::data::{gaussian_blobs, BlobConfig, EncodedSample, N_CLASSES};
use crate::nn::{Forward, Mode};
use crate::rng::RngState;
use crate::tensor::Tensor;

fn blobs(n: usize, seed: u64) -> Vec<EncodedSample> {
    gaussian_blobs(&BlobConfig {
        n_samples: n,
        seed,
        ..BlobConfig::default()
    })
}

fn small_config() -> TrainConfig {
    TrainConfig {
        n_experts: 8,
        top_k: 2,
        batch_size: 32,
        max_epochs: 1,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_match_experimental_setup() {
    let c = TrainConfig::default();
    assert_eq!((c.batch_size, c.max_epochs, c.n_experts, c.top_k), (1024, 40, 128, 32));
    assert_eq!(c.alpha, 0.1);
    assert_eq!(c.optimizer.lr, 1e-3);
    assert!(!c.disable_balancing_losses && !c.disable_moe && !c.disable_cnn);
    c.validate().unwrap();
    let m = c.model_config();
    assert_eq!(m.architecture, Architecture::CnnMoe);
    assert_eq!((m.moe.input_dim, m.moe.n_classes), (128, 9));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { alpha: f64::NAN, ..TrainConfig::default() },
        TrainConfig { top_k: 200, ..TrainConfig::default() },
        TrainConfig {
            optimizer: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            ..TrainConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

fn ce_one_logits(g: &mut Graph<f64>) -> crate::autodiff::Var {
    // softmax([0, ln(e - 1)])[0] = 1/e, so the cross-entropy is exactly 1
    let x = (std::f64::consts::E - 1.0).ln();
    g.leaf(Tensor::new(vec![1, 2], vec![0.0, x]).unwrap())
}

#[test]
fn total_loss_arithmetic() {
    let mut g = Graph::<f64>::new();
    let logits = ce_one_logits(&mut g);
    let imp = g.leaf(Tensor::scalar(0.5));
    let load = g.leaf(Tensor::scalar(0.5));
    let parts = total_loss(&mut g, logits, &[0], Some(imp), Some(load), 0.1).unwrap();
    assert!((g.scalar(parts.cross_entropy) - 1.0).abs() < 1e-14);
    assert!((g.scalar(parts.total) - 1.1).abs() < 1e-14);

    let parts = total_loss(&mut g, logits, &[0], Some(imp), Some(load), 0.0).unwrap();
    assert_eq!(g.scalar(parts.total), g.scalar(parts.cross_entropy));
}

#[test]
fn uniform_gates_leave_only_cross_entropy() {
    // zero-initialized router and k = n: uniform gates, no balancing penalty
    let cfg = TrainConfig {
        n_experts: 4,
        top_k: 4,
        noise_enabled: false,
        ..small_config()
    };
    let model = Model::<f64>::new(cfg.model_config(), 1);
    let data = blobs(18, 1);
    let mut g = Graph::new();
    let x = g.constant(batch_tensor::<f64>(&data));
    let mut f = Forward::new(&mut g, Mode::Train);
    let out = model.forward(&mut f, x, None).unwrap();
    assert!(out.load_loss.is_none());
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    let parts = total_loss(f.graph, out.logits, &labels, out.importance_loss, out.load_loss, 0.1).unwrap();
    assert_eq!(f.graph.scalar(out.importance_loss.unwrap()), 0.0);
    assert_eq!(f.graph.scalar(parts.total), f.graph.scalar(parts.cross_entropy));
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = crate::nn::ParamStore::<f64>::new();
    let id = store.add("p", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
    let mut adam = Adam::new(AdamConfig::default(), &store);
    store.get_mut(id).grad = Some(vec![0.3, -4.0, 0.0]);
    adam.step(&mut store);
    let p = store.get(id).data();
    // m̂ = g and v̂ = g², so the step is lr · g / (|g| + eps)
    let expect = |p0: f64, g: f64| p0 - 1e-3 * g / (g.abs() + 1e-8);
    assert!((p[0] - expect(1.0, 0.3)).abs() < 1e-15);
    assert!((p[1] - expect(-2.0, -4.0)).abs() < 1e-15);
    assert_eq!(p[2], 0.5);
    // no gradient: untouched
    adam.step(&mut store);
    assert!((store.get(id).data()[0] - expect(1.0, 0.3)).abs() < 1e-15);
}

fn report(labels: &[usize], preds: &[usize]) -> EvalReport {
    EvalReport::from_predictions(labels, preds).unwrap()
}

#[test]
fn perfect_predictions() {
    let labels: Vec<usize> = (0..27).map(|i| i % 9).collect();
    let r = report(&labels, &labels);
    assert_eq!((r.accuracy, r.weighted_f1), (1.0, 1.0));
    assert!(r.classes.iter().all(|c| c.f1 == 1.0 && c.support == 3));
    assert_eq!(r.classes[0].class, "Benign");
    assert_eq!(r.classes[8].class, "Slow rate DoS");
}

#[test]
fn two_class_hand_case() {
    // class 0: TP 8, FN 1; class 1 rows predicted as 0: FP 2; TN 9
    let mut labels = vec![0; 9];
    labels.extend([1; 11]);
    let mut preds = vec![0; 8];
    preds.push(1);
    preds.extend([0, 0]);
    preds.extend([1; 9]);
    let r = report(&labels, &preds);
    let a = &r.classes[0];
    assert!((a.precision - 0.8).abs() < 1e-12);
    assert!((a.recall - 8.0 / 9.0).abs() < 1e-12);
    assert!((a.f1 - 16.0 / 19.0).abs() < 1e-12);
    assert!((r.accuracy - 17.0 / 20.0).abs() < 1e-15);
    assert!(r.classes[2].no_predictions && r.classes[2].precision == 0.0 && r.classes[2].f1 == 0.0);
}

#[test]
fn weighted_f1_arithmetic() {
    let m = |support, f1| ClassMetrics {
        class: String::new(),
        precision: 0.0,
        recall: 0.0,
        f1,
        support,
        no_predictions: false,
    };
    assert!((weighted_f1(&[m(90, 1.0), m(10, 0.5)]) - 0.95).abs() < 1e-15);
    assert_eq!(weighted_f1(&[]), 0.0);
}

#[test]
fn metric_errors() {
    assert_eq!(EvalReport::from_predictions(&[], &[]), Err(MetricsError::Empty));
    assert_eq!(EvalReport::from_predictions(&[0], &[0, 1]), Err(MetricsError::Length(1, 2)));
    assert_eq!(EvalReport::from_predictions(&[9], &[0]), Err(MetricsError::Class(9)));
    let model = Model::<f64>::new(small_config().model_config(), 0);
    assert!(matches!(evaluate(&model, &[], 8), Err(TrainError::Metrics(MetricsError::Empty))));
}

#[test]
fn report_json_round_trips() {
    let r = report(&[0, 1, 2, 2, 5], &[0, 2, 2, 1, 5]);
    let s = serde_json::to_string(&r).unwrap();
    let back: EvalReport = serde_json::from_str(&s).unwrap();
    assert_eq!(back, r);
    assert_eq!(serde_json::to_string(&back).unwrap(), s);
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(pairs in prop::collection::vec((0usize..9, 0usize..9), 1..200)) {
        let (labels, preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = report(&labels, &preds);
        let trace: usize = (0..9).map(|c| r.confusion[c][c]).sum();
        prop_assert_eq!(r.accuracy, trace as f64 / labels.len() as f64);
        let supported: Vec<f64> = r.classes.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
        let lo = supported.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = supported.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.weighted_f1 >= lo - 1e-12 && r.weighted_f1 <= hi + 1e-12);
        for c in &r.classes {
            let h = if c.precision + c.recall > 0.0 { 2.0 * c.precision * c.recall / (c.precision + c.recall) } else { 0.0 };
            prop_assert_eq!(c.f1, h);
        }
    }
}

#[test]
fn ablation_architectures() {
    let base = small_config();
    let no_cnn = Model::<f64>::new(AblationVariant::NoCnn.apply(&base).model_config(), 0);
    assert_eq!(no_cnn.param_count(), 711);
    assert!(no_cnn.backbone.is_none());

    let no_moe = Model::<f64>::new(AblationVariant::NoMoe.apply(&base).model_config(), 0);
    match &no_moe.head {
        Head::Dense(d) => assert_eq!((d.in_features, d.out_features), (128, 9)),
        Head::Moe(_) => panic!("expected a dense head"),
    }
    let data = blobs(6, 0);
    let mut g = Graph::new();
    let x = g.constant(batch_tensor::<f64>(&data));
    let mut f = Forward::new(&mut g, Mode::Train);
    let out = no_moe.forward(&mut f, x, None).unwrap();
    assert_eq!(f.graph.shape(out.logits), &[6, 9]);
    assert!(out.importance_loss.is_none() && out.load_loss.is_none());

    let zero = AblationVariant::ZeroLosses.apply(&base).model_config();
    assert_eq!((zero.moe.w_importance, zero.moe.w_load), (0.0, 0.0));

    let grid = AblationVariant::ExpertGrid { n_experts: 16, top_k: 4 };
    let m = Model::<f64>::new(grid.apply(&base).model_config(), 0);
    let Head::Moe(moe) = &m.head else { panic!("expected experts") };
    assert_eq!(moe.experts.len(), 16);
    let data = blobs(20, 2);
    let mut g = Graph::new();
    let x = g.constant(batch_tensor::<f64>(&data));
    let mut f = Forward::new(&mut g, Mode::Train);
    let mut rng = RngState::new(5);
    let out = m.forward(&mut f, x, Some(&mut rng)).unwrap();
    let gates = f.graph.data(out.decision.unwrap().gates).to_vec();
    for row in gates.chunks(16) {
        assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 4);
    }
}

#[test]
fn variants_change_only_their_fields() {
    let base = small_config();
    let cases = [
        (AblationVariant::Baseline, vec![]),
        (AblationVariant::ZeroLosses, vec!["disable_balancing_losses"]),
        (AblationVariant::NoMoe, vec!["disable_moe"]),
        (AblationVariant::NoCnn, vec!["disable_cnn"]),
        (AblationVariant::ExpertGrid { n_experts: 32, top_k: 4 }, vec!["n_experts", "top_k"]),
    ];
    for (v, fields) in cases {
        let mut diff = config_diff(&base, &v.apply(&base));
        diff.sort();
        assert_eq!(diff, fields, "{v}");
    }
}

#[test]
fn variant_names() {
    for v in ["zero_losses", "no_moe", "no_cnn", "baseline"] {
        assert_eq!(v.parse::<AblationVariant>().unwrap().to_string(), v);
    }
    assert_eq!(
        "expert_grid(16,4)".parse::<AblationVariant>().unwrap(),
        AblationVariant::ExpertGrid { n_experts: 16, top_k: 4 }
    );
    assert!(matches!("no_router".parse::<AblationVariant>(), Err(TrainError::UnknownVariant(_))));
    assert_eq!(parse_expert_grid("128x32,16x4").unwrap(), vec![(128, 32), (16, 4)]);
    assert_eq!(parse_expert_grid("(64,16);(32,4)").unwrap(), vec![(64, 16), (32, 4)]);
    assert!(parse_expert_grid("64").is_err());
    assert_eq!(EXPERT_GRID[0], (128, 32));
}

#[test]
fn no_moe_history_has_zero_balancing_losses() {
    let cfg = AblationVariant::NoMoe.apply(&small_config());
    let mut m = Model::<f64>::new(cfg.model_config(), cfg.seed);
    let h = train(&mut m, &blobs(90, 1), &cfg).unwrap();
    assert!(h.epochs.iter().all(|e| e.importance_loss == 0.0 && e.load_loss == 0.0));
}

#[test]
fn alpha_zero_without_noise_is_pure_cross_entropy() {
    let cfg = TrainConfig {
        alpha: 0.0,
        noise_enabled: false,
        n_experts: 4,
        top_k: 4,
        max_epochs: 2,
        ..small_config()
    };
    let mut m = Model::<f64>::new(cfg.model_config(), cfg.seed);
    let h = train(&mut m, &blobs(90, 1), &cfg).unwrap();
    for e in &h.epochs {
        assert_eq!(e.total_loss, e.cross_entropy);
        assert!(e.total_loss.is_finite());
    }
}

#[test]
fn linear_model_learns_blobs() {
    let cfg = TrainConfig {
        max_epochs: 5,
        optimizer: AdamConfig { lr: 0.05, ..AdamConfig::default() },
        ..AblationVariant::NoCnn.apply(&small_config())
    };
    let data = blobs(450, 4);
    let mut m = Model::<f64>::new(cfg.model_config(), cfg.seed);
    let h = train(&mut m, &data, &cfg).unwrap();
    assert!(h.epochs[4].total_loss < h.epochs[0].total_loss);
    assert!(evaluate(&m, &data, 64).unwrap().accuracy > 0.99);
}

#[test]
fn nan_parameters_abort_with_diagnostic() {
    let cfg = AblationVariant::NoCnn.apply(&small_config());
    let mut m = Model::<f64>::new(cfg.model_config(), cfg.seed);
    m.store.entries_mut()[0].tensor.data_mut()[0] = f64::NAN;
    let err = train(&mut m, &blobs(64, 0), &cfg).unwrap_err();
    match &err {
        TrainError::NonFinite { component, epoch, step, .. } => {
            assert_eq!((*component, *epoch, *step), ("cross-entropy", 1, 1));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("cross-entropy"));
}

#[test]
fn same_seed_same_checkpoint() {
    let cfg = TrainConfig { max_epochs: 2, ..small_config() };
    let data = blobs(96, 7);
    let run = |seed| {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let mut m = Model::<f64>::new(cfg.model_config(), seed);
        train(&mut m, &data, &cfg).unwrap();
        checkpoint_bytes(&m, None, &CheckpointMeta { seed, ..CheckpointMeta::default() })
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

fn trained_small() -> (Model<f64>, Vec<EncodedSample>) {
    let cfg = small_config();
    let data = blobs(64, 9);
    let mut m = Model::<f64>::new(cfg.model_config(), cfg.seed);
    train(&mut m, &data, &cfg).unwrap();
    (m, data)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (m, data) = trained_small();
    let meta = CheckpointMeta {
        epochs_run: 1,
        seed: 3,
        final_epoch: None,
        train_config: Some(small_config()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &m, None, &meta).unwrap();
    let back = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(back.meta, meta);
    let before = m.logits(&data, 16).unwrap();
    let after = back.model.logits(&data, 16).unwrap();
    assert_eq!(before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), after.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert!(matches!(load_checkpoint::<f32>(&path), Err(CheckpointError::Dtype { .. })));
}

#[test]
fn f32_checkpoint_round_trip() {
    let cfg = small_config();
    let data = blobs(64, 9);
    let mut m = Model::<f32>::new(cfg.model_config(), cfg.seed);
    train(&mut m, &data, &cfg).unwrap();
    let bytes = checkpoint_bytes(&m, None, &CheckpointMeta::default());
    let back = checkpoint_from_bytes::<f32>(&bytes).unwrap();
    assert_eq!(m.logits(&data, 64).unwrap(), back.model.logits(&data, 64).unwrap());
}

#[test]
fn corrupt_checkpoints_are_refused() {
    let (m, _) = trained_small();
    let bytes = checkpoint_bytes(&m, None, &CheckpointMeta::default());
    assert!(matches!(checkpoint_from_bytes::<f64>(&bytes[..bytes.len() / 2]), Err(CheckpointError::Integrity(_))));
    let mut flipped = bytes.clone();
    flipped[bytes.len() - 100] ^= 0x10;
    assert!(matches!(checkpoint_from_bytes::<f64>(&flipped), Err(CheckpointError::Integrity(_))));
    assert!(matches!(checkpoint_from_bytes::<f64>(b"garbage!"), Err(CheckpointError::Magic)));

    // a future version with a valid checksum
    use sha2::{Digest, Sha256};
    let mut body = bytes[..bytes.len() - 32].to_vec();
    body[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    assert!(matches!(
        checkpoint_from_bytes::<f64>(&body),
        Err(CheckpointError::Version { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));
}

#[test]
fn default_checkpoint_records_expert_counts() {
    let cfg = TrainConfig::default();
    let m = Model::<f64>::new(cfg.model_config(), 0);
    let back = checkpoint_from_bytes::<f64>(&checkpoint_bytes(&m, None, &CheckpointMeta::default())).unwrap();
    assert_eq!((back.model.config.moe.n_experts, back.model.config.moe.top_k), (128, 32));
}

#[test]
fn gating_report_counts() {
    let (m, data) = trained_small();
    let r = gating_report(&m, &data, 16).unwrap();
    assert_eq!(r.experts.len(), 8);
    assert_eq!(r.experts.iter().map(|e| e.selections).sum::<usize>(), 2 * data.len());
    assert!((r.experts.iter().map(|e| e.importance).sum::<f64>() - data.len() as f64).abs() < 1e-9);
    assert!(r.cv2_importance.is_finite() && r.cv2_load.is_finite() && r.cv2_selections.is_finite());

    let sym = TrainConfig { n_experts: 6, top_k: 6, ..small_config() };
    let m = Model::<f64>::new(sym.model_config(), 0);
    let r = gating_report(&m, &data, 64).unwrap();
    assert!(r.cv2_importance < 1e-12 && r.cv2_selections < 1e-12 && r.cv2_load < 1e-12);

    let dense = Model::<f64>::new(AblationVariant::NoCnn.apply(&small_config()).model_config(), 0);
    assert!(matches!(gating_report(&dense, &data, 8), Err(TrainError::NoExperts)));
}

#[test]
fn gating_cv_matches_graph_op() {
    let v = [3.0, 1.0, 0.5, 2.5];
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(vec![4], v.to_vec()).unwrap());
    let c = g.cv_squared(x);
    assert_eq!(cv_squared(&v), g.scalar(c));
    assert_eq!(N_CLASSES, 9);
}
