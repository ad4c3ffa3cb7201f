use epir::loss::{contrastive_loss, ContrastiveConfig};
use epir::metrics::ConfusionCounts;
use epir::model::{DnsptConfig, Epir, ModelConfig};
use epir::nn::{derive_seed, normal, rng_from_seed, Module};
use epir::report::{confusion_csv, normalized_confusion_csv, predictions_csv};
use epir::tensor::{Real, Tensor};
use epir::train::{
    evaluate_fold, instrumented_flops, cost_report, loso_folds, pooled_counts, predict_samples, run_loso, train_fold, Adam, AdamConfig,
    FoldResult, Prediction, Sample, TrainConfig,
};
use epir::Error;
use proptest::prelude::*;
use proptest::test_runner::Config;
use rand::Rng;

fn toy_model() -> ModelConfig {
    ModelConfig {
        dnspt: DnsptConfig { input_size: 8, patch_size: 4, shift_offset: 2, model_dim: 12 },
        integration_blocks: 1,
        extractor_blocks: 1,
        pairs_per_block: 1,
        num_classes: 2,
        ..Default::default()
    }
}

// class 0 and class 1 differ by the sign of a shared offset
fn toy_samples(cfg: &ModelConfig, subjects: usize, per: usize, seed: u64) -> Vec<Sample> {
    let len = cfg.dnspt.num_patches() * cfg.dnspt.patch_dim();
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for s in 0..subjects {
        for k in 0..per {
            let label = k % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let patches = normal(&mut rng, 0.3, len).into_iter().map(|v| v + sign).collect();
            out.push(Sample { id: format!("s{s}_{k}"), subject: format!("s{s}"), label, patches });
        }
    }
    out
}

fn oracle_uf1_uar(pred: &[usize], truth: &[usize], c: usize) -> (f64, f64) {
    let mut f1 = 0.0;
    let (mut recall, mut supported) = (0.0, 0);
    for k in 0..c {
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == k && **t == k).count() as f64;
        let fp = pred.iter().zip(truth).filter(|(p, t)| **p == k && **t != k).count() as f64;
        let fneg = pred.iter().zip(truth).filter(|(p, t)| **p != k && **t == k).count() as f64;
        if 2.0 * tp + fp + fneg > 0.0 {
            f1 += 2.0 * tp / (2.0 * tp + fp + fneg);
        }
        if tp + fneg > 0.0 {
            recall += tp / (tp + fneg);
            supported += 1;
        }
    }
    (f1 / c as f64, recall / supported as f64)
}

#[test]
fn metrics_match_a_brute_force_recount() {
    let mut rng = rng_from_seed(99);
    for trial in 0..10_000 {
        let c = rng.random_range(2..6);
        let n = rng.random_range(1..40);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let counts = ConfusionCounts::from_predictions(&pred, &truth, c).unwrap();
        let (uf1, uar) = oracle_uf1_uar(&pred, &truth, c);
        assert!((counts.uf1() - uf1).abs() < 1e-12, "trial {trial}");
        assert!((counts.uar().unwrap() - uar).abs() < 1e-12, "trial {trial}");
        assert!((0.0..=1.0).contains(&uf1) && (0.0..=1.0).contains(&uar));

        // confusion CSV against a recount of the same pairs
        let names: Vec<String> = (0..c).map(|k| format!("k{k}")).collect();
        let text = confusion_csv(&counts, &names).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for (t, row) in r.records().enumerate() {
            let row = row.unwrap();
            for p in 0..c {
                let want = pred.iter().zip(&truth).filter(|(pp, tt)| **pp == p && **tt == t).count();
                assert_eq!(row[p + 1].parse::<usize>().unwrap(), want);
            }
        }
    }
}

#[test]
fn pooling_ignores_order_and_fold_partition() {
    let mut rng = rng_from_seed(5);
    let preds: Vec<Prediction> =
        (0..60).map(|i| Prediction { sample_id: format!("x{i}"), predicted: rng.random_range(0..3), label: rng.random_range(0..3) }).collect();
    let fold = |v: &[Prediction]| FoldResult { held_out_subject: "s".into(), predictions: v.to_vec(), train_loss_curve: vec![] };
    let one = pooled_counts(&[fold(&preds)], 3).unwrap();
    let split = pooled_counts(&[fold(&preds[..17]), fold(&preds[17..40]), fold(&preds[40..])], 3).unwrap();
    let mut rev = preds.clone();
    rev.reverse();
    let reversed = pooled_counts(&[fold(&rev)], 3).unwrap();
    assert_eq!(one, split);
    assert_eq!(one, reversed);
}

#[test]
fn report_csvs_round_trip() {
    let counts = ConfusionCounts::from_predictions(&[0, 1, 2, 2, 1], &[0, 1, 1, 2, 2], 3).unwrap();
    let names = vec!["a".to_string(), "b,c".to_string(), "d".to_string()];
    for text in [confusion_csv(&counts, &names).unwrap(), normalized_confusion_csv(&counts, &names).unwrap()] {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["true", "a", "b,c", "d"]);
        assert_eq!(r.records().count(), 3);
    }
    let fold = FoldResult {
        held_out_subject: "s1".into(),
        predictions: vec![Prediction { sample_id: "q".into(), predicted: 1, label: 2 }],
        train_loss_curve: vec![1.0],
    };
    let text = predictions_csv(&[fold], &names).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let row = r.records().next().unwrap().unwrap();
    assert_eq!(row.iter().collect::<Vec<_>>(), ["0", "s1", "q", "d", "b,c"]);
}

proptest! {
    #![proptest_config(Config { cases: 64, failure_persistence: None, ..Config::default() })]

    #[test]
    fn contrastive_loss_is_nonnegative_and_scale_free(
        emb in prop::collection::vec(-3.0f64..3.0, 12),
        scale in prop::collection::vec(0.1f64..10.0, 4),
        labels in prop::collection::vec(0usize..3, 4),
    ) {
        prop_assume!(emb.chunks(3).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let cfg = ContrastiveConfig::default();
        let a = contrastive_loss(&Tensor::new(emb.clone(), &[4, 3]).unwrap(), &labels, &cfg).unwrap().item().unwrap();
        let scaled: Vec<Real> = emb.iter().enumerate().map(|(i, v)| v * scale[i / 3]).collect();
        let b = contrastive_loss(&Tensor::new(scaled, &[4, 3]).unwrap(), &labels, &cfg).unwrap().item().unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn contrastive_loss_vanishes_on_ideal_embeddings() {
    // same label: identical direction; different labels: orthogonal (cos 0 <= alpha)
    let emb = Tensor::new(vec![1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 3.0], &[4, 2]).unwrap();
    let loss = contrastive_loss(&emb, &[0, 0, 1, 1], &ContrastiveConfig::default()).unwrap();
    assert_eq!(loss.item().unwrap(), 0.0);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let cfg = toy_model();
        let samples = toy_samples(&cfg, 1, 6, 3);
        let refs: Vec<&Sample> = samples.iter().collect();
        let train = TrainConfig { epochs: 3, batch_size: 4, adam: AdamConfig { lr: 1e-3, ..Default::default() }, ..Default::default() };
        let (model, curve) = train_fold(&refs, &cfg, &train, 42).unwrap();
        (model.parameters().iter().flat_map(|p| p.data().to_vec()).collect::<Vec<_>>(), curve)
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_moves_parameters_against_the_gradient() {
    let cfg = toy_model();
    let mut model = Epir::new(cfg, 1).unwrap();
    let w0 = model.head.weight.data().to_vec();
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &model.parameters());
    let loss = model.head.weight.tensor().sum();
    model.zero_grad();
    loss.backward().unwrap();
    opt.step(model.parameters_mut()).unwrap();
    // first bias-corrected step is lr * sign(grad) for a constant gradient
    for (a, b) in model.head.weight.data().iter().zip(&w0) {
        assert!((b - a - 0.01).abs() < 1e-6);
    }
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let cfg = toy_model();
    let mut model = Epir::new(cfg, 1).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &model.parameters());
    let loss = model.head.weight.tensor().scale(Real::NAN).sum();
    model.zero_grad();
    loss.backward().unwrap();
    match opt.step(model.parameters_mut()) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("head.weight"), "{msg}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn toy_problem_is_learned() {
    let cfg = toy_model();
    let samples = toy_samples(&cfg, 1, 8, 7);
    let refs: Vec<&Sample> = samples.iter().collect();
    let train = TrainConfig { epochs: 30, batch_size: 8, adam: AdamConfig { lr: 1e-3, ..Default::default() }, ..Default::default() };
    let (model, curve) = train_fold(&refs, &cfg, &train, 1).unwrap();
    assert!(curve[29] < curve[0], "{curve:?}");
    let preds = predict_samples(&model, &refs).unwrap();
    assert!(preds.iter().zip(&samples).all(|(p, s)| *p == s.label));
}

#[test]
fn zero_head_predicts_the_first_class() {
    let cfg = toy_model();
    let samples = toy_samples(&cfg, 1, 5, 8);
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut model = Epir::new(cfg, 2).unwrap();
    let n = model.head.weight.numel();
    model.head.weight.set_data(vec![0.0; n]).unwrap();
    model.head.bias.as_mut().unwrap().set_data(vec![0.0; 2]).unwrap();
    let r = evaluate_fold(&model, "s0", &refs, vec![]).unwrap();
    assert!(r.predictions.iter().all(|p| p.predicted == 0));
}

#[test]
fn loso_partitions_the_samples() {
    let subjects = ["b", "a", "c", "a", "b", "b"];
    let folds = loso_folds(&subjects).unwrap();
    assert_eq!(folds.len(), 3);
    let mut tested: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
    tested.sort_unstable();
    assert_eq!(tested, (0..6).collect::<Vec<_>>());
    for f in &folds {
        assert!(f.train.iter().all(|&i| subjects[i] != f.subject));
        assert!(f.test.iter().all(|&i| subjects[i] == f.subject));
        assert_eq!(f.train.len() + f.test.len(), 6);
    }
    assert!(matches!(loso_folds(&["a", "a"]), Err(Error::LosoInfeasible(1))));
}

#[test]
fn loso_is_reproducible_and_independent_of_workers() {
    let cfg = toy_model();
    let samples = toy_samples(&cfg, 3, 4, 9);
    let train = |workers| TrainConfig { epochs: 2, batch_size: 4, workers, ..Default::default() };
    let a = run_loso(&samples, &cfg, &train(1), None).unwrap();
    let b = run_loso(&samples, &cfg, &train(3), None).unwrap();
    assert_eq!(a, b);
    assert_ne!(derive_seed(0, &[0]), derive_seed(0, &[1]));
}

#[test]
fn closed_form_cost_matches_counted_operations() {
    for pairs in [0, 1, 2] {
        let cfg = ModelConfig { pairs_per_block: pairs, ..toy_model() };
        let analytic = cost_report(&cfg).unwrap();
        let counted = instrumented_flops(&cfg, 3).unwrap().total();
        let rel = (analytic.flops_per_sample as f64 - counted as f64).abs() / counted as f64;
        assert!(rel < 0.02, "pairs {pairs}: {} vs {counted}", analytic.flops_per_sample);
    }
}
