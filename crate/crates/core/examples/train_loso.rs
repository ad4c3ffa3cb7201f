//! End to end on a synthetic three-class set: features, leave-one-subject-out
//! training, pooled metrics.
//!
//! cargo run --release --example train_loso [epochs]

use std::time::Instant;

use epir::data::{extract_features, generate_synthetic, FeatureConfig, SynthSpec};
use epir::metrics::MetricsReport;
use epir::model::{DnsptConfig, ModelConfig};
use epir::report::confusion_csv;
use epir::train::{pooled_counts, prepare_samples, run_loso, AdamConfig, TrainConfig};

fn main() -> epir::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let dir = std::env::temp_dir().join("epir_train_loso");
    let manifest = generate_synthetic(&SynthSpec::new(3, 6, 8, 11), &dir)?;
    println!("{} samples from {} subjects in {}", manifest.len(), manifest.subjects().len(), dir.display());

    let t = Instant::now();
    let features = extract_features(&manifest, &FeatureConfig::default())?;
    let model = ModelConfig { dnspt: DnsptConfig { model_dim: 64, ..Default::default() }, ..Default::default() };
    let samples = prepare_samples(&manifest, &features, &model.dnspt)?;
    let train = TrainConfig { epochs, batch_size: 8, adam: AdamConfig { lr: 5e-4, ..Default::default() }, ..Default::default() };

    let folds = run_loso(&samples, &model, &train, None)?;
    for f in &folds {
        let curve = &f.train_loss_curve;
        println!("held out {}: loss {:.3} -> {:.3}", f.held_out_subject, curve[0], curve[curve.len() - 1]);
    }
    let counts = pooled_counts(&folds, manifest.num_classes())?;
    let report = MetricsReport::new(&counts, &manifest.class_names)?;
    println!("UF1 {:.4}  UAR {:.4}  in {:.1?}", report.uf1, report.uar, t.elapsed());
    print!("{}", confusion_csv(&counts, &manifest.class_names)?);
    Ok(())
}
