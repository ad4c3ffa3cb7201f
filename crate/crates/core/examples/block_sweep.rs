//! Depth ablation on a small synthetic set. Block counts too small to
//! hold both stages come back flagged instead of failing the sweep.

use epir::data::{extract_features, generate_synthetic, FeatureConfig, SynthSpec};
use epir::model::{DnsptConfig, ModelConfig};
use epir::train::{prepare_samples, sweep, write_sweep_csv, AdamConfig, SweepAxis, TrainConfig};

fn main() -> epir::Result<()> {
    let dir = std::env::temp_dir().join("epir_block_sweep");
    let manifest = generate_synthetic(&SynthSpec::new(3, 3, 6, 5), &dir)?;
    let features = extract_features(&manifest, &FeatureConfig::default())?;
    let model = ModelConfig { dnspt: DnsptConfig { model_dim: 32, ..Default::default() }, ..Default::default() };
    let samples = prepare_samples(&manifest, &features, &model.dnspt)?;
    let train = TrainConfig { epochs: 10, batch_size: 8, adam: AdamConfig { lr: 5e-4, ..Default::default() }, ..Default::default() };

    let rows = sweep(SweepAxis::NumBlocks, &[1.0, 3.0, 7.0, 13.0], &model, &train, &samples)?;
    write_sweep_csv(&rows, std::io::stdout())
}
