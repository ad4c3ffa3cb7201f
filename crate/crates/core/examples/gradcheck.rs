//! Finite-difference check of the full training loss on a tiny model.

use epir::loss::{total_loss, ContrastiveConfig};
use epir::model::{DnsptConfig, Epir, ModelConfig};
use epir::nn::{rng_from_seed, Module};
use epir::tensor::grad_check;
use epir::Tensor;
use rand_distr::{Distribution, StandardNormal};

fn main() -> epir::Result<()> {
    let cfg = ModelConfig {
        dnspt: DnsptConfig { input_size: 8, patch_size: 4, shift_offset: 2, model_dim: 8 },
        heads: 2,
        integration_blocks: 2,
        extractor_blocks: 2,
        pairs_per_block: 1,
        num_classes: 3,
        ..Default::default()
    };
    let mut model = Epir::new(cfg.clone(), 7)?;
    let (n, pd) = (cfg.dnspt.num_patches(), cfg.dnspt.patch_dim());
    let mut rng = rng_from_seed(8);
    let data: Vec<f64> = (0..2 * n * pd).map(|_| StandardNormal.sample(&mut rng)).collect();
    let patches = Tensor::new(data, &[2, n, pd])?;
    let labels = [0, 2];

    let t = std::time::Instant::now();
    let report = grad_check(
        &mut model,
        |m: &Epir| {
            let out = m.forward(&patches)?;
            total_loss(&out.logits, &out.embedding, &labels, &ContrastiveConfig::default())
        },
        1e-5,
    )?;
    println!("{} parameters, {} entries checked in {:.2?}", model.param_count(), report.entries, t.elapsed());
    println!("max relative error {:.2e} at {:?}", report.max_rel_error, report.worst);
    Ok(())
}
