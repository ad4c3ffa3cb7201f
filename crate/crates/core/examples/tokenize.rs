//! Diagonal shifted-patch tokenization of one flow feature.

use epir::flow::FlowField;
use epir::model::dnspt::{diagonal_shift, patchify, DIAGONALS};
use epir::model::{stack_patches, Dnspt, DnsptConfig};
use epir::nn::rng_from_seed;

fn main() -> epir::Result<()> {
    // a tiny 4x4 map makes the shifts easy to read
    let map: Vec<f64> = (0..16).map(|i| i as f64).collect();
    let shifted = diagonal_shift(&map, 1, 4, 1)?;
    println!("original");
    for row in map.chunks(4) {
        println!("  {row:?}");
    }
    for (name, s) in DIAGONALS.iter().zip(&shifted) {
        println!("shift (dx, dy) = {name:?}");
        for row in s.chunks(4) {
            println!("  {row:?}");
        }
    }

    let cfg = DnsptConfig { model_dim: 32, ..Default::default() };
    let n = cfg.input_size * cfg.input_size;
    let ramp = |k: f64| (0..n).map(|i| k * (i % cfg.input_size) as f64).collect::<Vec<_>>();
    let field = FlowField { width: cfg.input_size, height: cfg.input_size, u: ramp(0.1), v: ramp(-0.05), strain: vec![0.1; n] };
    let patches = patchify(&field, &cfg)?;
    println!("{} patches of {} values", cfg.num_patches(), cfg.patch_dim());

    let tokenizer = Dnspt::new(cfg, &mut rng_from_seed(0))?;
    let tokens = tokenizer.forward(&stack_patches(&[patches.as_slice()], &cfg)?)?;
    println!("token sequence {:?} (class token first)", tokens.shape());
    Ok(())
}
