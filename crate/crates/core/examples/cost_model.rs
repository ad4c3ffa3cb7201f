//! Closed-form FLOPs per integration rate, checked against counting the
//! operations of a real forward pass.

use epir::model::{DnsptConfig, ModelConfig};
use epir::train::{cost_report, instrumented_flops};

fn main() -> epir::Result<()> {
    let base = ModelConfig { dnspt: DnsptConfig { model_dim: 64, ..Default::default() }, ..Default::default() };
    // with 16 patches and 6 merge blocks, a rate rounds to whole pairs per block
    println!("{:>6} {:>6} {:>9} {:>10} {:>14} {:>14} {:>10}", "asked", "pairs", "effective", "params", "encoder", "total", "counted");
    for rate in [0.0, 0.3, 0.6, 0.8] {
        let cfg = ModelConfig { pairs_per_block: base.pairs_for_rate(rate), ..base.clone() };
        let r = cost_report(&cfg)?;
        let counted = instrumented_flops(&cfg, 0)?.total();
        println!(
            "{:>6.2} {:>6} {:>9.3} {:>10} {:>14} {:>14} {:>10}",
            rate,
            cfg.pairs_per_block,
            cfg.integration_rate(),
            r.param_count,
            r.encoder_flops(),
            r.flops_per_sample,
            if counted == r.flops_per_sample { "exact" } else { "differs" }
        );
    }
    Ok(())
}
