//! Parameter and FLOP accounting. FLOPs count two per multiply-accumulate
//! plus the per-element costs the tensor ops report, for one sample.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Epir, ModelConfig};
use crate::nn::{normal, rng_from_seed, Module};
use crate::tensor::{count_flops, flops, FlopCount, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub name: String,
    /// Tokens entering the stage, class token included.
    pub tokens: usize,
    pub matmul_flops: u64,
    pub other_flops: u64,
}

impl StageCost {
    pub fn flops(&self) -> u64 {
        self.matmul_flops + self.other_flops
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub param_count: usize,
    pub flops_per_sample: u64,
    pub stages: Vec<StageCost>,
}

impl CostReport {
    /// FLOPs of every block before the final one (integration and extractor).
    pub fn encoder_flops(&self) -> u64 {
        self.stages.iter().filter(|s| s.name.starts_with("encoder")).map(StageCost::flops).sum()
    }
}

struct BlockShape {
    n_in: usize,
    n_out: usize,
    residual: bool,
    merged: bool,
}

fn block_cost(name: String, s: BlockShape, d: u64, heads: u64) -> StageCost {
    let (n, m) = (s.n_in as u64, s.n_out as u64);
    // width of all heads together; equals d when the heads divide it
    let inner = heads * (d / heads);
    let matmul = 2 * (3 * n * d * inner + 2 * n * n * inner + n * inner * d) + 16 * m * d * d;
    let mut other = flops::LAYER_NORM_PER_ELEM * n * d
        + 5 // temperature: softplus and offset on a scalar
        + heads * (2 + flops::SOFTMAX_PER_ELEM) * n * n // scale, mask, softmax
        + n * d; // output bias
    if s.residual {
        other += n * d;
    }
    if s.merged {
        other += m * d;
    }
    other += flops::LAYER_NORM_PER_ELEM * m * d + 4 * m * d + flops::GELU_PER_ELEM * 4 * m * d + m * d + m * d;
    StageCost { name, tokens: s.n_in, matmul_flops: matmul, other_flops: other }
}

/// Closed-form cost of one forward pass. The parameter count comes from
/// enumerating the parameters of a freshly built model.
pub fn cost_report(cfg: &ModelConfig) -> Result<CostReport> {
    cfg.validate()?;
    let param_count = Epir::new(cfg.clone(), 0)?.param_count();
    let d = cfg.dnspt.model_dim as u64;
    let heads = cfg.heads as u64;
    let n0 = cfg.dnspt.num_patches() as u64;
    let pd = cfg.dnspt.patch_dim() as u64;
    let schedule = cfg.token_schedule()?;

    let mut stages = vec![StageCost {
        name: "tokenizer".into(),
        tokens: n0 as usize,
        matmul_flops: 2 * n0 * pd * d,
        other_flops: flops::LAYER_NORM_PER_ELEM * n0 * pd + n0 * d + flops::LAYER_NORM_PER_ELEM * n0 * d + d + (n0 + 1) * d,
    }];
    let encoder = cfg.integration_blocks + cfg.extractor_blocks;
    for l in 0..encoder {
        let merged = l < cfg.integration_blocks && cfg.pairs_per_block > 0;
        let shape = BlockShape {
            n_in: schedule[l],
            n_out: if l < cfg.integration_blocks { schedule[l + 1] } else { schedule[l] },
            residual: l > 0 || cfg.uniform_residual,
            merged,
        };
        let stage = if l < cfg.integration_blocks { "encoder.integration" } else { "encoder.extractor" };
        stages.push(block_cost(format!("{stage}.block{}", l + 1), shape, d, heads));
    }
    let k = cfg.heads + 1;
    stages.push(StageCost { name: "selection".into(), tokens: k, matmul_flops: 0, other_flops: k as u64 * d });
    stages.push(block_cost(
        format!("final.block{}", encoder + 1),
        BlockShape { n_in: k, n_out: k, residual: true, merged: false },
        d,
        heads,
    ));
    let c = cfg.num_classes as u64;
    stages.push(StageCost { name: "head".into(), tokens: 1, matmul_flops: 2 * d * c, other_flops: c });

    Ok(CostReport { param_count, flops_per_sample: stages.iter().map(StageCost::flops).sum(), stages })
}

/// Counts the operations of an actual single-sample forward pass.
pub fn instrumented_flops(cfg: &ModelConfig, seed: u64) -> Result<FlopCount> {
    let model = Epir::new(cfg.clone(), seed)?;
    let (n, pd) = (cfg.dnspt.num_patches(), cfg.dnspt.patch_dim());
    let patches = Tensor::new(normal(&mut rng_from_seed(seed ^ 1), 1.0, n * pd), &[1, n, pd])?;
    let (out, counted) = count_flops(|| model.forward(&patches));
    out?;
    Ok(counted)
}
