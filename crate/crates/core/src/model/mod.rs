//! The EPIR encoder: tokenizer, token-integration blocks, extractor blocks,
//! rollout-based token selection, final block, and linear head.

pub mod attention;
pub mod dnspt;
pub mod dtsm;
pub mod integration;

use crate::error::{Error, Result};
use crate::nn::{rng_from_seed, Linear, Module, Parameter};
use crate::tensor::{Real, Tensor};

pub use attention::{AttentionMaps, Block, BlockOutput, FeedForward, ItalsLayer};
pub use dnspt::{Dnspt, DnsptConfig};
pub use dtsm::RolloutScope;
pub use integration::{BlockMerge, MergePair};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dnspt: DnsptConfig,
    pub heads: usize,
    pub integration_blocks: usize,
    pub pairs_per_block: usize,
    /// Blocks between integration and token selection.
    pub extractor_blocks: usize,
    /// Keep the attention skip connection on the very first block too.
    pub uniform_residual: bool,
    pub rollout_scope: RolloutScope,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dnspt: DnsptConfig::default(),
            heads: 3,
            integration_blocks: 6,
            pairs_per_block: 1,
            extractor_blocks: 6,
            uniform_residual: false,
            rollout_scope: RolloutScope::AllProjected,
            num_classes: 3,
        }
    }
}

impl ModelConfig {
    /// Width of one attention head, `floor(d / heads)`.
    pub fn head_dim(&self) -> usize {
        self.dnspt.model_dim / self.heads
    }

    /// Total Transformer blocks including the final one.
    pub fn total_blocks(&self) -> usize {
        self.integration_blocks + self.extractor_blocks + 1
    }

    /// Token count (class token included) entering each non-final block,
    /// followed by the count leaving the last of them.
    pub fn token_schedule(&self) -> Result<Vec<usize>> {
        let mut n = self.dnspt.num_patches() + 1;
        let mut out = vec![n];
        for b in 0..self.integration_blocks {
            let half = (n - 1) / 2;
            if n - 1 < 2 || self.pairs_per_block > half {
                return Err(Error::Config(format!(
                    "integration block {} cannot merge {} pairs out of {} tokens",
                    b + 1,
                    self.pairs_per_block,
                    n - 1
                )));
            }
            n -= self.pairs_per_block;
            out.push(n);
        }
        out.extend(std::iter::repeat_n(n, self.extractor_blocks));
        // heads may pick the same token, so one patch token is enough
        if n < 2 {
            return Err(Error::Config("no patch token remains after integration".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.dnspt.validate()?;
        if self.heads == 0 || self.heads > self.dnspt.model_dim {
            return Err(Error::Config(format!("cannot split model_dim {} into {} heads", self.dnspt.model_dim, self.heads)));
        }
        if self.extractor_blocks == 0 {
            return Err(Error::Config("at least one extractor block is required".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        self.token_schedule().map(|_| ())
    }

    /// Splits a total block count the way the reference depth does
    /// (13 = 6 integration + 6 extractor + 1 final).
    pub fn with_total_blocks(&self, total: usize) -> Result<ModelConfig> {
        if total < 2 {
            return Err(Error::Config(format!("need at least 2 blocks, got {total}")));
        }
        let integration = (total - 1) / 2;
        Ok(ModelConfig { integration_blocks: integration, extractor_blocks: total - 1 - integration, ..self.clone() })
    }

    /// Fraction of the initial patch tokens merged away over the whole
    /// integration stage.
    pub fn integration_rate(&self) -> f64 {
        (self.integration_blocks * self.pairs_per_block) as f64 / self.dnspt.num_patches() as f64
    }

    /// Pairs per block closest to a target integration rate.
    pub fn pairs_for_rate(&self, rate: f64) -> usize {
        if self.integration_blocks == 0 {
            return 0;
        }
        (rate * self.dnspt.num_patches() as f64 / self.integration_blocks as f64).round() as usize
    }
}

/// Everything a forward pass produces.
pub struct ForwardOutput {
    pub logits: Tensor,
    /// Final class tokens `[batch, d]`, the embeddings for the contrastive loss.
    pub embedding: Tensor,
    /// Per block (final block last), attention at that block's input size.
    pub attention: Vec<AttentionMaps>,
    /// Per integration block, one merge record per sample.
    pub merges: Vec<Vec<BlockMerge>>,
    /// Per sample, the token index chosen by each head.
    pub selected: Vec<Vec<usize>>,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        predict(&self.logits)
    }
}

/// Row-wise argmax of `[batch, classes]` logits; ties pick the lower class.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(c)
        .map(|row| (1..c).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Epir {
    pub cfg: ModelConfig,
    pub tokenizer: Dnspt,
    /// Integration blocks followed by extractor blocks.
    pub blocks: Vec<Block>,
    pub final_block: Block,
    pub head: Linear,
}

impl Epir {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Epir> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let d = cfg.dnspt.model_dim;
        let tokenizer = Dnspt::new(cfg.dnspt, &mut rng)?;
        let blocks = (0..cfg.integration_blocks + cfg.extractor_blocks)
            .map(|i| Block::new(&format!("block{}", i + 1), &mut rng, d, cfg.heads))
            .collect::<Result<Vec<_>>>()?;
        let final_block = Block::new(&format!("block{}", cfg.total_blocks()), &mut rng, d, cfg.heads)?;
        let head = Linear::new("head", &mut rng, d, cfg.num_classes, true);
        Ok(Epir { cfg, tokenizer, blocks, final_block, head })
    }

    /// `patches` is `[batch, num_patches, patch_dim]` as built by
    /// [`dnspt::patchify`].
    pub fn forward(&self, patches: &Tensor) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let mut x = self.tokenizer.forward(patches)?;
        let batch = x.shape()[0];
        let mut attention = Vec::with_capacity(cfg.total_blocks());
        let mut merges: Vec<Vec<BlockMerge>> = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            let residual = l > 0 || cfg.uniform_residual;
            let merge = (l < cfg.integration_blocks && cfg.pairs_per_block > 0).then_some(cfg.pairs_per_block);
            let out = block.forward(&x, residual, merge)?;
            x = out.tokens;
            attention.push(out.attention);
            if l < cfg.integration_blocks {
                // an empty merge keeps every token in place
                let n = attention[l].n;
                merges.push(out.merges.unwrap_or_else(|| {
                    vec![BlockMerge { pairs: Vec::new(), groups: (0..n).map(|i| vec![i]).collect() }; batch]
                }));
            }
        }

        let n = x.shape()[1];
        let first = match cfg.rollout_scope {
            dtsm::RolloutScope::AllProjected => 0,
            dtsm::RolloutScope::ExtractorOnly => cfg.integration_blocks,
        };
        let mut selected = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut picks = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let mats = (first..self.blocks.len())
                    .map(|l| {
                        let later: Vec<&[Vec<usize>]> = merges.iter().skip(l).map(|m| m[b].groups.as_slice()).collect();
                        dtsm::project_attention(attention[l].matrix(b, h), attention[l].n, &later)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rolled = dtsm::attention_rollout(&mats, n)?;
                picks.push(dtsm::select_token(&rolled, n)?);
            }
            selected.push(picks);
        }

        let groups: Vec<Vec<Vec<usize>>> = selected
            .iter()
            .map(|p| std::iter::once(vec![0]).chain(p.iter().map(|&j| vec![j])).collect())
            .collect();
        let chosen = x.gather_groups(&groups)?;
        let out = self.final_block.forward(&chosen, true, None)?;
        attention.push(out.attention);
        let d = cfg.dnspt.model_dim;
        let embedding = out.tokens.narrow(1, 0, 1)?.reshape(&[batch, d])?;
        let logits = self.head.forward(&embedding)?;
        Ok(ForwardOutput { logits, embedding, attention, merges, selected })
    }
}

impl Module for Epir {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.tokenizer.parameters();
        for b in &self.blocks {
            p.extend(b.parameters());
        }
        p.extend(self.final_block.parameters());
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.tokenizer.parameters_mut();
        for b in &mut self.blocks {
            p.extend(b.parameters_mut());
        }
        p.extend(self.final_block.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}

/// Stacks per-sample patch buffers into one `[batch, num_patches, patch_dim]` tensor.
pub fn stack_patches(samples: &[&[Real]], cfg: &DnsptConfig) -> Result<Tensor> {
    let per = cfg.num_patches() * cfg.patch_dim();
    if samples.is_empty() || samples.iter().any(|s| s.len() != per) {
        return Err(Error::Dimension(format!("every sample needs {per} patch values")));
    }
    let data = samples.iter().flat_map(|s| s.iter().copied()).collect();
    Tensor::new(data, &[samples.len(), cfg.num_patches(), cfg.patch_dim()])
}
