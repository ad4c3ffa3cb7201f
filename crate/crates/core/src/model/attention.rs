//! ITALS attention (diagonal-masked, learned temperature), the feed-forward
//! sublayer, and the pre-LN Transformer block.

use crate::error::{Error, Result};
use crate::model::integration::{merge_groups, pair_similarity, select_top_pairs, split_halves, BlockMerge};
use crate::nn::{LayerNorm, Linear, Module, Parameter, Rng};
use crate::tensor::{Real, Tensor};

const TAU_FLOOR: Real = 1e-4;

/// Post-softmax attention of one block, `[batch, heads, n, n]`, detached.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub batch: usize,
    pub heads: usize,
    pub n: usize,
    pub data: Vec<Real>,
}

impl AttentionMaps {
    /// Row-major `n x n` matrix of sample `b`, head `h`.
    pub fn matrix(&self, b: usize, h: usize) -> &[Real] {
        let nn = self.n * self.n;
        let at = (b * self.heads + h) * nn;
        &self.data[at..at + nn]
    }
}

/// Multi-head attention whose similarity diagonal is masked to `-inf` and
/// whose softmax temperature `tau = softplus(raw) + floor` is learned.
#[derive(Clone, Debug)]
pub struct ItalsLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub tau_raw: Parameter,
    pub heads: usize,
}

/// Output of [`ItalsLayer::forward`].
pub struct ItalsOutput {
    pub tokens: Tensor,
    pub attention: AttentionMaps,
    /// Per-head keys, each `[batch, n, d_h]`.
    pub keys: Vec<Vec<Real>>,
}

impl ItalsLayer {
    pub fn new(name: &str, rng: &mut Rng, dim: usize, heads: usize) -> Result<ItalsLayer> {
        if heads == 0 || heads > dim {
            return Err(Error::Config(format!("cannot split model_dim {dim} into {heads} heads")));
        }
        // each head gets floor(d / heads) dims; the heads together may be narrower than d
        let dh = dim / heads;
        let inner = dh * heads;
        let tau0 = (dh as f64).sqrt();
        // inverse softplus so that tau starts at sqrt(d_h)
        let raw = (tau0 - TAU_FLOOR as f64).exp_m1().ln();
        Ok(ItalsLayer {
            query: Linear::new(&format!("{name}.query"), rng, dim, inner, false),
            key: Linear::new(&format!("{name}.key"), rng, dim, inner, false),
            value: Linear::new(&format!("{name}.value"), rng, dim, inner, false),
            out: Linear::new(&format!("{name}.out"), rng, inner, dim, true),
            tau_raw: Parameter::new(format!("{name}.tau"), vec![raw as Real], &[1])?,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.query.out_features() / self.heads
    }

    pub fn tau(&self) -> Tensor {
        self.tau_raw.tensor().softplus().add_scalar(TAU_FLOOR)
    }

    /// Raw per-head scores `Q_h K_h^T`, each `[batch, n, n]`, unscaled.
    pub fn similarity(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (q, k) = (self.query.forward(x)?, self.key.forward(x)?);
        let dh = self.head_dim();
        (0..self.heads)
            .map(|h| q.narrow(2, h * dh, dh)?.matmul(&k.narrow(2, h * dh, dh)?.transpose()?))
            .collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<ItalsOutput> {
        if x.rank() != 3 {
            return Err(Error::Dimension(format!("attention expects [batch, tokens, dim], got {:?}", x.shape())));
        }
        let (b, n) = (x.shape()[0], x.shape()[1]);
        if n < 2 {
            return Err(Error::Dimension(format!("attention needs at least 2 tokens, got {n}")));
        }
        let (q, k, v) = (self.query.forward(x)?, self.key.forward(x)?, self.value.forward(x)?);
        let tau = self.tau();
        let dh = self.head_dim();
        let mut outs = Vec::with_capacity(self.heads);
        let mut attention = vec![0.0; b * self.heads * n * n];
        let mut keys = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let kh = k.narrow(2, h * dh, dh)?;
            let scores = q.narrow(2, h * dh, dh)?.matmul(&kh.transpose()?)?;
            let attn = scores.div(&tau)?.diag_mask()?.softmax(2)?;
            for s in 0..b {
                let src = &attn.data()[s * n * n..(s + 1) * n * n];
                let at = (s * self.heads + h) * n * n;
                attention[at..at + n * n].copy_from_slice(src);
            }
            outs.push(attn.matmul(&v.narrow(2, h * dh, dh)?)?);
            keys.push(kh.to_vec());
        }
        let tokens = self.out.forward(&Tensor::concat(&outs, 2)?)?;
        Ok(ItalsOutput {
            tokens,
            attention: AttentionMaps { batch: b, heads: self.heads, n, data: attention },
            keys,
        })
    }
}

impl Module for ItalsLayer {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = Vec::new();
        for l in [&self.query, &self.key, &self.value, &self.out] {
            p.extend(l.parameters());
        }
        p.push(&self.tau_raw);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = Vec::new();
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.out] {
            p.extend(l.parameters_mut());
        }
        p.push(&mut self.tau_raw);
        p
    }
}

/// `Linear(d, 4d) -> GELU -> Linear(4d, d)`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(name: &str, rng: &mut Rng, dim: usize) -> FeedForward {
        FeedForward {
            up: Linear::new(&format!("{name}.up"), rng, dim, 4 * dim, true),
            down: Linear::new(&format!("{name}.down"), rng, 4 * dim, dim, true),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu())
    }
}

impl Module for FeedForward {
    fn parameters(&self) -> Vec<&Parameter> {
        self.up.parameters().into_iter().chain(self.down.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.up.parameters_mut().into_iter().chain(self.down.parameters_mut()).collect()
    }
}

/// One pre-LN block: attention sublayer, optional token merge, FFN sublayer.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: ItalsLayer,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

/// What a block hands to the next stage.
pub struct BlockOutput {
    pub tokens: Tensor,
    /// Attention at the block's input token count (before any merge).
    pub attention: AttentionMaps,
    pub keys: Vec<Vec<Real>>,
    /// Per-sample merges, present when the block integrated tokens.
    pub merges: Option<Vec<BlockMerge>>,
}

impl Block {
    pub fn new(name: &str, rng: &mut Rng, dim: usize, heads: usize) -> Result<Block> {
        Ok(Block {
            norm1: LayerNorm::new(&format!("{name}.norm1"), dim),
            attn: ItalsLayer::new(&format!("{name}.attn"), rng, dim, heads)?,
            norm2: LayerNorm::new(&format!("{name}.norm2"), dim),
            ffn: FeedForward::new(&format!("{name}.ffn"), rng, dim),
        })
    }

    /// Runs the block. `attn_residual = false` drops the skip connection
    /// around attention (the first block of the encoder). With
    /// `merge_pairs = Some(k)` the `k` most similar cross-half token pairs
    /// are averaged between the two sublayers; index 0 is never merged.
    pub fn forward(&self, x: &Tensor, attn_residual: bool, merge_pairs: Option<usize>) -> Result<BlockOutput> {
        let a = self.attn.forward(&self.norm1.forward(x)?)?;
        let mut y = if attn_residual { a.tokens.add(x)? } else { a.tokens };
        let mut merges = None;
        if let Some(k) = merge_pairs {
            let m = plan_merges(&a.keys, x.shape()[0], x.shape()[1], k)?;
            let groups: Vec<Vec<Vec<usize>>> = m.iter().map(|m| m.groups.clone()).collect();
            y = y.gather_groups(&groups)?;
            merges = Some(m);
        }
        let tokens = self.ffn.forward(&self.norm2.forward(&y)?)?.add(&y)?;
        Ok(BlockOutput { tokens, attention: a.attention, keys: a.keys, merges })
    }
}

impl Module for Block {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.norm1.parameters();
        p.extend(self.attn.parameters());
        p.extend(self.norm2.parameters());
        p.extend(self.ffn.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.norm1.parameters_mut();
        p.extend(self.attn.parameters_mut());
        p.extend(self.norm2.parameters_mut());
        p.extend(self.ffn.parameters_mut());
        p
    }
}

/// Head-averaged keys of sample `b` out of per-head `[batch, n, d_h]` buffers.
pub fn mean_keys(keys: &[Vec<Real>], batch: usize, b: usize, n: usize) -> Vec<Vec<Real>> {
    let dh = keys[0].len() / (batch * n);
    let w = 1.0 / keys.len() as Real;
    (0..n)
        .map(|i| {
            let at = (b * n + i) * dh;
            let mut row = vec![0.0; dh];
            for k in keys {
                for (r, v) in row.iter_mut().zip(&k[at..at + dh]) {
                    *r += w * v;
                }
            }
            row
        })
        .collect()
}

fn plan_merges(keys: &[Vec<Real>], batch: usize, n: usize, k: usize) -> Result<Vec<BlockMerge>> {
    let (n1, _) = split_halves(n - 1)?;
    (0..batch)
        .map(|b| {
            let km = mean_keys(keys, batch, b, n);
            let sim = pair_similarity(&km[1..1 + n1], &km[1 + n1..]);
            let pairs = select_top_pairs(&sim, k)?;
            let groups = merge_groups(n, n1, &pairs)?;
            Ok(BlockMerge { pairs, groups })
        })
        .collect()
}
