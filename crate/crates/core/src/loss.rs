//! Training objective: cross-entropy on the logits plus a margin
//! contrastive term on the final class tokens.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub alpha: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { alpha: 0.4 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("contrastive alpha must be in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `(1/B^2) * sum_ij [same(i,j) (1 - s_ij) + diff(i,j) max(s_ij - alpha, 0)]`
/// with `s` the cosine similarity of rows of `emb` (`[B, d]`).
pub fn contrastive_loss(emb: &Tensor, labels: &[usize], cfg: &ContrastiveConfig) -> Result<Tensor> {
    cfg.validate()?;
    if emb.rank() != 2 || emb.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::Dimension(format!("embeddings {:?} with {} labels", emb.shape(), labels.len())));
    }
    let b = labels.len();
    let z = emb.l2_normalize()?;
    let sim = z.matmul(&z.transpose()?)?;
    let mut same = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if labels[i] == labels[j] {
                same[i * b + j] = 1.0;
            }
        }
    }
    let diff: Vec<Real> = same.iter().map(|s| 1.0 - s).collect();
    let same = Tensor::new(same, &[b, b])?;
    let diff = Tensor::new(diff, &[b, b])?;
    let pull = sim.neg().add_scalar(1.0).mul(&same)?;
    let push = sim.add_scalar(-(cfg.alpha as Real)).relu().mul(&diff)?;
    Ok(pull.add(&push)?.sum().scale(1.0 / (b * b) as Real))
}

/// Cross-entropy plus the contrastive term.
pub fn total_loss(logits: &Tensor, emb: &Tensor, labels: &[usize], cfg: &ContrastiveConfig) -> Result<Tensor> {
    logits.cross_entropy(labels)?.add(&contrastive_loss(emb, labels, cfg)?)
}
