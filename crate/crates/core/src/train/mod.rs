//! Optimization, LOSO orchestration, cost accounting, and ablation sweeps.

mod adam;
mod checkpoint;
pub mod cost;
mod loso;
pub mod sweep;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_params, save_params};
pub use cost::{cost_report, instrumented_flops, CostReport, StageCost};
pub use loso::{loso_folds, loso_split, Fold};
pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepRow};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleManifest;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::loss::{total_loss, ContrastiveConfig};
use crate::metrics::ConfusionCounts;
use crate::model::dnspt::patchify;
use crate::model::{stack_patches, DnsptConfig, Epir, ModelConfig};
use crate::nn::{derive_seed, rng_from_seed, Module};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Clamped to the training-set size.
    pub batch_size: usize,
    pub contrastive: ContrastiveConfig,
    pub seed: u64,
    /// Folds trained concurrently; 0 uses every available core.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            adam: AdamConfig::default(),
            batch_size: 256,
            contrastive: ContrastiveConfig::default(),
            seed: 0,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.adam.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || self.adam.eps <= 0.0 {
            return Err(Error::Config("adam betas must be in [0, 1) and eps positive".into()));
        }
        self.contrastive.validate()
    }
}

/// A sample ready for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject: String,
    pub label: usize,
    /// `num_patches x patch_dim` values from [`patchify`].
    pub patches: Vec<Real>,
}

pub fn prepare_samples(manifest: &SampleManifest, features: &[FlowField], cfg: &DnsptConfig) -> Result<Vec<Sample>> {
    if features.len() != manifest.len() {
        return Err(Error::Dimension(format!("{} features for {} records", features.len(), manifest.len())));
    }
    manifest
        .records
        .iter()
        .zip(features)
        .map(|(r, f)| {
            Ok(Sample {
                id: r.sample_id.clone(),
                subject: r.subject_id.clone(),
                label: r.label,
                patches: patchify(f, cfg)?,
            })
        })
        .collect()
}

pub(crate) fn batch_tensor(samples: &[&Sample], cfg: &DnsptConfig) -> Result<crate::tensor::Tensor> {
    let views: Vec<&[Real]> = samples.iter().map(|s| s.patches.as_slice()).collect();
    stack_patches(&views, cfg)
}

/// Trains a fresh model. Initialization and batch order derive from `seed`.
/// Returns the last-epoch model and the mean training loss per epoch.
pub fn train_fold(train: &[&Sample], model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<(Epir, Vec<f64>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut model = Epir::new(model_cfg.clone(), derive_seed(seed, &[0]))?;
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let mut opt = Adam::new(cfg.adam, &model.parameters());
    let bs = cfg.batch_size.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let out = model.forward(&batch_tensor(&batch, &model_cfg.dnspt)?)?;
            let loss = total_loss(&out.logits, &out.embedding, &labels, &cfg.contrastive)?;
            let value = loss.item()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {} batch {b}", epoch + 1)));
            }
            model.zero_grad();
            loss.backward()?;
            opt.step(model.parameters_mut())
                .map_err(|e| Error::NonFinite(format!("epoch {} batch {b}: {e}", epoch + 1)))?;
            total += value * batch.len() as f64;
        }
        curve.push(total / train.len() as f64);
        log::debug!("epoch {} loss {:.5}", epoch + 1, curve[epoch]);
    }
    Ok((model, curve))
}

/// Predicted class per sample, in input order.
pub fn predict_samples(model: &Epir, samples: &[&Sample]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        preds.extend(model.forward(&batch_tensor(chunk, &model.cfg.dnspt)?)?.predictions());
    }
    Ok(preds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub predicted: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out_subject: String,
    pub predictions: Vec<Prediction>,
    pub train_loss_curve: Vec<f64>,
}

pub fn evaluate_fold(model: &Epir, subject: &str, test: &[&Sample], curve: Vec<f64>) -> Result<FoldResult> {
    let preds = predict_samples(model, test)?;
    Ok(FoldResult {
        held_out_subject: subject.to_string(),
        predictions: test
            .iter()
            .zip(preds)
            .map(|(s, p)| Prediction { sample_id: s.id.clone(), predicted: p, label: s.label })
            .collect(),
        train_loss_curve: curve,
    })
}

/// Pools every fold's predictions into one confusion table.
pub fn pooled_counts(folds: &[FoldResult], classes: usize) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::new(classes);
    for f in folds {
        let (p, l): (Vec<usize>, Vec<usize>) = f.predictions.iter().map(|p| (p.predicted, p.label)).unzip();
        counts.accumulate(&p, &l)?;
    }
    Ok(counts)
}

/// Called with each trained fold model, e.g. to save a checkpoint.
pub type FoldHook<'a> = dyn Fn(usize, &Fold, &Epir) -> Result<()> + Sync + 'a;

/// Full LOSO run: one independently seeded model per held-out subject.
pub fn run_loso(samples: &[Sample], model_cfg: &ModelConfig, cfg: &TrainConfig, hook: Option<&FoldHook>) -> Result<Vec<FoldResult>> {
    model_cfg.validate()?;
    cfg.validate()?;
    let subjects: Vec<&str> = samples.iter().map(|s| s.subject.as_str()).collect();
    let folds = loso_folds(&subjects)?;
    let run_fold = |(i, fold): (usize, &Fold)| -> Result<FoldResult> {
        let train: Vec<&Sample> = fold.train.iter().map(|&j| &samples[j]).collect();
        let test: Vec<&Sample> = fold.test.iter().map(|&j| &samples[j]).collect();
        let (model, curve) = train_fold(&train, model_cfg, cfg, derive_seed(cfg.seed, &[i as u64]))?;
        if let Some(h) = hook {
            h(i, fold, &model)?;
        }
        log::info!("fold {} ({}) done, final loss {:.4}", i + 1, fold.subject, curve.last().copied().unwrap_or(f64::NAN));
        evaluate_fold(&model, &fold.subject, &test, curve)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| folds.par_iter().enumerate().map(run_fold).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        let mut c = TrainConfig::default();
        c.adam.lr = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
