//! Ablation sweeps over depth or integration rate, one LOSO run per value.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{cost_report, pooled_counts, run_loso, Sample, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Total block count, split as integration / extractor / final.
    NumBlocks,
    /// Fraction of patch tokens merged over the integration stage.
    IntegrationRate,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepAxis> {
        match s {
            "num_blocks" => Ok(SweepAxis::NumBlocks),
            "integration_rate" => Ok(SweepAxis::IntegrationRate),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}; use num_blocks or integration_rate"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub feasible: bool,
    pub total_blocks: usize,
    pub pairs_per_block: usize,
    pub effective_rate: f64,
    pub uf1: Option<f64>,
    pub uar: Option<f64>,
    pub flops_per_sample: Option<u64>,
    pub note: String,
}

/// The model configuration a sweep value stands for.
pub fn config_for(axis: SweepAxis, value: f64, base: &ModelConfig) -> Result<ModelConfig> {
    match axis {
        SweepAxis::NumBlocks => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("block count must be a whole number, got {value}")));
            }
            base.with_total_blocks(value as usize)
        }
        SweepAxis::IntegrationRate => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("integration rate must be in [0, 1], got {value}")));
            }
            Ok(ModelConfig { pairs_per_block: base.pairs_for_rate(value), ..base.clone() })
        }
    }
}

/// Runs every value. Values whose configuration is infeasible become
/// flagged rows instead of stopping the sweep.
pub fn sweep(axis: SweepAxis, values: &[f64], base: &ModelConfig, train: &TrainConfig, samples: &[Sample]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = config_for(axis, value, base).and_then(|c| c.validate().map(|_| c));
        let cfg = match cfg {
            Ok(c) => c,
            Err(e) if e.is_config() => {
                log::warn!("sweep value {value} is infeasible: {e}");
                let (total, pairs) = match axis {
                    SweepAxis::NumBlocks => (value.max(0.0) as usize, base.pairs_per_block),
                    SweepAxis::IntegrationRate => (base.total_blocks(), base.pairs_for_rate(value.clamp(0.0, 1.0))),
                };
                rows.push(SweepRow {
                    value,
                    feasible: false,
                    total_blocks: total,
                    pairs_per_block: pairs,
                    effective_rate: f64::NAN,
                    uf1: None,
                    uar: None,
                    flops_per_sample: None,
                    note: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let flops = cost_report(&cfg)?.flops_per_sample;
        let folds = run_loso(samples, &cfg, train, None)?;
        let counts = pooled_counts(&folds, cfg.num_classes)?;
        rows.push(SweepRow {
            value,
            feasible: true,
            total_blocks: cfg.total_blocks(),
            pairs_per_block: cfg.pairs_per_block,
            effective_rate: cfg.integration_rate(),
            uf1: Some(counts.uf1()),
            uar: Some(counts.uar()?),
            flops_per_sample: Some(flops),
            note: String::new(),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Format(format!("sweep csv: {e}")))?;
    Ok(())
}
