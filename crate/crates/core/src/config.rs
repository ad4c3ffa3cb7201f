//! Flat `key = value` run configuration covering every stage, with defaults,
//! validation, and a digest that ignores key order and formatting.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::FeatureConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
#[cfg(test)]
use crate::model::RolloutScope;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub feature: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Relabelling applied to the manifest before training, if any.
    pub label_map: Option<PathBuf>,
    /// `None` follows half the patch size.
    shift_offset: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            feature: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            label_map: None,
            shift_offset: None,
        };
        c.sync();
        c
    }
}

pub const KEYS: &[&str] = &[
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "contrastive_alpha",
    "epochs",
    "extractor_blocks",
    "flow_iterations",
    "flow_poly_n",
    "flow_poly_sigma",
    "flow_pyramid_levels",
    "flow_pyramid_scale",
    "flow_window_size",
    "heads",
    "input_size",
    "integration_blocks",
    "label_map",
    "learning_rate",
    "model_dim",
    "num_classes",
    "pairs_per_block",
    "patch_size",
    "rollout_scope",
    "seed",
    "shift_offset",
    "uniform_residual",
    "workers",
];

fn num<T: FromStr>(v: &str, what: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got {v:?}"))
}

impl RunConfig {
    // keeps the duplicated size and the derived shift in step
    fn sync(&mut self) {
        self.model.dnspt.input_size = self.feature.size;
        self.model.dnspt.shift_offset = self.shift_offset.unwrap_or(self.model.dnspt.patch_size / 2);
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let (f, m, t) = (&mut self.feature.flow, &mut self.model, &mut self.train);
        match key {
            "adam_beta1" => t.adam.beta1 = num(value, "a number")?,
            "adam_beta2" => t.adam.beta2 = num(value, "a number")?,
            "adam_eps" => t.adam.eps = num(value, "a number")?,
            "batch_size" => t.batch_size = num(value, "an integer")?,
            "contrastive_alpha" => t.contrastive.alpha = num(value, "a number")?,
            "epochs" => t.epochs = num(value, "an integer")?,
            "extractor_blocks" => m.extractor_blocks = num(value, "an integer")?,
            "flow_iterations" => f.iterations = num(value, "an integer")?,
            "flow_poly_n" => f.poly_n = num(value, "an integer")?,
            "flow_poly_sigma" => f.poly_sigma = num(value, "a number")?,
            "flow_pyramid_levels" => f.pyramid_levels = num(value, "an integer")?,
            "flow_pyramid_scale" => f.pyramid_scale = num(value, "a number")?,
            "flow_window_size" => f.window_size = num(value, "an integer")?,
            "heads" => m.heads = num(value, "an integer")?,
            "input_size" => self.feature.size = num(value, "an integer")?,
            "integration_blocks" => m.integration_blocks = num(value, "an integer")?,
            "label_map" => self.label_map = (!value.is_empty()).then(|| PathBuf::from(value)),
            "learning_rate" => t.adam.lr = num(value, "a number")?,
            "model_dim" => m.dnspt.model_dim = num(value, "an integer")?,
            "num_classes" => m.num_classes = num(value, "an integer")?,
            "pairs_per_block" => m.pairs_per_block = num(value, "an integer")?,
            "patch_size" => m.dnspt.patch_size = num(value, "an integer")?,
            "rollout_scope" => m.rollout_scope = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => t.seed = num(value, "an integer")?,
            "shift_offset" => self.shift_offset = if value == "auto" { None } else { Some(num(value, "an integer or auto")?) },
            "uniform_residual" => m.uniform_residual = num(value, "true or false")?,
            "workers" => t.workers = num(value, "an integer")?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        self.sync();
        Ok(())
    }

    /// Parses a document. Errors name the offending line.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        RunConfig::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies `key=value` overrides on top of an existing configuration.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<RunConfig> {
        let mut cfg = self.clone();
        for (i, o) in overrides.iter().enumerate() {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            cfg.set(k.trim(), v.trim()).map_err(|msg| Error::Config(format!("override {}: {msg}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_lines<'a>(&mut self, lines: impl Iterator<Item = (usize, &'a str)>) -> Result<()> {
        for (line, raw) in lines {
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let (k, v) = text.split_once('=').ok_or_else(|| Error::ConfigLine { line, msg: format!("expected key = value, got {text:?}") })?;
            self.set(k.trim(), v.trim()).map_err(|msg| Error::ConfigLine { line, msg })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.feature.flow.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    fn value_of(&self, key: &str) -> String {
        let (f, m, t) = (&self.feature.flow, &self.model, &self.train);
        match key {
            "adam_beta1" => format!("{:?}", t.adam.beta1),
            "adam_beta2" => format!("{:?}", t.adam.beta2),
            "adam_eps" => format!("{:?}", t.adam.eps),
            "batch_size" => t.batch_size.to_string(),
            "contrastive_alpha" => format!("{:?}", t.contrastive.alpha),
            "epochs" => t.epochs.to_string(),
            "extractor_blocks" => m.extractor_blocks.to_string(),
            "flow_iterations" => f.iterations.to_string(),
            "flow_poly_n" => f.poly_n.to_string(),
            "flow_poly_sigma" => format!("{:?}", f.poly_sigma),
            "flow_pyramid_levels" => f.pyramid_levels.to_string(),
            "flow_pyramid_scale" => format!("{:?}", f.pyramid_scale),
            "flow_window_size" => f.window_size.to_string(),
            "heads" => m.heads.to_string(),
            "input_size" => self.feature.size.to_string(),
            "integration_blocks" => m.integration_blocks.to_string(),
            "label_map" => self.label_map.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "learning_rate" => format!("{:?}", t.adam.lr),
            "model_dim" => m.dnspt.model_dim.to_string(),
            "num_classes" => m.num_classes.to_string(),
            "pairs_per_block" => m.pairs_per_block.to_string(),
            "patch_size" => m.dnspt.patch_size.to_string(),
            "rollout_scope" => m.rollout_scope.to_string(),
            "seed" => t.seed.to_string(),
            "shift_offset" => m.dnspt.shift_offset.to_string(),
            "uniform_residual" => m.uniform_residual.to_string(),
            "workers" => t.workers.to_string(),
            _ => unreachable!("key list and match agree"),
        }
    }

    /// Every key with its resolved value, sorted, one per line.
    pub fn canonical(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
