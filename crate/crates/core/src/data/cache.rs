//! Persisted flow features, one EPT1 file per sample, in a directory keyed
//! by the hash of the feature configuration.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{SampleManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::flow::{extract_flow_feature, FarnebackParams, FlowChannel, FlowField, GrayImage};
use crate::tensor::{read_ept1, read_ept1_header, write_ept1, DType};

/// Everything that determines a cached feature.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub flow: FarnebackParams,
    /// Side of the square feature map.
    pub size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { flow: FarnebackParams::default(), size: 28 }
    }
}

impl FeatureConfig {
    pub fn canonical(&self) -> String {
        let f = &self.flow;
        format!(
            "iterations={};poly_n={};poly_sigma={:?};pyramid_levels={};pyramid_scale={:?};size={};window_size={}",
            f.iterations, f.poly_n, f.poly_sigma, f.pyramid_levels, f.pyramid_scale, self.size, f.window_size
        )
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Subdirectory of `root` holding features for this config.
    pub fn cache_dir(&self, root: impl AsRef<Path>) -> PathBuf {
        root.as_ref().join(&self.hash()[..16])
    }

    pub fn extract(&self, record: &SampleRecord) -> Result<(FlowField, Vec<FlowChannel>)> {
        let onset = GrayImage::read_pnm(&record.onset_path)?;
        let apex = GrayImage::read_pnm(&record.apex_path)?;
        extract_flow_feature(&onset, &apex, &self.flow, self.size)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CacheSummary {
    pub dir: PathBuf,
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
    /// Samples with a flat channel that was zeroed.
    pub degenerate: Vec<(String, Vec<FlowChannel>)>,
}

enum Outcome {
    Written(Vec<FlowChannel>),
    Skipped,
}

fn feature_path(dir: &Path, sample_id: &str) -> PathBuf {
    dir.join(format!("{sample_id}.ept1"))
}

fn is_current(path: &Path, size: usize) -> bool {
    let Ok(f) = File::open(path) else { return false };
    read_ept1_header(BufReader::new(f)).is_ok_and(|h| h.dtype == DType::native() && h.shape == [3, size, size])
}

fn cache_one(cfg: &FeatureConfig, dir: &Path, record: &SampleRecord) -> Result<Outcome> {
    let path = feature_path(dir, &record.sample_id);
    if is_current(&path, cfg.size) {
        return Ok(Outcome::Skipped);
    }
    let (field, degenerate) = cfg.extract(record)?;
    let tmp = path.with_extension("ept1.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
        write_ept1(&mut w, &field.to_tensor(), DType::native())?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(Outcome::Written(degenerate))
}

/// Computes and stores missing features. Per-sample failures are collected
/// rather than aborting the run.
pub fn cache_features(manifest: &SampleManifest, cfg: &FeatureConfig, root: impl AsRef<Path>) -> Result<CacheSummary> {
    cfg.flow.validate()?;
    let dir = cfg.cache_dir(root);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    fs::write(dir.join("config.txt"), cfg.canonical() + "\n").map_err(|e| Error::io(&dir, e))?;

    let outcomes: Vec<Result<Outcome>> = manifest.records.par_iter().map(|r| cache_one(cfg, &dir, r)).collect();
    let mut summary = CacheSummary { dir, ..Default::default() };
    for (record, outcome) in manifest.records.iter().zip(outcomes) {
        match outcome {
            Ok(Outcome::Skipped) => summary.skipped += 1,
            Ok(Outcome::Written(flat)) => {
                summary.written += 1;
                if !flat.is_empty() {
                    summary.degenerate.push((record.sample_id.clone(), flat));
                }
            }
            Err(e) => {
                log::error!("sample {}: {e}", record.sample_id);
                summary.failures.push((record.sample_id.clone(), e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Reads the cached features for every record, in manifest order.
pub fn load_cached(manifest: &SampleManifest, cfg: &FeatureConfig, root: impl AsRef<Path>) -> Result<Vec<FlowField>> {
    let dir = cfg.cache_dir(root);
    manifest
        .records
        .iter()
        .map(|r| {
            let path = feature_path(&dir, &r.sample_id);
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let field = FlowField::from_tensor(&read_ept1(BufReader::new(f))?)?;
            if field.width != cfg.size || field.height != cfg.size {
                return Err(Error::Format(format!("{}: feature is {}x{}, expected {}", path.display(), field.width, field.height, cfg.size)));
            }
            Ok(field)
        })
        .collect()
}

/// Computes features in memory without touching the cache.
pub fn extract_features(manifest: &SampleManifest, cfg: &FeatureConfig) -> Result<Vec<FlowField>> {
    cfg.flow.validate()?;
    manifest
        .records
        .par_iter()
        .map(|r| {
            cfg.extract(r)
                .map(|(f, _)| f)
                .map_err(|e| Error::Input(format!("sample {}: {e}", r.sample_id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_every_field() {
        let a = FeatureConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.flow.poly_sigma = 1.1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.size = 32;
        assert_ne!(a.hash(), c.hash());
    }
}
