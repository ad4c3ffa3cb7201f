//! Whole-run orchestration behind the CLI: feature loading, LOSO training
//! with checkpoints, re-evaluation of a saved run, and per-sample dumps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{apply_label_map, cache_features, extract_features, load_cached, load_manifest, LabelMap, SampleManifest};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::metrics::MetricsReport;
use crate::model::Epir;
use crate::report::{merge_visualization, write_evaluation, write_text, MergeVisualization, SelectedTokens};
use crate::train::{batch_tensor, evaluate_fold, load_params, loso_split, prepare_samples, run_loso, save_params, FoldResult, Sample};

/// Saved next to the checkpoints so a run can be re-evaluated later.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub manifest: PathBuf,
    pub class_names: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub folds: Vec<FoldMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMeta {
    pub held_out_subject: String,
    /// Relative to the run directory.
    pub checkpoint: PathBuf,
    pub train_loss_curve: Vec<f64>,
}

/// Loads the manifest and applies the configured label map, if any.
pub fn load_dataset(manifest_path: &Path, cfg: &RunConfig) -> Result<SampleManifest> {
    let manifest = load_manifest(manifest_path)?;
    match &cfg.label_map {
        Some(p) => apply_label_map(&manifest, &LabelMap::load(p)?),
        None => Ok(manifest),
    }
}

/// Features for every record: through the on-disk cache when `cache_root`
/// is given, otherwise computed in memory.
pub fn load_features(manifest: &SampleManifest, cfg: &RunConfig, cache_root: Option<&Path>) -> Result<Vec<FlowField>> {
    let Some(root) = cache_root else {
        return extract_features(manifest, &cfg.feature);
    };
    let summary = cache_features(manifest, &cfg.feature, root)?;
    if let Some((id, msg)) = summary.failures.first() {
        return Err(Error::Input(format!("{} of {} samples failed feature extraction, first {id}: {msg}", summary.failures.len(), manifest.len())));
    }
    load_cached(manifest, &cfg.feature, root)
}

/// Model config with the class count taken from the data.
fn samples_for(manifest: &SampleManifest, cfg: &RunConfig, cache_root: Option<&Path>) -> Result<(RunConfig, Vec<Sample>)> {
    let mut cfg = cfg.clone();
    cfg.model.num_classes = manifest.num_classes();
    cfg.validate()?;
    let features = load_features(manifest, &cfg, cache_root)?;
    let samples = prepare_samples(manifest, &features, &cfg.model.dnspt)?;
    Ok((cfg, samples))
}

fn checkpoint_name(i: usize, subject: &str) -> PathBuf {
    PathBuf::from("folds").join(format!("fold{:02}_{}.ept", i + 1, subject.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-', "_")))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

/// Trains every LOSO fold and writes config, checkpoints, run metadata
/// and evaluation reports into `out`.
pub fn train_run(manifest_path: &Path, cfg: &RunConfig, out: &Path, cache_root: Option<&Path>) -> Result<MetricsReport> {
    let mut cfg = cfg.clone();
    if let Some(p) = &cfg.label_map {
        cfg.label_map = Some(absolute(p)?);
    }
    let manifest = load_dataset(manifest_path, &cfg)?;
    let (cfg, samples) = samples_for(&manifest, &cfg, cache_root)?;
    fs::create_dir_all(out.join("folds")).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.txt"), &cfg.canonical())?;

    let hook = |i: usize, fold: &crate::train::Fold, model: &Epir| save_params(model, out.join(checkpoint_name(i, &fold.subject)));
    let folds = run_loso(&samples, &cfg.model, &cfg.train, Some(&hook))?;

    let meta = RunMeta {
        manifest: absolute(manifest_path)?,
        class_names: manifest.class_names.clone(),
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        folds: folds
            .iter()
            .enumerate()
            .map(|(i, f)| FoldMeta {
                held_out_subject: f.held_out_subject.clone(),
                checkpoint: checkpoint_name(i, &f.held_out_subject),
                train_loss_curve: f.train_loss_curve.clone(),
            })
            .collect(),
    };
    write_text(&out.join("run.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    write_evaluation(out, &folds, &manifest.class_names)
}

/// A trained run loaded back from disk.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub cfg: RunConfig,
    pub manifest: SampleManifest,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<LoadedRun> {
        let meta_path = dir.join("run.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RunMeta = serde_json::from_str(&text)?;
        let cfg = RunConfig::load(dir.join("config.txt"))?;
        if cfg.hash() != meta.config_hash {
            return Err(Error::Config(format!("{}: config does not match run.json hash", dir.display())));
        }
        let manifest = load_dataset(&meta.manifest, &cfg)?;
        if manifest.class_names != meta.class_names {
            return Err(Error::Input(format!("manifest classes {:?} differ from the trained {:?}", manifest.class_names, meta.class_names)));
        }
        Ok(LoadedRun { dir: dir.to_path_buf(), meta, cfg, manifest })
    }

    pub fn model(&self, fold: &FoldMeta) -> Result<Epir> {
        let mut model = Epir::new(self.cfg.model.clone(), 0)?;
        load_params(&mut model, self.dir.join(&fold.checkpoint))?;
        Ok(model)
    }

    fn fold_for(&self, subject: &str) -> Result<&FoldMeta> {
        self.meta
            .folds
            .iter()
            .find(|f| f.held_out_subject == subject)
            .ok_or_else(|| Error::Input(format!("no fold holds out subject {subject}")))
    }

    /// Re-scores every fold checkpoint on its held-out subject and writes
    /// the reports into `out`.
    pub fn evaluate(&self, out: &Path, cache_root: Option<&Path>) -> Result<MetricsReport> {
        let (_, samples) = samples_for(&self.manifest, &self.cfg, cache_root)?;
        let mut results: Vec<FoldResult> = Vec::new();
        for fold in loso_split(&self.manifest)? {
            let meta = self.fold_for(&fold.subject)?;
            let test: Vec<&Sample> = fold.test.iter().map(|&j| &samples[j]).collect();
            results.push(evaluate_fold(&self.model(meta)?, &fold.subject, &test, meta.train_loss_curve.clone())?);
        }
        write_evaluation(out, &results, &self.manifest.class_names)
    }

    /// Merge trace and selected tokens of one sample under the model that
    /// held its subject out.
    pub fn visualize(&self, sample_id: &str, cache_root: Option<&Path>) -> Result<MergeVisualization> {
        let idx = self
            .manifest
            .records
            .iter()
            .position(|r| r.sample_id == sample_id)
            .ok_or_else(|| Error::Input(format!("sample {sample_id} not in manifest")))?;
        let one = SampleManifest { records: vec![self.manifest.records[idx].clone()], ..self.manifest.clone() };
        let features = load_features(&one, &self.cfg, cache_root)?;
        let samples = prepare_samples(&one, &features, &self.cfg.model.dnspt)?;
        let model = self.model(self.fold_for(&one.records[0].subject_id)?)?;
        let out = model.forward(&batch_tensor(&[&samples[0]], &self.cfg.model.dnspt)?)?;
        let merges: Vec<_> = out.merges.iter().map(|m| &m[0]).collect();
        let grid = self.cfg.model.dnspt.input_size / self.cfg.model.dnspt.patch_size;
        merge_visualization(sample_id, grid, &merges, &out.selected[0])
    }

    /// Selected token indices for every sample, each from its own fold model.
    pub fn selected_tokens(&self, cache_root: Option<&Path>) -> Result<Vec<SelectedTokens>> {
        let (_, samples) = samples_for(&self.manifest, &self.cfg, cache_root)?;
        let mut dump = Vec::with_capacity(samples.len());
        for fold in loso_split(&self.manifest)? {
            let model = self.model(self.fold_for(&fold.subject)?)?;
            for chunk in fold.test.chunks(32) {
                let batch: Vec<&Sample> = chunk.iter().map(|&j| &samples[j]).collect();
                let out = model.forward(&batch_tensor(&batch, &self.cfg.model.dnspt)?)?;
                dump.extend(batch.iter().zip(out.selected).map(|(s, sel)| SelectedTokens { sample_id: s.id.clone(), selected: sel }));
            }
        }
        Ok(dump)
    }
}
