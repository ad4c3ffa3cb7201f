//! Report files: confusion tables, metrics, per-fold predictions, and
//! merge and selection dumps for inspecting single samples.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionCounts, MetricsReport};
use crate::model::BlockMerge;
use crate::train::FoldResult;

/// Raw counts as CSV: one row per true class, one column per predicted class.
pub fn confusion_csv(counts: &ConfusionCounts, class_names: &[String]) -> Result<String> {
    table_csv(counts, class_names, |row, p| row[p].to_string())
}

/// Each row divided by its support, four decimals. Rows without support stay zero.
pub fn normalized_confusion_csv(counts: &ConfusionCounts, class_names: &[String]) -> Result<String> {
    table_csv(counts, class_names, |row, p| {
        let total: u64 = row.iter().sum();
        let v = if total == 0 { 0.0 } else { row[p] as f64 / total as f64 };
        format!("{v:.4}")
    })
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn table_csv(counts: &ConfusionCounts, class_names: &[String], cell: impl Fn(&[u64], usize) -> String) -> Result<String> {
    if class_names.len() != counts.classes() {
        return Err(Error::Dimension(format!("{} class names for {} classes", class_names.len(), counts.classes())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("true").chain(class_names.iter().map(String::as_str)))?;
    for (t, row) in counts.matrix.iter().enumerate() {
        let cells: Vec<String> = (0..row.len()).map(|p| cell(row, p)).collect();
        w.write_record(std::iter::once(class_names[t].as_str()).chain(cells.iter().map(String::as_str)))?;
    }
    finish(w)
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    fold: usize,
    held_out_subject: &'a str,
    sample_id: &'a str,
    label: &'a str,
    predicted: &'a str,
}

pub fn predictions_csv(folds: &[FoldResult], class_names: &[String]) -> Result<String> {
    let name = |c: usize| class_names.get(c).map(String::as_str).ok_or_else(|| Error::Dimension(format!("class {c} has no name")));
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, f) in folds.iter().enumerate() {
        for p in &f.predictions {
            w.serialize(PredictionRow {
                fold: i,
                held_out_subject: &f.held_out_subject,
                sample_id: &p.sample_id,
                label: name(p.label)?,
                predicted: name(p.predicted)?,
            })?;
        }
    }
    finish(w)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes metrics.json, confusion.csv, confusion_normalized.csv and
/// predictions.csv into `dir`.
pub fn write_evaluation(dir: &Path, folds: &[FoldResult], class_names: &[String]) -> Result<MetricsReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let counts = crate::train::pooled_counts(folds, class_names.len())?;
    let report = MetricsReport::new(&counts, class_names)?;
    write_text(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&dir.join("confusion.csv"), &confusion_csv(&counts, class_names)?)?;
    write_text(&dir.join("confusion_normalized.csv"), &normalized_confusion_csv(&counts, class_names)?)?;
    write_text(&dir.join("predictions.csv"), &predictions_csv(folds, class_names)?)?;
    Ok(report)
}

/// One token after some number of merge blocks, with the patch cells it covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenCells {
    pub index: usize,
    pub is_cls: bool,
    /// `[row, col]` in the patch grid.
    pub cells: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStage {
    /// 0 is the tokenizer output, `i` the output of merge block `i`.
    pub after_block: usize,
    pub tokens: Vec<TokenCells>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeVisualization {
    pub sample_id: String,
    pub grid: usize,
    pub stages: Vec<MergeStage>,
    /// Token chosen by each head, indexed into the last stage.
    pub selected: Vec<usize>,
}

impl MergeVisualization {
    pub fn final_tokens(&self) -> &[TokenCells] {
        &self.stages.last().expect("stage 0 always present").tokens
    }
}

/// Follows one sample's merges from the patch grid to the last merge block.
pub fn merge_visualization(sample_id: &str, grid: usize, merges: &[&BlockMerge], selected: &[usize]) -> Result<MergeVisualization> {
    let n0 = grid * grid;
    let mut cells: Vec<Vec<[usize; 2]>> = std::iter::once(Vec::new()).chain((0..n0).map(|i| vec![[i / grid, i % grid]])).collect();
    let stage = |after_block: usize, cells: &[Vec<[usize; 2]>]| MergeStage {
        after_block,
        tokens: cells.iter().enumerate().map(|(index, c)| TokenCells { index, is_cls: index == 0, cells: c.clone() }).collect(),
    };
    let mut stages = vec![stage(0, &cells)];
    for (i, m) in merges.iter().enumerate() {
        if m.groups.first().is_none_or(|g| g != &[0]) {
            return Err(Error::Contract(format!("merge block {} moves the class token", i + 1)));
        }
        let mut next = Vec::with_capacity(m.groups.len());
        for g in &m.groups {
            let mut c = Vec::new();
            for &j in g {
                let src = cells.get(j).ok_or_else(|| Error::Contract(format!("merge block {} refers to token {j} of {}", i + 1, cells.len())))?;
                c.extend_from_slice(src);
            }
            c.sort_unstable();
            next.push(c);
        }
        cells = next;
        stages.push(stage(i + 1, &cells));
    }
    if let Some(&s) = selected.iter().find(|&&s| s == 0 || s >= cells.len()) {
        return Err(Error::Contract(format!("selected token {s} outside 1..{}", cells.len())));
    }
    Ok(MergeVisualization { sample_id: sample_id.to_string(), grid, stages, selected: selected.to_vec() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedTokens {
    pub sample_id: String,
    pub selected: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::integration::merge_groups;
    use crate::model::MergePair;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let counts = ConfusionCounts::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let csv = normalized_confusion_csv(&counts, &names(3)).unwrap();
        assert_eq!(csv, "true,c0,c1,c2\nc0,1.0000,0.0000,0.0000\nc1,0.0000,1.0000,0.0000\nc2,0.0000,0.0000,1.0000\n");
    }

    #[test]
    fn single_class_row_sums_to_one() {
        let counts = ConfusionCounts::from_predictions(&[0, 1, 1], &[1, 1, 1], 3).unwrap();
        let csv = normalized_confusion_csv(&counts, &names(3)).unwrap();
        let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row, ["c1", "0.3333", "0.6667", "0.0000"]);
        assert_eq!(confusion_csv(&counts, &names(3)).unwrap().lines().nth(2).unwrap(), "c1,1,2,0");
    }

    #[test]
    fn no_merges_one_cell_each() {
        let v = merge_visualization("s", 2, &[], &[]).unwrap();
        assert_eq!(v.stages.len(), 1);
        assert!(v.final_tokens()[1..].iter().all(|t| t.cells.len() == 1));
        assert_eq!(v.final_tokens()[4].cells, [[1, 1]]);
    }

    #[test]
    fn merge_is_transitive_and_conserves_cells() {
        // halves {1,2} and {3,4}: patch 1 joins patch 3, then that token joins patch 4
        let m1 = BlockMerge { pairs: vec![], groups: merge_groups(5, 2, &[MergePair { a: 0, b: 0, similarity: 1.0 }]).unwrap() };
        let m2 = BlockMerge { pairs: vec![], groups: merge_groups(4, 2, &[MergePair { a: 0, b: 0, similarity: 1.0 }]).unwrap() };
        let v = merge_visualization("s", 2, &[&m1, &m2], &[1]).unwrap();
        assert_eq!(v.stages[1].tokens[1].cells, [[0, 0], [1, 0]]);
        let last = v.final_tokens();
        assert_eq!(last.len(), 3);
        let mut all: Vec<[usize; 2]> = last.iter().flat_map(|t| t.cells.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, [[0, 0], [0, 1], [1, 0], [1, 1]]);
    }
}
