//! Pooled confusion counts and the unweighted F1 / average recall built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `matrix[t][p]` counts samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub matrix: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> ConfusionCounts {
        ConfusionCounts { matrix: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionCounts> {
        let mut c = ConfusionCounts::new(classes);
        c.accumulate(predictions, labels)?;
        Ok(c)
    }

    pub fn classes(&self) -> usize {
        self.matrix.len()
    }

    pub fn accumulate(&mut self, predictions: &[usize], labels: &[usize]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::Dimension(format!("{} predictions for {} labels", predictions.len(), labels.len())));
        }
        let c = self.classes();
        for (&p, &t) in predictions.iter().zip(labels) {
            if p >= c || t >= c {
                return Err(Error::Input(format!("class index out of range for {c} classes: ({t}, {p})")));
            }
            self.matrix[t][p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::Dimension("cannot merge confusion counts of different sizes".into()));
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.matrix[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.matrix.iter().map(|row| row[c]).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.support(c) - self.tp(c)
    }

    pub fn support(&self, c: usize) -> u64 {
        self.matrix[c].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    /// `2TP / (2TP + FP + FN)`, zero when the denominator is zero.
    pub fn f1(&self, c: usize) -> f64 {
        let den = 2 * self.tp(c) + self.fp(c) + self.fn_(c);
        if den == 0 {
            0.0
        } else {
            2.0 * self.tp(c) as f64 / den as f64
        }
    }

    /// `TP / N`, `None` for a class without support.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let n = self.support(c);
        (n > 0).then(|| self.tp(c) as f64 / n as f64)
    }

    pub fn uf1(&self) -> f64 {
        let c = self.classes();
        (0..c).map(|k| self.f1(k)).sum::<f64>() / c as f64
    }

    /// Mean recall over the classes that have support.
    pub fn uar(&self) -> Result<f64> {
        let recalls: Vec<f64> = (0..self.classes()).filter_map(|k| self.recall(k)).collect();
        if recalls.is_empty() {
            return Err(Error::Evaluation("no class has any sample".into()));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

/// The metrics document written after an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub uf1: f64,
    pub uar: f64,
    pub per_class_f1: Vec<f64>,
    /// `None` for classes without support.
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion_matrix: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn new(counts: &ConfusionCounts, class_names: &[String]) -> Result<MetricsReport> {
        if class_names.len() != counts.classes() {
            return Err(Error::Dimension(format!("{} class names for {} classes", class_names.len(), counts.classes())));
        }
        let c = counts.classes();
        Ok(MetricsReport {
            class_names: class_names.to_vec(),
            uf1: counts.uf1(),
            uar: counts.uar()?,
            per_class_f1: (0..c).map(|k| counts.f1(k)).collect(),
            per_class_recall: (0..c).map(|k| counts.recall(k)).collect(),
            confusion_matrix: counts.matrix.clone(),
        })
    }
}
