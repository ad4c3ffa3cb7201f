//! Leave-one-subject-out folds.

use crate::data::SampleManifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub subject: String,
    /// Indices into the sample list.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct subject, subjects in lexicographic order.
pub fn loso_folds<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<Fold>> {
    let mut ids: Vec<&str> = subjects.iter().map(|s| s.as_ref()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::LosoInfeasible(ids.len()));
    }
    Ok(ids
        .into_iter()
        .map(|held| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..subjects.len()).partition(|&i| subjects[i].as_ref() == held);
            Fold { subject: held.to_string(), train, test }
        })
        .collect())
}

pub fn loso_split(manifest: &SampleManifest) -> Result<Vec<Fold>> {
    let subjects: Vec<&str> = manifest.records.iter().map(|r| r.subject_id.as_str()).collect();
    loso_folds(&subjects)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_samples() {
        let subjects = ["b", "a", "b", "c", "a"];
        let folds = loso_folds(&subjects).unwrap();
        assert_eq!(folds.iter().map(|f| f.subject.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(folds[0].test, vec![1, 4]);
        assert_eq!(folds[0].train, vec![0, 2, 3]);
        let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sixteen_subjects_sixteen_folds() {
        let subjects: Vec<String> = (0..164).map(|i| format!("s{:02}", i % 16)).collect();
        let folds = loso_folds(&subjects).unwrap();
        assert_eq!(folds.len(), 16);
        assert!(folds.iter().all(|f| !f.test.is_empty()));
        assert!(matches!(loso_folds(&["x", "x"]), Err(Error::LosoInfeasible(1))));
    }
}
