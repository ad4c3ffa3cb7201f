//! Class relabelling between protocols (for example five source emotions
//! collapsed to the three composite classes).

use std::fs;
use std::path::Path;

use crate::data::SampleManifest;
use crate::error::{Error, Result};

const CDE_DEFAULT: &str = include_str!("../../config/cde.map");

/// Ordered `source -> target` class-name pairs. Target indices follow the
/// order in which each target first appears.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pairs: Vec<(String, String)>,
}

impl LabelMap {
    pub fn new(pairs: Vec<(String, String)>) -> Result<LabelMap> {
        for (i, (s, _)) in pairs.iter().enumerate() {
            if pairs[..i].iter().any(|(p, _)| p == s) {
                return Err(Error::Mapping(format!("source class {s:?} mapped twice")));
            }
        }
        Ok(LabelMap { pairs })
    }

    pub fn identity(classes: &[String]) -> LabelMap {
        LabelMap {
            pairs: classes.iter().map(|c| (c.clone(), c.clone())).collect(),
        }
    }

    /// The shipped composite-protocol map.
    pub fn cde_default() -> LabelMap {
        LabelMap::parse(CDE_DEFAULT).expect("bundled map parses")
    }

    /// `source = target` per line, `#` comments.
    pub fn parse(text: &str) -> Result<LabelMap> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (s, t) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
                line: i + 1,
                msg: format!("expected `source = target`, got {line:?}"),
            })?;
            let (s, t) = (s.trim(), t.trim());
            if s.is_empty() || t.is_empty() {
                return Err(Error::ConfigLine { line: i + 1, msg: "empty class name".into() });
            }
            pairs.push((s.to_string(), t.to_string()));
        }
        LabelMap::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LabelMap> {
        let path = path.as_ref();
        LabelMap::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn target(&self, source: &str) -> Option<&str> {
        self.pairs.iter().find(|(s, _)| s == source).map(|(_, t)| t.as_str())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }
}

/// Relabels every record; the new class list holds the targets actually hit,
/// in map order, so labels stay contiguous.
pub fn apply_label_map(manifest: &SampleManifest, map: &LabelMap) -> Result<SampleManifest> {
    let mut targets: Vec<&str> = Vec::new();
    for (s, t) in map.pairs() {
        if manifest.class_names.contains(s) && !targets.contains(&t.as_str()) {
            targets.push(t);
        }
    }
    let index = manifest
        .class_names
        .iter()
        .map(|c| {
            let t = map.target(c).ok_or_else(|| Error::Mapping(format!("class {c:?} has no mapping")))?;
            Ok(targets.iter().position(|x| *x == t).expect("target collected above"))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut out = manifest.clone();
    out.class_names = targets.iter().map(|t| t.to_string()).collect();
    for r in &mut out.records {
        r.label = index[r.label];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleRecord;

    fn manifest(classes: &[&str], labels: &[usize]) -> SampleManifest {
        SampleManifest {
            class_names: classes.iter().map(|c| c.to_string()).collect(),
            records: labels
                .iter()
                .enumerate()
                .map(|(i, &label)| SampleRecord {
                    sample_id: format!("x{i}"),
                    subject_id: format!("s{}", i % 3),
                    label,
                    onset_path: "a".into(),
                    apex_path: "b".into(),
                })
                .collect(),
            protocol_tag: String::new(),
        }
    }

    #[test]
    fn identity_map_is_noop() {
        let m = manifest(&["a", "b", "c"], &[0, 2, 1, 1]);
        assert_eq!(apply_label_map(&m, &LabelMap::identity(&m.class_names)).unwrap(), m);
    }

    #[test]
    fn five_classes_collapse_to_three() {
        let m = manifest(&["happiness", "disgust", "surprise", "repression", "others"], &[0, 1, 2, 3, 4, 0]);
        let out = apply_label_map(&m, &LabelMap::cde_default()).unwrap();
        assert_eq!(out.class_names, vec!["positive", "negative", "surprise"]);
        let labels: Vec<usize> = out.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![0, 1, 2, 1, 1, 0]);
        assert_eq!(out.len(), m.len());
        let subjects = |m: &SampleManifest| m.records.iter().map(|r| r.subject_id.clone()).collect::<Vec<_>>();
        assert_eq!(subjects(&out), subjects(&m));
    }

    #[test]
    fn missing_class_is_error() {
        let m = manifest(&["a", "b"], &[0, 1]);
        let map = LabelMap::parse("a = x\n").unwrap();
        assert!(matches!(apply_label_map(&m, &map), Err(Error::Mapping(_))));
    }

    #[test]
    fn parse_reports_line() {
        assert!(matches!(LabelMap::parse("# c\na = b\nbroken\n"), Err(Error::ConfigLine { line: 3, .. })));
        assert!(LabelMap::parse("a = b\na = c\n").is_err());
    }
}
