//! Sample manifests: the CSV listing of onset/apex frame pairs per subject.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HEADER: [&str; 5] = ["sample_id", "subject_id", "label", "onset_path", "apex_path"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub subject_id: String,
    pub label: usize,
    pub onset_path: PathBuf,
    pub apex_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleManifest {
    pub class_names: Vec<String>,
    pub records: Vec<SampleRecord>,
    pub protocol_tag: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    sample_id: String,
    subject_id: String,
    label: String,
    onset_path: String,
    apex_path: String,
}

impl SampleManifest {
    /// Checks the structural invariants: at least two classes, labels in
    /// range, unique sample ids, and at least two subjects.
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::Input(format!(
                "manifest declares {} class(es), need at least 2",
                self.class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.label >= self.class_names.len() {
                return Err(Error::Input(format!("sample {} has label {} out of range", r.sample_id, r.label)));
            }
            if !seen.insert(&r.sample_id) {
                return Err(Error::Input(format!("duplicate sample id {}", r.sample_id)));
            }
        }
        let subjects = self.subjects().len();
        if subjects < 2 {
            return Err(Error::LosoInfeasible(subjects));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct subject ids in lexicographic order.
    pub fn subjects(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }
}

/// Reads a manifest. Frame paths are resolved against the manifest's
/// directory and must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SampleManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let err = |row: usize, msg: String| Error::Manifest { path: path.to_path_buf(), row, msg };

    let mut class_names = None;
    let mut protocol_tag = String::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.trim().strip_prefix('#') {
            Some(comment) if body.is_empty() => {
                let comment = comment.trim();
                if let Some(list) = comment.strip_prefix("classes:") {
                    class_names = Some(list.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect::<Vec<_>>());
                } else if let Some(tag) = comment.strip_prefix("protocol:") {
                    protocol_tag = tag.trim().to_string();
                }
            }
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let class_names: Vec<String> = class_names.ok_or_else(|| err(0, "missing `# classes:` line".into()))?;

    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(err(0, format!("expected header {}, got {}", HEADER.join(","), header.join(","))));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let n = i + 1;
        let row = row.map_err(|e| err(n, format!("malformed row: {e}")))?;
        let label = class_names
            .iter()
            .position(|c| *c == row.label)
            .ok_or_else(|| err(n, format!("label {:?} is not a declared class", row.label)))?;
        if !seen.insert(row.sample_id.clone()) {
            return Err(err(n, format!("duplicate sample id {:?}", row.sample_id)));
        }
        let onset_path = base.join(&row.onset_path);
        let apex_path = base.join(&row.apex_path);
        for p in [&onset_path, &apex_path] {
            if !p.is_file() {
                return Err(err(n, format!("frame {} does not exist", p.display())));
            }
        }
        records.push(SampleRecord {
            sample_id: row.sample_id,
            subject_id: row.subject_id,
            label,
            onset_path,
            apex_path,
        });
    }
    let manifest = SampleManifest { class_names, records, protocol_tag };
    manifest.validate()?;
    Ok(manifest)
}

/// Writes a manifest; frame paths under the manifest's directory are
/// stored relative to it.
pub fn write_manifest(manifest: &SampleManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
    };
    let mut out = format!("# classes: {}\n", manifest.class_names.join(","));
    if !manifest.protocol_tag.is_empty() {
        out.push_str(&format!("# protocol: {}\n", manifest.protocol_tag));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &manifest.records {
        w.serialize(Row {
            sample_id: r.sample_id.clone(),
            subject_id: r.subject_id.clone(),
            label: manifest.class_names[r.label].clone(),
            onset_path: rel(&r.onset_path),
            apex_path: rel(&r.apex_path),
        })?;
    }
    if manifest.records.is_empty() {
        w.write_record(HEADER)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, names: &[&str]) {
        for n in names {
            fs::write(dir.join(n), b"P5 1 1 255\n\0").unwrap();
        }
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.csv");
        fs::write(&p, body).unwrap();
        p
    }

    const HEAD: &str = "# classes: neg,pos\nsample_id,subject_id,label,onset_path,apex_path\n";

    #[test]
    fn loads_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a", "b"]);
        let p = write(dir.path(), &format!("{HEAD}x1,s1,neg,a,b\nx2,s2,pos,a,b\nx3,s2,neg,a,b\n"));
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[1].label, 1);
        assert_eq!(m.subjects(), vec!["s1", "s2"]);
        assert_eq!(m.records[0].onset_path, dir.path().join("a"));
    }

    #[test]
    fn unknown_label_names_row() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a", "b"]);
        let p = write(dir.path(), &format!("{HEAD}x1,s1,neg,a,b\nx2,s2,joy,a,b\n"));
        match load_manifest(&p).unwrap_err() {
            Error::Manifest { row, msg, .. } => {
                assert_eq!(row, 2);
                assert!(msg.contains("joy"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn single_subject_is_loso_infeasible() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a", "b"]);
        let p = write(dir.path(), &format!("{HEAD}x1,s1,neg,a,b\nx2,s1,pos,a,b\n"));
        assert!(matches!(load_manifest(&p), Err(Error::LosoInfeasible(1))));
    }

    #[test]
    fn rejects_duplicates_and_missing_frames() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a", "b"]);
        let p = write(dir.path(), &format!("{HEAD}x1,s1,neg,a,b\nx1,s2,pos,a,b\n"));
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 2, .. })));
        let p = write(dir.path(), &format!("{HEAD}x1,s1,neg,a,zz\n"));
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { row: 1, .. })));
        let p = write(dir.path(), "sample_id,subject_id,label,onset_path,apex_path\n");
        assert!(load_manifest(&p).is_err());
    }

    #[test]
    fn write_then_load_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a", "b", "c"]);
        let p = write(dir.path(), &format!("# classes: neg,pos\n# protocol: toy\nsample_id,subject_id,label,onset_path,apex_path\nx1,s1,neg,a,b\nx2,s2,pos,c,b\n"));
        let m = load_manifest(&p).unwrap();
        let q = dir.path().join("copy.csv");
        write_manifest(&m, &q).unwrap();
        assert_eq!(load_manifest(&q).unwrap(), m);
    }
}
