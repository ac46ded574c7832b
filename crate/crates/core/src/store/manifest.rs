//! CSV dataset manifests.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::Split;

/// One recording: where it lives and what class it belongs to.
#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub example_id: String,
    pub audio_path: String,
    pub class_label: String,
    pub split: Option<Split>,
    pub duration_s: Option<f64>,
}

/// A parsed manifest; `base_dir` is the manifest's directory, against which
/// relative audio paths are resolved.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Load a comma-separated manifest with a header row. Required columns:
    /// `example_id`, `audio_path`, `class_label`; optional: `split`,
    /// `duration_s`. Ids must be unique and labels non-empty.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (id_col, path_col, label_col) = match (col("example_id"), col("audio_path"), col("class_label")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Data(format!(
                    "{}: header must contain example_id, audio_path, class_label",
                    path.display()
                )))
            }
        };
        let split_col = col("split");
        let dur_col = col("duration_s");

        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let get = |c: usize| record.get(c).unwrap_or("").to_string();
            let example_id = get(id_col);
            if example_id.is_empty() {
                return Err(Error::Data(format!("row {}: empty example_id", i + 2)));
            }
            if !seen.insert(example_id.clone()) {
                return Err(Error::Data(format!("duplicate example_id {example_id:?}")));
            }
            let class_label = get(label_col);
            if class_label.is_empty() {
                return Err(Error::Data(format!("{example_id}: empty class_label")));
            }
            let split = match split_col.map(get) {
                Some(s) if !s.is_empty() => Some(Split::parse(&s)?),
                _ => None,
            };
            let duration_s = match dur_col.map(get) {
                Some(s) if !s.is_empty() => Some(
                    s.parse::<f64>()
                        .map_err(|e| Error::Data(format!("{example_id}: duration_s: {e}")))?,
                ),
                _ => None,
            };
            rows.push(ManifestRow {
                example_id,
                audio_path: get(path_col),
                class_label,
                split,
                duration_s,
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { rows, base_dir })
    }

    /// Resolve a row's audio path against the manifest directory.
    pub fn resolve_path(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// (example_id, class_label) pairs, the splitting input.
    pub fn id_label_pairs(&self) -> Vec<(String, String)> {
        self.rows
            .iter()
            .map(|r| (r.example_id.clone(), r.class_label.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_required_and_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            "example_id,audio_path,class_label,split,duration_s\n\
             r1,audio/a.wav,wren,train,2.5\n\
             r2,audio/b.wav,crow,,\n",
        );
        let m = Manifest::load(&p).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[0].split, Some(Split::Train));
        assert_eq!(m.rows[0].duration_s, Some(2.5));
        assert_eq!(m.rows[1].split, None);
        assert!(m.resolve_path(&m.rows[0]).ends_with("audio/a.wav"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            "example_id,audio_path,class_label\nr1,a.wav,x\nr1,b.wav,y\n",
        );
        assert!(matches!(Manifest::load(&p), Err(Error::Data(_))));
    }

    #[test]
    fn empty_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            "example_id,audio_path,class_label\nr1,a.wav,\n",
        );
        assert!(matches!(Manifest::load(&p), Err(Error::Data(_))));
    }

    #[test]
    fn missing_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), "id,path\n1,a.wav\n");
        assert!(matches!(Manifest::load(&p), Err(Error::Data(_))));
    }
}
