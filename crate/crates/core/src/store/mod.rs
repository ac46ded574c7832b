//! Dataset manifests and the on-disk feature store.
//!
//! A manifest is a CSV of recordings (`example_id,audio_path,class_label`,
//! optional `split` and `duration_s`), with paths relative to the manifest's
//! directory. Feature extraction cuts each recording into segments named
//! `<example_id>#<k>` and writes one data file per segment: raw
//! little-endian f32 in `[mel][frame][channel]` order, listed in an
//! `index.json` that maps example ids to relative files, labels, splits and
//! shapes. The index is replaced atomically on flush.

mod manifest;

pub use manifest::{Manifest, ManifestRow};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::config::FeatureConfig;
use crate::dsp::{self, MelExample, NUM_CHANNELS};
use crate::{Error, Result};

/// Dataset partition tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Segment ids are `<parent>#<k>`; strip the suffix to recover the
/// manifest row the segment came from.
pub fn parent_id(example_id: &str) -> &str {
    match example_id.rfind('#') {
        Some(pos) => &example_id[..pos],
        None => example_id,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreIndex {
    version: u32,
    entries: BTreeMap<String, IndexEntry>,
}

const INDEX_FILE: &str = "index.json";
const DATA_DIR: &str = "data";

/// Feature store rooted at a directory.
#[derive(Debug)]
pub struct FeatureStore {
    dir: PathBuf,
    index: StoreIndex,
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Filesystem-safe data file name: sanitized id plus a short hash so that
/// distinct ids can never collide after sanitization.
fn data_file_name(example_id: &str) -> String {
    let safe: String = example_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{}-{:08x}.f32", safe, fnv64(example_id.as_bytes()) as u32)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl FeatureStore {
    /// Create an empty store (directory may exist but must not already hold
    /// an index).
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join(DATA_DIR)).map_err(|e| Error::io(dir, e))?;
        if dir.join(INDEX_FILE).exists() {
            return Err(Error::Data(format!(
                "{} already contains a feature store",
                dir.display()
            )));
        }
        let store = Self {
            dir: dir.to_path_buf(),
            index: StoreIndex {
                version: 1,
                entries: BTreeMap::new(),
            },
        };
        store.flush_index()?;
        Ok(store)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: StoreIndex = serde_json::from_str(&text)
            .map_err(|e| Error::CorruptStore(format!("{}: {e}", path.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
        })
    }

    pub fn open_or_create(dir: &Path) -> Result<Self> {
        if dir.join(INDEX_FILE).exists() {
            Self::open(dir)
        } else {
            Self::create(dir)
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.index.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, example_id: &str) -> Option<&IndexEntry> {
        self.index.entries.get(example_id)
    }

    /// Persist the index atomically.
    pub fn flush_index(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.index)
            .map_err(|e| Error::Data(format!("index: {e}")))?;
        write_atomic(&self.dir.join(INDEX_FILE), text.as_bytes())
    }

    /// Write one example's tensor (raw little-endian f32) and index it.
    /// The data file write is atomic; call [`Self::flush_index`] after a
    /// batch of writes.
    pub fn write_example(&mut self, example: &MelExample, split: Option<Split>) -> Result<()> {
        let shape = example.tensor.shape();
        let file = data_file_name(&example.example_id);
        let path = self.dir.join(DATA_DIR).join(&file);
        let mut bytes = Vec::with_capacity(example.tensor.len() * 4);
        for v in example.tensor.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&path, &bytes)?;
        self.index.entries.insert(
            example.example_id.clone(),
            IndexEntry {
                file: format!("{DATA_DIR}/{file}"),
                label: example.label.clone(),
                split,
                shape: [shape[0], shape[1], shape[2]],
            },
        );
        Ok(())
    }

    /// Read one example back, validating size against the index.
    pub fn read_example(&self, example_id: &str) -> Result<MelExample> {
        let entry = self
            .index
            .entries
            .get(example_id)
            .ok_or_else(|| Error::Data(format!("no such example {example_id:?}")))?;
        let path = self.dir.join(&entry.file);
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::CorruptStore(format!("{}: {e}", path.display())))?;
        let expected = entry.shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::CorruptStore(format!(
                "{}: {} bytes where {} were expected",
                path.display(),
                bytes.len(),
                expected
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor =
            Array3::from_shape_vec((entry.shape[0], entry.shape[1], entry.shape[2]), values)
                .expect("shape checked above");
        Ok(MelExample {
            tensor,
            label: entry.label.clone(),
            example_id: example_id.to_string(),
        })
    }

    /// Attach split tags from a parent-id assignment.
    pub fn assign_splits(&mut self, lookup: &dyn Fn(&str) -> Option<Split>) -> usize {
        let mut n = 0;
        for (id, entry) in self.index.entries.iter_mut() {
            if let Some(split) = lookup(parent_id(id)) {
                entry.split = Some(split);
                n += 1;
            }
        }
        n
    }

    /// Check every store invariant; returns a report rather than failing on
    /// the first problem.
    pub fn verify(&self) -> StoreReport {
        let mut report = StoreReport::default();
        report.entries = self.len();
        for (id, entry) in &self.index.entries {
            let path = self.dir.join(&entry.file);
            if entry.shape[2] != NUM_CHANNELS {
                report
                    .problems
                    .push(format!("{id}: unexpected channel count {}", entry.shape[2]));
            }
            match std::fs::metadata(&path) {
                Err(_) => report.problems.push(format!("{id}: missing file {}", entry.file)),
                Ok(meta) => {
                    let expected = entry.shape.iter().product::<usize>() as u64 * 4;
                    if meta.len() != expected {
                        report.problems.push(format!(
                            "{id}: {} is {} bytes, expected {expected}",
                            entry.file,
                            meta.len()
                        ));
                    } else if let Ok(ex) = self.read_example(id) {
                        if ex.tensor.iter().any(|v| !v.is_finite()) {
                            report.problems.push(format!("{id}: non-finite values"));
                        }
                    }
                }
            }
        }
        // Orphan data files not referenced by the index.
        if let Ok(dir) = std::fs::read_dir(self.dir.join(DATA_DIR)) {
            let referenced: std::collections::BTreeSet<&str> = self
                .index
                .entries
                .values()
                .filter_map(|e| e.file.strip_prefix(&format!("{DATA_DIR}/")))
                .collect();
            for f in dir.flatten() {
                let name = f.file_name();
                let name = name.to_string_lossy();
                if !referenced.contains(name.as_ref()) {
                    report.problems.push(format!("orphan data file {name}"));
                }
            }
        }
        report
    }

    /// Load examples into memory, optionally filtered by split tag.
    pub fn load_dataset(&self, split: Option<Split>) -> Result<Dataset> {
        let mut examples = Vec::new();
        for (id, entry) in &self.index.entries {
            if let Some(want) = split {
                if entry.split != Some(want) {
                    continue;
                }
            }
            examples.push(self.read_example(id)?);
        }
        Ok(Dataset { examples })
    }
}

/// Outcome of a store verification pass.
#[derive(Debug, Default)]
pub struct StoreReport {
    pub entries: usize,
    pub problems: Vec<String>,
}

impl StoreReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "entries: {}\nproblems: {}\n",
            self.entries,
            self.problems.len()
        );
        for p in &self.problems {
            out.push_str(p);
            out.push('\n');
        }
        out
    }
}

/// An in-memory collection of labeled feature tensors.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<MelExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.label.as_str()).collect()
    }

    /// Sorted unique class labels.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self
            .examples
            .iter()
            .map(|e| e.label.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        c.sort();
        c
    }

    /// Class list plus the class position of every example.
    pub fn class_targets(&self) -> (Vec<String>, Vec<usize>) {
        let classes = self.classes();
        let targets = self
            .examples
            .iter()
            .map(|e| classes.binary_search(&e.label).expect("label in class list"))
            .collect();
        (classes, targets)
    }
}

/// Extract features for every manifest row into the store.
///
/// Audio rows are read as WAV, resampled to the configured rate, segmented
/// and converted; rows whose path ends in `.mel40` are ingested as
/// pre-computed raw f32 `[mel][frames]` matrices (frame count inferred from
/// the file size) with the frame axis repeated or cropped to the configured
/// length. Returns the number of feature examples written.
pub fn extract_features(
    manifest: &Manifest,
    cfg: &FeatureConfig,
    store: &mut FeatureStore,
) -> Result<usize> {
    use rayon::prelude::*;
    cfg.validate()?;

    let rows: Vec<&ManifestRow> = manifest.rows.iter().collect();
    let results: Vec<Result<Vec<MelExample>>> = rows
        .par_iter()
        .map(|row| extract_row(manifest, row, cfg))
        .collect();

    let mut written = 0;
    for (row, result) in rows.iter().zip(results) {
        let split = row.split;
        for example in result? {
            store.write_example(&example, split)?;
            written += 1;
        }
    }
    store.flush_index()?;
    Ok(written)
}

fn extract_row(manifest: &Manifest, row: &ManifestRow, cfg: &FeatureConfig) -> Result<Vec<MelExample>> {
    let path = manifest.resolve_path(row);
    if path.extension().and_then(|e| e.to_str()) == Some("mel40") {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % (4 * cfg.mel_bands) != 0 || bytes.is_empty() {
            return Err(Error::Data(format!(
                "{}: size {} is not a whole number of {}-band frames",
                path.display(),
                bytes.len(),
                cfg.mel_bands
            )));
        }
        let frames = bytes.len() / (4 * cfg.mel_bands);
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let matrix = ndarray::Array2::from_shape_vec((cfg.mel_bands, frames), values)
            .expect("size checked");
        let ex = dsp::mel_example_from_matrix(&matrix, cfg, &format!("{}#0", row.example_id), &row.class_label)?;
        return Ok(vec![ex]);
    }

    let samples = dsp::read_wav_mono(&path, cfg.sample_rate)?;
    let segments = dsp::load_and_segment(
        &samples,
        cfg.sample_rate,
        cfg.segment_seconds,
        &row.example_id,
        &row.class_label,
    )?;
    segments.iter().map(|seg| dsp::mel_three_channel(seg, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn example(id: &str, label: &str, fill: f32) -> MelExample {
        MelExample {
            tensor: Array3::from_elem((4, 5, 3), fill),
            label: label.into(),
            example_id: id.into(),
        }
    }

    #[test]
    fn write_read_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::create(dir.path()).unwrap();
        let mut ex = example("a#0", "x", 0.0);
        for (i, v) in ex.tensor.iter_mut().enumerate() {
            *v = (i as f32).sin() * 1e-3;
        }
        store.write_example(&ex, Some(Split::Train)).unwrap();
        store.flush_index().unwrap();
        let back = store.read_example("a#0").unwrap();
        assert_eq!(back.tensor, ex.tensor);
        assert_eq!(back.label, "x");
    }

    #[test]
    fn truncated_file_is_a_corrupt_store_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::create(dir.path()).unwrap();
        store.write_example(&example("a#0", "x", 0.5), None).unwrap();
        store.flush_index().unwrap();
        let file = dir.path().join(&store.entry("a#0").unwrap().file);
        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            store.read_example("a#0"),
            Err(Error::CorruptStore(_))
        ));
        let report = store.verify();
        assert!(!report.ok());
    }

    #[test]
    fn missing_file_is_listed_in_verify_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::create(dir.path()).unwrap();
        store.write_example(&example("a#0", "x", 0.1), None).unwrap();
        store.write_example(&example("b#0", "y", 0.2), None).unwrap();
        store.flush_index().unwrap();
        std::fs::remove_file(dir.path().join(&store.entry("b#0").unwrap().file)).unwrap();
        let report = store.verify();
        assert_eq!(report.problems.len(), 1);
        assert!(report.problems[0].contains("b#0"));
    }

    #[test]
    fn distinct_ids_never_collide_on_disk() {
        assert_ne!(data_file_name("a#0"), data_file_name("a_0"));
        assert_ne!(data_file_name("x/y"), data_file_name("x_y"));
    }

    #[test]
    fn parent_id_strips_segment_suffix() {
        assert_eq!(parent_id("rec01#3"), "rec01");
        assert_eq!(parent_id("plain"), "plain");
        assert_eq!(parent_id("a#b#2"), "a#b");
    }

    #[test]
    fn split_filtered_loading() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::create(dir.path()).unwrap();
        store
            .write_example(&example("a#0", "x", 0.1), Some(Split::Train))
            .unwrap();
        store
            .write_example(&example("b#0", "x", 0.2), Some(Split::Test))
            .unwrap();
        store.flush_index().unwrap();
        let train = store.load_dataset(Some(Split::Train)).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(train.examples[0].example_id, "a#0");
        let all = store.load_dataset(None).unwrap();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn dataset_class_targets_are_sorted() {
        let ds = Dataset {
            examples: vec![
                example("1", "wren", 0.0),
                example("2", "crow", 0.0),
                example("3", "wren", 0.0),
            ],
        };
        let (classes, targets) = ds.class_targets();
        assert_eq!(classes, vec!["crow".to_string(), "wren".to_string()]);
        assert_eq!(targets, vec![1, 0, 1]);
    }
}
