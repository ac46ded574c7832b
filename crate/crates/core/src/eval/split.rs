//! Per-class stratified splitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SplitRatios;
use crate::store::Split;
use crate::{Error, Result};

/// A deterministic example-to-partition assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub map: BTreeMap<String, Split>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn of(&self, example_id: &str) -> Option<Split> {
        self.map.get(example_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.map.values().filter(|&&s| s == split).count()
    }

    /// Write as CSV (`example_id,split`), sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("example_id,split\n");
        for (id, split) in &self.map {
            out.push_str(&format!("{id},{}\n", split.as_str()));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("example_id,split") => {}
            other => {
                return Err(Error::Data(format!(
                    "{}: unexpected header {other:?}",
                    path.display()
                )))
            }
        }
        let mut map = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let (id, split) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("{}: row {}", path.display(), i + 2)))?;
            map.insert(id.to_string(), Split::parse(split)?);
        }
        if map.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            map,
            ratios: SplitRatios::default(),
            seed: 0,
        })
    }
}

/// Randomly split examples per class: `round(trained * n)` to train first,
/// then `round(val * n)` to validation, the remainder to test. Classes with
/// fewer than 3 examples are rejected by name.
pub fn stratified_split(
    id_labels: &[(String, String)],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    ratios.validate()?;
    if id_labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, label) in id_labels {
        by_class.entry(label).or_default().push(id);
    }
    for (class, members) in &by_class {
        if members.len() < 3 {
            return Err(Error::ClassTooSmall(format!(
                "class {class:?} has {} examples, needs at least 3",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    for (_, mut members) in by_class {
        members.sort_unstable();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_val = (ratios.val * n as f64).round() as usize;
        let (n_train, n_val) = clamp_counts(n, n_train, n_val);
        for (i, id) in members.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            map.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment { map, ratios, seed })
}

/// Rounding can momentarily overshoot `n`; keep at least one test example
/// worth of room by trimming the validation count first.
fn clamp_counts(n: usize, n_train: usize, n_val: usize) -> (usize, usize) {
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    (n_train, n_val)
}
