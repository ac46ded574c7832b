//! Class-balanced mini-batch construction.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Example indices grouped by class label, in sorted label order.
#[derive(Debug, Clone, Default)]
pub struct ClassIndex {
    by_class: BTreeMap<String, Vec<usize>>,
}

impl ClassIndex {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            by_class.entry(l.as_ref().to_string()).or_default().push(i);
        }
        Self { by_class }
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.by_class.keys().map(String::as_str)
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn len(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_class.is_empty()
    }

    pub fn examples_of(&self, class: &str) -> Option<&[usize]> {
        self.by_class.get(class).map(Vec::as_slice)
    }
}

/// One mini-batch: a fixed number of draws per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    /// (class label, drawn dataset indices), in sorted class order.
    pub per_class: Vec<(String, Vec<usize>)>,
}

impl BatchPlan {
    /// Flattened dataset indices in deterministic order.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect()
    }

    /// Class id (position in sorted class order) per flattened example.
    pub fn flat_class_ids(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .flat_map(|(cid, (_, idx))| std::iter::repeat(cid).take(idx.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draw a class-balanced mini-batch: exactly `per_class` examples from every
/// class, sampled without replacement where the class is large enough and
/// with replacement otherwise.
pub fn build_minibatch(
    index: &ClassIndex,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPlan> {
    if index.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut plan = Vec::with_capacity(index.num_classes());
    for (class, members) in &index.by_class {
        if members.is_empty() {
            return Err(Error::ClassTooSmall(class.clone()));
        }
        let draws: Vec<usize> = if members.len() >= per_class {
            sample(rng, members.len(), per_class)
                .into_iter()
                .map(|i| members[i])
                .collect()
        } else {
            (0..per_class)
                .map(|_| members[rng.gen_range(0..members.len())])
                .collect()
        };
        plan.push((class.clone(), draws));
    }
    Ok(BatchPlan { per_class: plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(13)
    }

    fn labels(counts: &[(&str, usize)]) -> Vec<String> {
        counts
            .iter()
            .flat_map(|(c, n)| std::iter::repeat(c.to_string()).take(*n))
            .collect()
    }

    #[test]
    fn twelve_classes_give_sixty_examples() {
        let labels: Vec<String> = (0..12)
            .flat_map(|c| std::iter::repeat(format!("c{c:02}")).take(8))
            .collect();
        let index = ClassIndex::from_labels(&labels);
        let plan = build_minibatch(&index, 5, &mut rng()).unwrap();
        assert_eq!(plan.len(), 60);
        for (_, draws) in &plan.per_class {
            assert_eq!(draws.len(), 5);
            // Large enough class: no repeats.
            let mut d = draws.clone();
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 5);
        }
    }

    #[test]
    fn small_class_samples_with_replacement() {
        let labels = labels(&[("a", 3), ("b", 10)]);
        let index = ClassIndex::from_labels(&labels);
        let plan = build_minibatch(&index, 5, &mut rng()).unwrap();
        let (class, draws) = &plan.per_class[0];
        assert_eq!(class, "a");
        assert_eq!(draws.len(), 5);
        // All draws come from the 3 members; with 5 draws from 3 members
        // at least one repeats.
        assert!(draws.iter().all(|&i| i < 3));
        let mut d = draws.clone();
        d.sort_unstable();
        d.dedup();
        assert!(d.len() < 5);
    }

    #[test]
    fn same_seed_gives_identical_plan() {
        let labels = labels(&[("a", 9), ("b", 4), ("c", 20)]);
        let index = ClassIndex::from_labels(&labels);
        let a = build_minibatch(&index, 5, &mut rng()).unwrap();
        let b = build_minibatch(&index, 5, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let index = ClassIndex::from_labels::<String>(&[]);
        assert!(matches!(
            build_minibatch(&index, 5, &mut rng()),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn flat_views_align() {
        let labels = labels(&[("a", 6), ("b", 6)]);
        let index = ClassIndex::from_labels(&labels);
        let plan = build_minibatch(&index, 5, &mut rng()).unwrap();
        let flat = plan.flat_indices();
        let ids = plan.flat_class_ids();
        assert_eq!(flat.len(), ids.len());
        for (i, cid) in ids.iter().enumerate() {
            let expect = if flat[i] < 6 { 0 } else { 1 };
            assert_eq!(*cid, expect);
        }
    }
}
