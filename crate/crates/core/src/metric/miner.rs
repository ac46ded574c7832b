//! Online semi-hard triplet mining over a mini-batch of embeddings.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Result;

use super::{classify_triplet, pairwise_sq_distances, Hardness, Triplet};

/// Mine semi-hard triplets from a batch of embeddings.
///
/// Every ordered same-class pair becomes an (anchor, positive) candidate;
/// for each, the negatives that violate the constraint without crossing the
/// positive (`d_ap < d_an < d_ap + alpha`) are collected and one is chosen
/// uniformly at random. Pairs without a semi-hard negative are dropped. With
/// fewer than two classes the result is empty.
pub fn mine_semi_hard(
    embeddings: &Array2<f64>,
    labels: &[usize],
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    assert_eq!(
        embeddings.nrows(),
        labels.len(),
        "one label per embedding row"
    );
    let sq = pairwise_sq_distances(embeddings)?;
    let n = labels.len();
    let mut out = Vec::new();
    let mut candidates = Vec::new();
    for anchor in 0..n {
        for positive in 0..n {
            if positive == anchor || labels[positive] != labels[anchor] {
                continue;
            }
            let d_ap = sq[[anchor, positive]].sqrt();
            candidates.clear();
            for negative in 0..n {
                if labels[negative] == labels[anchor] {
                    continue;
                }
                let d_an = sq[[anchor, negative]].sqrt();
                if classify_triplet(d_ap, d_an, alpha)? == Hardness::SemiHard {
                    candidates.push((negative, d_an));
                }
            }
            if candidates.is_empty() {
                continue;
            }
            let (negative, d_an) = candidates[rng.gen_range(0..candidates.len())];
            out.push(Triplet {
                anchor,
                positive,
                negative,
                d_ap,
                d_an,
                hardness: Hardness::SemiHard,
            });
        }
    }
    Ok(out)
}

/// Split mined triplets into consecutive groups of at most `cap` for loss
/// evaluation, preserving enumeration order.
pub fn group_triplets(triplets: &[Triplet], cap: usize) -> Vec<&[Triplet]> {
    assert!(cap > 0, "triplet group cap must be positive");
    triplets.chunks(cap).collect()
}
