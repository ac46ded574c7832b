//! Triplet machinery: distances, hardness classification, online semi-hard
//! mining, the margin-ranking loss and its dynamic margin schedule, and
//! class-balanced mini-batch construction.
//!
//! Mining compares plain Euclidean distances against the margin; the loss
//! itself operates on squared distances. Both views are kept explicit so the
//! two never get conflated.

mod batch;
mod loss;
mod miner;
mod scheduler;

pub use batch::{build_minibatch, BatchPlan, ClassIndex};
pub use loss::{triplet_loss, triplet_loss_grad};
pub use miner::{group_triplets, mine_semi_hard};
pub use scheduler::{scheduler_update, MarginState};

use ndarray::Array2;

use crate::{Error, Result};

/// Outcome of testing a triplet against the margin criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hardness {
    /// Negative closer to the anchor than the positive.
    Hard,
    /// Negative farther than the positive but inside the margin band.
    SemiHard,
    /// Constraint met: negative beyond the positive by at least the margin.
    Satisfied,
}

/// An (anchor, positive, negative) index triple over a batch, with the
/// Euclidean distances observed at mining time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub d_ap: f64,
    pub d_an: f64,
    pub hardness: Hardness,
}

/// Symmetric matrix of squared Euclidean distances between embedding rows.
pub fn pairwise_sq_distances(embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    let n = embeddings.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    Ok(out)
}

/// Classify a triplet from its plain Euclidean distances and the margin.
///
/// Boundaries are deterministic: `d_an == d_ap` counts as hard and
/// `d_an == d_ap + alpha` counts as satisfied.
pub fn classify_triplet(d_ap: f64, d_an: f64, alpha: f64) -> Result<Hardness> {
    if d_ap < 0.0 || d_an < 0.0 {
        return Err(Error::Data("distances must be nonnegative".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::Config("margin must be positive".into()));
    }
    if d_an <= d_ap {
        Ok(Hardness::Hard)
    } else if d_an < d_ap + alpha {
        Ok(Hardness::SemiHard)
    } else {
        Ok(Hardness::Satisfied)
    }
}
