//! Margin-ranking loss over triplets of embeddings.

use ndarray::Array2;

use super::Triplet;

fn sq_dist(embeddings: &Array2<f64>, i: usize, j: usize) -> f64 {
    embeddings
        .row(i)
        .iter()
        .zip(embeddings.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Sum over triplets of `max(||a-p||^2 - ||a-n||^2 + alpha, 0)`.
///
/// Distances are recomputed from the embeddings passed in, not from the
/// distances cached at mining time, so the loss always reflects the current
/// forward pass. An empty triplet list yields 0.
pub fn triplet_loss(embeddings: &Array2<f64>, triplets: &[Triplet], alpha: f64) -> f64 {
    triplets
        .iter()
        .map(|t| (sq_dist(embeddings, t.anchor, t.positive) - sq_dist(embeddings, t.anchor, t.negative) + alpha).max(0.0))
        .sum()
}

/// Loss together with its gradient w.r.t. every embedding row.
///
/// For an active triplet (positive hinge term):
/// `dL/da = 2(n - p)`, `dL/dp = -2(a - p)`, `dL/dn = 2(a - n)`.
/// Inactive triplets contribute nothing.
pub fn triplet_loss_grad(
    embeddings: &Array2<f64>,
    triplets: &[Triplet],
    alpha: f64,
) -> (f64, Array2<f64>) {
    let mut grad = Array2::<f64>::zeros(embeddings.raw_dim());
    let mut loss = 0.0;
    let dim = embeddings.ncols();
    for t in triplets {
        let term = sq_dist(embeddings, t.anchor, t.positive)
            - sq_dist(embeddings, t.anchor, t.negative)
            + alpha;
        if term <= 0.0 {
            continue;
        }
        loss += term;
        for k in 0..dim {
            let a = embeddings[[t.anchor, k]];
            let p = embeddings[[t.positive, k]];
            let n = embeddings[[t.negative, k]];
            grad[[t.anchor, k]] += 2.0 * (n - p);
            grad[[t.positive, k]] += -2.0 * (a - p);
            grad[[t.negative, k]] += 2.0 * (a - n);
        }
    }
    (loss, grad)
}
