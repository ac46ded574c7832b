//! Per-class Gaussian distance models for open-set rejection.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::Embedding;
use crate::{Error, Result};

/// Variance floor for degenerate (constant-distance) validation sets.
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// One class's distance model: the mean of its training embeddings and a
/// Gaussian (`mu`, `sigma2`, maximum-likelihood fit: variance divided by n)
/// over validation-embedding distances to that mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub class_label: String,
    pub mean_embedding: Vec<f64>,
    pub mu: f64,
    pub sigma2: f64,
}

/// The fitted models for every class, keyed by label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianSet {
    pub by_class: BTreeMap<String, ClassGaussian>,
}

/// Accept/reject outcome of the open-set check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Fit a [`ClassGaussian`] per class: the mean embedding over the training
/// split, and (mu, sigma2) over validation distances to that mean. Every
/// training class needs at least two validation embeddings; offending
/// classes are listed in the error.
pub fn fit_class_gaussians(
    train: &[Embedding],
    validation: &[Embedding],
) -> Result<GaussianSet> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_class: BTreeMap<String, Vec<&Embedding>> = BTreeMap::new();
    for e in train {
        let label = e
            .label
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{}: unlabeled embedding", e.example_id)))?;
        by_class.entry(label.clone()).or_default().push(e);
    }
    let mut val_by_class: BTreeMap<&str, Vec<&Embedding>> = BTreeMap::new();
    for e in validation {
        if let Some(label) = e.label.as_deref() {
            val_by_class.entry(label).or_default().push(e);
        }
    }

    let too_small: Vec<&str> = by_class
        .keys()
        .filter(|c| val_by_class.get(c.as_str()).map_or(0, Vec::len) < 2)
        .map(String::as_str)
        .collect();
    if !too_small.is_empty() {
        return Err(Error::ClassTooSmall(format!(
            "classes with fewer than 2 validation embeddings: {}",
            too_small.join(", ")
        )));
    }

    let dim = train[0].dim();
    let mut out = BTreeMap::new();
    for (label, members) in by_class {
        let mut mean = vec![0.0f64; dim];
        for e in &members {
            for (m, v) in mean.iter_mut().zip(e.values.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= members.len() as f64;
        }
        let distances: Vec<f64> = val_by_class[label.as_str()]
            .iter()
            .map(|e| euclidean(&e.values, &mean))
            .collect();
        let n = distances.len() as f64;
        let mu = distances.iter().sum::<f64>() / n;
        let sigma2 = (distances.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n)
            .max(SIGMA2_FLOOR);
        out.insert(
            label.clone(),
            ClassGaussian {
                class_label: label,
                mean_embedding: mean,
                mu,
                sigma2,
            },
        );
    }
    Ok(GaussianSet { by_class: out })
}

impl GaussianSet {
    /// Peak-normalized likelihood of an embedding's distance under the
    /// predicted class's Gaussian: `exp(-(d - mu)^2 / (2 sigma2))`, which is
    /// 1 at `d = mu` regardless of the Gaussian's scale.
    pub fn likelihood(&self, embedding: &[f64], predicted_label: &str) -> Result<f64> {
        let g = self
            .by_class
            .get(predicted_label)
            .ok_or_else(|| Error::UnknownClass(predicted_label.to_string()))?;
        let d = euclidean(embedding, &g.mean_embedding);
        Ok((-(d - g.mu) * (d - g.mu) / (2.0 * g.sigma2)).exp())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("gaussians: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: GaussianSet = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for (label, g) in &set.by_class {
            if g.sigma2 <= 0.0 {
                return Err(Error::Data(format!("{label}: sigma2 must be positive")));
            }
        }
        Ok(set)
    }
}

/// Reject an embedding whose distance to the predicted class mean has a
/// peak-normalized likelihood below 0.5; the boundary itself accepts.
/// Equivalently: reject iff `(d - mu)^2 > 2 ln(2) sigma2`.
pub fn reject_decision(
    embedding: &[f64],
    predicted_label: &str,
    gaussians: &GaussianSet,
) -> Result<Decision> {
    let g = gaussians
        .by_class
        .get(predicted_label)
        .ok_or_else(|| Error::UnknownClass(predicted_label.to_string()))?;
    let d = euclidean(embedding, &g.mean_embedding);
    let dev = d - g.mu;
    if dev * dev > 2.0 * std::f64::consts::LN_2 * g.sigma2 {
        Ok(Decision::Reject)
    } else {
        Ok(Decision::Accept)
    }
}
