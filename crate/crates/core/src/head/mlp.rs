//! The embedding-space MLP classifier.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::MlpConfig;
use crate::net::checkpoint::{read_container, write_container, ArrayEntry};
use crate::net::ops::{relu2, relu2_backward, softmax, softmax_cross_entropy, Dense};
use crate::net::opt::Adam;
use crate::net::{Embedding, Param};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpMeta {
    input_dim: usize,
    hidden_units: usize,
    classes: Vec<String>,
    cfg: MlpConfig,
}

/// Two-layer softmax classifier over embeddings. Runs in f64.
#[derive(Debug, Clone)]
pub struct MlpModel {
    hidden: Dense<f64>,
    output: Dense<f64>,
    meta: MlpMeta,
}

impl MlpModel {
    pub fn classes(&self) -> &[String] {
        &self.meta.classes
    }

    pub fn input_dim(&self) -> usize {
        self.meta.input_dim
    }

    /// Index of a known class label.
    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.meta
            .classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let h = relu2(self.hidden.forward(x));
        self.output.forward(&h)
    }

    /// Class probabilities for a batch of embedding rows.
    pub fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.meta.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{}-D embeddings", self.meta.input_dim),
                got: format!("{}-D", x.ncols()),
            });
        }
        Ok(softmax(&self.forward(x)))
    }

    /// Predicted label and probability vector for one embedding.
    pub fn predict(&self, values: &[f64]) -> Result<(String, Vec<f64>)> {
        let x = Array2::from_shape_vec((1, values.len()), values.to_vec())
            .expect("row vector");
        let p = self.probabilities(&x)?;
        let row = p.row(0);
        let (argmax, _) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty probability row");
        Ok((self.meta.classes[argmax].clone(), row.to_vec()))
    }

    /// Predicted labels for a batch of embeddings.
    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Vec<String>> {
        let p = self.probabilities(x)?;
        Ok(p.rows()
            .into_iter()
            .map(|row| {
                let (argmax, _) = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .expect("non-empty probability row");
                self.meta.classes[argmax].clone()
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("mlp meta: {e}")))?;
        let params = [&self.hidden.w, &self.hidden.b, &self.output.w, &self.output.b];
        let arrays: Vec<ArrayEntry<f64>> = params
            .iter()
            .map(|p| ArrayEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.iter().copied().collect(),
            })
            .collect();
        write_container(path, "mlp", self.meta.cfg.seed, &config, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (_, config, arrays) = read_container::<f64>(path, "mlp")?;
        let meta: MlpMeta = serde_json::from_value(config)
            .map_err(|e| Error::Checkpoint(format!("{}: mlp meta: {e}", path.display())))?;
        let mut rng = ChaCha8Rng::seed_from_u64(meta.cfg.seed);
        let mut model = MlpModel {
            hidden: Dense::new("hidden", meta.input_dim, meta.hidden_units, &mut rng),
            output: Dense::new("output", meta.hidden_units, meta.classes.len(), &mut rng),
            meta,
        };
        {
            let mut params: Vec<&mut Param<f64>> = vec![
                &mut model.hidden.w,
                &mut model.hidden.b,
                &mut model.output.w,
                &mut model.output.b,
            ];
            for entry in &arrays {
                let p = params
                    .iter_mut()
                    .find(|p| p.name == entry.name)
                    .ok_or_else(|| {
                        Error::Checkpoint(format!("{}: unknown array {:?}", path.display(), entry.name))
                    })?;
                if p.value.shape() != entry.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{}: array {:?} shape mismatch",
                        path.display(),
                        entry.name
                    )));
                }
                for (dst, src) in p.value.iter_mut().zip(entry.data.iter()) {
                    *dst = *src;
                }
            }
            if arrays.len() != params.len() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected {} arrays, found {}",
                    path.display(),
                    params.len(),
                    arrays.len()
                )));
            }
        }
        Ok(model)
    }
}

/// Train the MLP on labeled embeddings. Deterministic under the config seed.
pub fn train_mlp(embeddings: &[Embedding], cfg: &MlpConfig) -> Result<MlpModel> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let input_dim = embeddings[0].dim();
    let mut classes: Vec<String> = Vec::new();
    for e in embeddings {
        let label = e
            .label
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{}: unlabeled embedding", e.example_id)))?;
        if !classes.contains(label) {
            classes.push(label.clone());
        }
        if e.dim() != input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{input_dim}-D"),
                got: format!("{}-D", e.dim()),
            });
        }
    }
    classes.sort();
    if classes.len() < 2 {
        return Err(Error::Data("training requires at least 2 classes".into()));
    }

    let n = embeddings.len();
    let mut x = Array2::<f64>::zeros((n, input_dim));
    let mut targets = Vec::with_capacity(n);
    for (i, e) in embeddings.iter().enumerate() {
        for (k, v) in e.values.iter().enumerate() {
            x[[i, k]] = *v;
        }
        let label = e.label.as_ref().expect("checked above");
        targets.push(classes.binary_search(label).expect("label registered"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel {
        hidden: Dense::new("hidden", input_dim, cfg.hidden_units, &mut rng),
        output: Dense::new("output", cfg.hidden_units, classes.len(), &mut rng),
        meta: MlpMeta {
            input_dim,
            hidden_units: cfg.hidden_units,
            classes,
            cfg: cfg.clone(),
        },
    };
    let mut opt = Adam::<f64>::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let two_l2 = 2.0 * cfg.l2;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut xb = Array2::<f64>::zeros((chunk.len(), input_dim));
            let mut tb = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).assign(&x.row(i));
                tb.push(targets[i]);
            }
            // Forward with caches.
            let h = relu2(model.hidden.forward(&xb));
            let logits = model.output.forward(&h);
            let (_, dlogits) = softmax_cross_entropy(&logits, &tb);
            // Backward.
            for p in [&mut model.hidden.w, &mut model.hidden.b, &mut model.output.w, &mut model.output.b] {
                p.zero_grad();
            }
            let dh = model.output.backward(&h, &dlogits);
            let dh = relu2_backward(&h, &dh);
            let _ = model.hidden.backward(&xb, &dh);
            // L2 penalty on weights.
            for p in [&mut model.hidden.w, &mut model.output.w] {
                let value = p.value.clone();
                p.grad.zip_mut_with(&value, |g, v| *g += two_l2 * *v);
            }
            let mut params: Vec<&mut Param<f64>> = vec![
                &mut model.hidden.w,
                &mut model.hidden.b,
                &mut model.output.w,
                &mut model.output.b,
            ];
            opt.step(&mut params);
        }
    }
    Ok(model)
}
