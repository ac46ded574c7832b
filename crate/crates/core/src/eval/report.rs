//! Full-pipeline evaluation and report rendering.

use std::collections::BTreeMap;
use std::path::Path;

use crate::head::{reject_decision, Decision, GaussianSet, MlpModel};
use crate::net::{Embedding, Network};
use crate::store::{parent_id, Dataset, Split};
use crate::{Error, Result};

use super::split::SplitAssignment;
use super::{per_class_f1, F1Stats};

/// Per-class metrics exposed in the report.
pub type ClassMetrics = F1Stats;

/// Everything the full-pipeline evaluation needs.
pub struct EvalInputs<'a> {
    pub network: &'a Network<f32>,
    pub mlp: &'a MlpModel,
    pub gaussians: Option<&'a GaussianSet>,
    pub dataset: &'a Dataset,
    pub assignment: &'a SplitAssignment,
    /// Examples from classes outside the training set, scored only for
    /// rejection accuracy. Requires `gaussians`.
    pub outliers: Option<&'a Dataset>,
    pub config_echo: String,
}

/// Evaluation outcome. With rejection enabled, classification metrics are
/// computed over the accepted examples (rejection never changes a predicted
/// label, it only gates whether the example is classified at all), and the
/// rejected count is reported alongside.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    /// (truth, predicted) -> count over accepted test examples.
    pub confusion: BTreeMap<(String, String), usize>,
    pub n_test: usize,
    pub n_accepted: usize,
    pub n_rejected: usize,
    /// Fraction of outlier examples rejected, when an outlier set was given.
    pub rejection_accuracy: Option<f64>,
    pub n_outliers: usize,
    pub config_echo: String,
}

impl EvalReport {
    /// Stable-order plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("macro_f1: {:.6}\n", self.macro_f1));
        out.push_str(&format!("test_examples: {}\n", self.n_test));
        out.push_str(&format!("accepted: {}\n", self.n_accepted));
        out.push_str(&format!("rejected_in_set: {}\n", self.n_rejected));
        if let Some(ra) = self.rejection_accuracy {
            out.push_str(&format!("rejection_accuracy: {ra:.6}\n"));
            out.push_str(&format!("outlier_examples: {}\n", self.n_outliers));
        }
        for (class, m) in &self.per_class {
            out.push_str(&format!(
                "class {class}: precision={:.6} recall={:.6} f1={:.6} support={}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!("config: {}\n", self.config_echo));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// Confusion matrix as CSV: header of predicted classes, one row per
    /// truth class.
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut classes: Vec<&str> = self
            .confusion
            .keys()
            .flat_map(|(t, p)| [t.as_str(), p.as_str()])
            .collect();
        classes.sort_unstable();
        classes.dedup();
        let mut out = String::from("truth\\predicted");
        for c in &classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for t in &classes {
            out.push_str(t);
            for p in &classes {
                let n = self
                    .confusion
                    .get(&(t.to_string(), p.to_string()))
                    .copied()
                    .unwrap_or(0);
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn select_split<'d>(dataset: &'d Dataset, assignment: &SplitAssignment, split: Split) -> Vec<&'d crate::dsp::MelExample> {
    dataset
        .examples
        .iter()
        .filter(|e| {
            assignment
                .of(&e.example_id)
                .or_else(|| assignment.of(parent_id(&e.example_id)))
                == Some(split)
        })
        .collect()
}

fn report_from_predictions(
    truth: Vec<String>,
    preds: Vec<String>,
    n_test: usize,
    n_rejected: usize,
    rejection_accuracy: Option<f64>,
    n_outliers: usize,
    config_echo: String,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Data(
            "all test examples were rejected; nothing to score".into(),
        ));
    }
    let per_class = per_class_f1(&preds, &truth);
    let macro_f1 = per_class.values().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    let mut confusion: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (t, p) in truth.iter().zip(preds.iter()) {
        *confusion.entry((t.clone(), p.clone())).or_default() += 1;
    }
    Ok(EvalReport {
        macro_f1,
        per_class,
        confusion,
        n_test,
        n_accepted: truth.len(),
        n_rejected,
        rejection_accuracy,
        n_outliers,
        config_echo,
    })
}

/// Evaluate the metric pipeline (CNN embeddings -> MLP -> optional Gaussian
/// rejection) on the test split.
pub fn evaluate(inputs: EvalInputs) -> Result<EvalReport> {
    let test = select_split(inputs.dataset, inputs.assignment, Split::Test);
    if test.is_empty() {
        return Err(Error::Data("no test examples in the split".into()));
    }
    if inputs.outliers.is_some() && inputs.gaussians.is_none() {
        return Err(Error::Config(
            "outlier scoring requires fitted class Gaussians".into(),
        ));
    }
    let embeddings = inputs.network.embed_examples(&test)?;
    for e in &embeddings {
        if let Some(label) = e.label.as_deref() {
            inputs.mlp.class_index(label)?;
        }
    }
    let matrix = crate::net::embeddings_matrix(&embeddings);
    let preds = inputs.mlp.predict_batch(&matrix)?;

    let mut truth_kept = Vec::new();
    let mut preds_kept = Vec::new();
    let mut n_rejected = 0usize;
    for (e, p) in embeddings.iter().zip(preds.iter()) {
        let keep = match inputs.gaussians {
            Some(g) => reject_decision(&e.values, p, g)? == Decision::Accept,
            None => true,
        };
        if keep {
            truth_kept.push(e.label.clone().expect("test embeddings carry labels"));
            preds_kept.push(p.clone());
        } else {
            n_rejected += 1;
        }
    }

    let (rejection_accuracy, n_outliers) = match (inputs.outliers, inputs.gaussians) {
        (Some(outliers), Some(g)) => {
            if outliers.is_empty() {
                return Err(Error::EmptyInput);
            }
            let refs: Vec<&crate::dsp::MelExample> = outliers.examples.iter().collect();
            let out_emb = inputs.network.embed_examples(&refs)?;
            let out_matrix = crate::net::embeddings_matrix(&out_emb);
            let out_preds = inputs.mlp.predict_batch(&out_matrix)?;
            let rejected = out_emb
                .iter()
                .zip(out_preds.iter())
                .filter(|(e, p)| {
                    matches!(reject_decision(&e.values, p, g), Ok(Decision::Reject))
                })
                .count();
            (
                Some(rejected as f64 / out_emb.len() as f64),
                out_emb.len(),
            )
        }
        _ => (None, 0),
    };

    report_from_predictions(
        truth_kept,
        preds_kept,
        test.len(),
        n_rejected,
        rejection_accuracy,
        n_outliers,
        inputs.config_echo,
    )
}

/// Evaluate the cross-entropy variant: the softmax head predicts directly.
/// `classes` must be the sorted class list the network was trained with.
pub fn evaluate_baseline(
    network: &Network<f32>,
    classes: &[String],
    dataset: &Dataset,
    assignment: &SplitAssignment,
    config_echo: String,
) -> Result<EvalReport> {
    let test = select_split(dataset, assignment, Split::Test);
    if test.is_empty() {
        return Err(Error::Data("no test examples in the split".into()));
    }
    let x = crate::net::batch_from_examples::<f32>(&test)?;
    let probs = network.softmax_batch(&x)?;
    if probs.ncols() != classes.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} classes", probs.ncols()),
            got: format!("{}", classes.len()),
        });
    }
    let preds: Vec<String> = probs
        .rows()
        .into_iter()
        .map(|row| {
            let (argmax, _) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty row");
            classes[argmax].clone()
        })
        .collect();
    let truth: Vec<String> = test.iter().map(|e| e.label.clone()).collect();
    report_from_predictions(truth, preds, test.len(), 0, None, 0, config_echo)
}

/// Embeddings of every example in a dataset split.
pub fn embed_split(
    network: &Network<f32>,
    dataset: &Dataset,
    assignment: &SplitAssignment,
    split: Split,
) -> Result<Vec<Embedding>> {
    let selected = select_split(dataset, assignment, split);
    if selected.is_empty() {
        return Err(Error::Data(format!(
            "no {} examples in the split",
            split.as_str()
        )));
    }
    network.embed_examples(&selected)
}
