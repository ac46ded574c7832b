//! Splits, scoring and report generation.

mod report;
mod split;

pub use report::{embed_split, evaluate, evaluate_baseline, ClassMetrics, EvalInputs, EvalReport};
pub use split::{stratified_split, SplitAssignment};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::net::Embedding;
use crate::{Error, Result};

/// Unweighted mean of per-class F1 scores over the classes present in the
/// truth labels. A class with no true positives and no predictions scores 0.
pub fn macro_f1<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], truth: &[T]) -> Result<f64> {
    if predictions.is_empty() || truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", truth.len()),
            got: format!("{}", predictions.len()),
        });
    }
    let per_class = per_class_f1(predictions, truth);
    Ok(per_class.values().map(|m| m.f1).sum::<f64>() / per_class.len() as f64)
}

/// Precision, recall and F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Stats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class statistics over the classes present in the truth labels.
pub fn per_class_f1<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    truth: &[T],
) -> BTreeMap<String, F1Stats> {
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fnc: BTreeMap<&str, usize> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truth.iter()) {
        let (p, t) = (p.as_ref(), t.as_ref());
        *support.entry(t).or_default() += 1;
        if p == t {
            *tp.entry(t).or_default() += 1;
        } else {
            *fp.entry(p).or_default() += 1;
            *fnc.entry(t).or_default() += 1;
        }
    }
    support
        .iter()
        .map(|(&class, &sup)| {
            let tp = *tp.get(class).unwrap_or(&0) as f64;
            let fp = *fp.get(class).unwrap_or(&0) as f64;
            let fnc = *fnc.get(class).unwrap_or(&0) as f64;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fnc > 0.0 { tp / (tp + fnc) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (
                class.to_string(),
                F1Stats {
                    precision,
                    recall,
                    f1,
                    support: sup,
                },
            )
        })
        .collect()
}

/// Export embeddings as TSV: a header row, then
/// `example_id  label  v0 .. v{d-1}` per embedding at full float precision.
pub fn export_embeddings(embeddings: &[Embedding], path: &Path) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = embeddings[0].dim();
    let mut out = String::new();
    out.push_str("example_id\tlabel");
    for k in 0..dim {
        out.push_str(&format!("\te{k:03}"));
    }
    out.push('\n');
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim}-D"),
                got: format!("{}-D", e.dim()),
            });
        }
        out.push_str(&e.example_id);
        out.push('\t');
        out.push_str(e.label.as_deref().unwrap_or(""));
        for v in &e.values {
            out.push('\t');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parse an embeddings TSV written by [`export_embeddings`].
pub fn import_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let _header = lines.next().ok_or(Error::EmptyInput)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split('\t');
        let example_id = fields
            .next()
            .ok_or_else(|| Error::Data(format!("row {}: missing id", i + 2)))?
            .to_string();
        let label = fields
            .next()
            .ok_or_else(|| Error::Data(format!("row {}: missing label", i + 2)))?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Data(format!("row {}: {e}", i + 2)))
            })
            .collect::<Result<_>>()?;
        out.push(Embedding {
            values,
            label: if label.is_empty() {
                None
            } else {
                Some(label.to_string())
            },
            example_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let y = ["a", "b", "a", "c"];
        assert_eq!(macro_f1(&y, &y).unwrap(), 1.0);
    }

    /// All predictions class A over balanced two-class truth:
    /// F1_A = 2/3, F1_B = 0, macro = 1/3.
    #[test]
    fn degenerate_single_prediction() {
        let preds = ["a", "a", "a", "a"];
        let truth = ["a", "a", "b", "b"];
        let f1 = macro_f1(&preds, &truth).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
        let per = per_class_f1(&preds, &truth);
        assert!((per["a"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(per["b"].f1, 0.0);
    }

    #[test]
    fn class_never_predicted_contributes_zero() {
        let preds = ["a", "a", "b"];
        let truth = ["a", "a", "c"];
        let per = per_class_f1(&preds, &truth);
        assert_eq!(per["c"].f1, 0.0);
        // "b" is never a truth class: it does not appear in the average.
        assert!(!per.contains_key("b"));
        let f1 = macro_f1(&preds, &truth).unwrap();
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(matches!(macro_f1(&empty, &empty), Err(Error::EmptyInput)));
    }

    #[test]
    fn permutation_and_renaming_invariance() {
        let preds = ["a", "b", "b", "c", "a", "c"];
        let truth = ["a", "b", "c", "c", "b", "c"];
        let base = macro_f1(&preds, &truth).unwrap();
        // Permute example order.
        let perm = [3usize, 0, 5, 1, 4, 2];
        let p2: Vec<&str> = perm.iter().map(|&i| preds[i]).collect();
        let t2: Vec<&str> = perm.iter().map(|&i| truth[i]).collect();
        assert_eq!(macro_f1(&p2, &t2).unwrap(), base);
        // Rename labels bijectively.
        let rename = |s: &str| match s {
            "a" => "x",
            "b" => "y",
            _ => "z",
        };
        let p3: Vec<&str> = preds.iter().map(|s| rename(s)).collect();
        let t3: Vec<&str> = truth.iter().map(|s| rename(s)).collect();
        assert_eq!(macro_f1(&p3, &t3).unwrap(), base);
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        let embeddings: Vec<Embedding> = (0..5)
            .map(|i| {
                let mut values: Vec<f64> =
                    (0..8).map(|k| ((i * 8 + k) as f64).sin()).collect();
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                values.iter_mut().for_each(|v| *v /= norm);
                Embedding {
                    values,
                    label: Some(format!("c{}", i % 2)),
                    example_id: format!("e{i}"),
                }
            })
            .collect();
        export_embeddings(&embeddings, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6); // header + 5 rows
        let back = import_embeddings(&path).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in embeddings.iter().zip(back.iter()) {
            assert_eq!(a.example_id, b.example_id);
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
            assert!((b.norm() - 1.0).abs() < 1e-5);
        }
    }
}
