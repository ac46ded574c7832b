//! Training loops.
//!
//! Metric training mines semi-hard triplets from class-balanced mini-batches
//! in an online fashion and feeds them to the network in groups bounded by
//! the triplet batch cap; the margin follows the dynamic schedule in
//! [`crate::metric::scheduler_update`], and each mining iteration is logged
//! as `(epoch, iter, mined, alpha, loss)`. The run is convergent once the
//! margin sits at its cap and a whole epoch mines zero triplets.
//!
//! Baseline training minimizes softmax cross-entropy with Adam and returns
//! the epoch checkpoint with the smallest validation loss.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, BaselineTrainConfig, MetricTrainConfig};
use crate::metric::{
    build_minibatch, group_triplets, mine_semi_hard, scheduler_update, triplet_loss_grad,
    ClassIndex, MarginState, Triplet,
};
use crate::net::checkpoint::save_network;
use crate::net::opt::{Adagrad, Adam};
use crate::net::{batch_from_examples, softmax_cross_entropy, Head, Network};
use crate::store::Dataset;
use crate::{Error, Result};

/// One mining iteration of metric training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub epoch: usize,
    /// Global iteration index, 1-based.
    pub iter: usize,
    /// Semi-hard triplets mined this iteration.
    pub mined: u32,
    /// Margin in effect for this iteration's loss.
    pub alpha: f64,
    /// Summed triplet loss over this iteration's groups.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: usize,
    pub mined_total: u64,
    pub mean_loss: f64,
    pub alpha_end: f64,
}

/// Metric-training log. Wall-clock time is kept out of the per-iteration
/// records so that log files are reproducible byte for byte.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainLogRecord>,
    pub epochs: Vec<EpochSummary>,
    /// First epoch at which the margin was at cap and no triplets were
    /// mined for the entire epoch.
    pub converged_at: Option<usize>,
    pub wall_seconds: f64,
}

impl TrainLog {
    /// Render the per-iteration trace, one record per line.
    pub fn render_records(&self) -> String {
        let mut out = String::from("epoch\titer\tmined\talpha\tloss\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.epoch, r.iter, r.mined, r.alpha, r.loss
            ));
        }
        out
    }

    pub fn save_records(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render_records()).map_err(|e| Error::io(path, e))
    }
}

fn gather_batch(dataset: &Dataset, indices: &[usize]) -> Result<Array4<f32>> {
    let refs: Vec<&crate::dsp::MelExample> =
        indices.iter().map(|&i| &dataset.examples[i]).collect();
    batch_from_examples::<f32>(&refs)
}

/// Remap triplets over the mini-batch to a compact sub-batch holding each
/// referenced example once. Returns (unique batch positions, remapped
/// triplets).
fn compact_group(group: &[Triplet]) -> (Vec<usize>, Vec<Triplet>) {
    let mut positions: Vec<usize> = group
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    positions.sort_unstable();
    positions.dedup();
    let remap = |i: usize| positions.binary_search(&i).expect("position present");
    let triplets = group
        .iter()
        .map(|t| Triplet {
            anchor: remap(t.anchor),
            positive: remap(t.positive),
            negative: remap(t.negative),
            ..*t
        })
        .collect();
    (positions, triplets)
}

/// Train the metric head with the dynamic-margin triplet loss.
///
/// `diag_checkpoint` receives the current weights if the loss turns
/// non-finite, right before the run aborts.
pub fn train_metric(
    net: &mut Network<f32>,
    dataset: &Dataset,
    cfg: &MetricTrainConfig,
    diag_checkpoint: Option<&Path>,
    mut progress: impl FnMut(&EpochSummary),
) -> Result<TrainLog> {
    if net.cfg.head != Head::Metric {
        return Err(Error::WrongHead("metric training requires the metric head".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let index = ClassIndex::from_labels(&dataset.labels());
    if index.num_classes() < 2 {
        return Err(Error::Data(format!(
            "metric training requires at least 2 classes, found {}",
            index.num_classes()
        )));
    }

    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "metric/batch"));
    let mut miner_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "metric/miner"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "metric/dropout"));

    let batch_size = cfg.per_class * index.num_classes();
    let available = dataset.len().div_ceil(batch_size).max(1);
    let iters_per_epoch = available.min(cfg.minibatches_per_epoch).max(1);

    let mut state = MarginState::new(cfg.margin);
    let mut opt = Adagrad::<f32>::new(cfg.learning_rate);
    let mut log = TrainLog::default();
    let started = Instant::now();
    let mut iter = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut mined_total = 0u64;
        let mut loss_total = 0.0f64;
        for _ in 0..iters_per_epoch {
            iter += 1;
            let plan = build_minibatch(&index, cfg.per_class, &mut batch_rng)?;
            let flat = plan.flat_indices();
            let class_ids = plan.flat_class_ids();
            let x = gather_batch(dataset, &flat)?;

            // Mining pass at the current margin, inference mode.
            let emb32 = net.embed_batch(&x)?;
            let emb64 = emb32.mapv(f64::from);
            let triplets = mine_semi_hard(&emb64, &class_ids, state.alpha, &mut miner_rng)?;
            let t = triplets.len() as u32;
            mined_total += u64::from(t);
            state = scheduler_update(state, t);

            // Weight updates only happen when something was mined.
            let mut iter_loss = 0.0f64;
            for group in group_triplets(&triplets, cfg.triplet_batch_cap) {
                let (positions, local) = compact_group(group);
                let sub = x.select(Axis(0), &positions);
                let (emb, tape) = net.forward_train(&sub, &mut dropout_rng)?;
                let emb64 = emb.mapv(f64::from);
                let (loss, grad64) = triplet_loss_grad(&emb64, &local, state.alpha);
                if !loss.is_finite() {
                    if let Some(path) = diag_checkpoint {
                        let _ = save_network(net, path);
                    }
                    return Err(Error::NonFinite(format!(
                        "triplet loss at epoch {epoch} iteration {iter}"
                    )));
                }
                iter_loss += loss;
                let grad32 = grad64.mapv(|v| v as f32);
                net.zero_grads();
                net.backward(&tape, &grad32);
                net.apply_weight_decay();
                opt.step(&mut net.params_mut());
            }
            loss_total += iter_loss;
            log.records.push(TrainLogRecord {
                epoch,
                iter,
                mined: t,
                alpha: state.alpha,
                loss: iter_loss,
            });
        }
        let summary = EpochSummary {
            epoch,
            iterations: iters_per_epoch,
            mined_total,
            mean_loss: loss_total / iters_per_epoch as f64,
            alpha_end: state.alpha,
        };
        if log.converged_at.is_none() && state.at_cap() && mined_total == 0 {
            log.converged_at = Some(epoch);
        }
        progress(&summary);
        log.epochs.push(summary);
    }
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(log)
}

/// One epoch of the baseline log.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BaselineLog {
    pub epochs: Vec<BaselineEpoch>,
    /// Epoch whose weights were kept (smallest validation loss).
    pub selected_epoch: usize,
    pub wall_seconds: f64,
}

impl BaselineLog {
    pub fn render_records(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out.push_str(&format!("selected_epoch\t{}\n", self.selected_epoch));
        out
    }

    pub fn save_records(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render_records()).map_err(|e| Error::io(path, e))
    }
}

fn cross_entropy_eval(net: &Network<f32>, x: &Array4<f32>, targets: &[usize]) -> Result<f64> {
    let logits = net.logits_batch(x)?;
    let (loss, _) = softmax_cross_entropy(&logits, targets);
    Ok(loss)
}

/// Train the softmax head with cross-entropy; the returned network carries
/// the weights of the epoch with the smallest validation loss (earliest
/// epoch wins ties).
pub fn train_baseline(
    net: &mut Network<f32>,
    train: &Dataset,
    validation: &Dataset,
    cfg: &BaselineTrainConfig,
    mut progress: impl FnMut(&BaselineEpoch),
) -> Result<BaselineLog> {
    let classes = match net.cfg.head {
        Head::Softmax { classes } => classes,
        Head::Metric => {
            return Err(Error::WrongHead(
                "baseline training requires the softmax head".into(),
            ))
        }
    };
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (train_classes, train_targets) = train.class_targets();
    if train_classes.len() != classes {
        return Err(Error::Config(format!(
            "network head has {classes} classes but the data has {}",
            train_classes.len()
        )));
    }
    let val_targets: Vec<usize> = validation
        .examples
        .iter()
        .map(|e| {
            train_classes
                .binary_search(&e.label)
                .map_err(|_| Error::UnknownClass(e.label.clone()))
        })
        .collect::<Result<_>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "baseline/shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "baseline/dropout"));
    let mut opt = Adam::<f32>::new(cfg.learning_rate);

    let val_x = gather_batch(validation, &(0..validation.len()).collect::<Vec<_>>())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Vec<ndarray::ArrayD<f32>>)> = None;
    let mut log = BaselineLog::default();
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = gather_batch(train, chunk)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| train_targets[i]).collect();
            let (logits, tape) = net.forward_train(&x, &mut dropout_rng)?;
            let logits64 = logits.mapv(f64::from);
            let (loss, grad64) = softmax_cross_entropy(&logits64, &targets);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("cross-entropy at epoch {epoch}")));
            }
            let grad = grad64.mapv(|v| v as f32);
            net.zero_grads();
            net.backward(&tape, &grad);
            net.apply_weight_decay();
            opt.step(&mut net.params_mut());
            train_loss += loss;
            steps += 1;
        }
        let val_loss = cross_entropy_eval(net, &val_x, &val_targets)?;
        let record = BaselineEpoch {
            epoch,
            train_loss: train_loss / steps.max(1) as f64,
            val_loss,
        };
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            let snapshot: Vec<ndarray::ArrayD<f32>> =
                net.params().iter().map(|p| p.value.clone()).collect();
            best = Some((val_loss, epoch, snapshot));
        }
        progress(&record);
        log.epochs.push(record);
    }
    let (_, selected, snapshot) = best.expect("at least one epoch ran");
    for (p, saved) in net.params_mut().into_iter().zip(snapshot) {
        p.value = saved;
    }
    log.selected_epoch = selected;
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(log)
}

/// Softmax-head cross-entropy over an entire dataset (inference mode);
/// used to verify checkpoint selection and for reporting.
pub fn dataset_cross_entropy(net: &Network<f32>, dataset: &Dataset) -> Result<f64> {
    let (classes, targets) = dataset.class_targets();
    match net.cfg.head {
        Head::Softmax { classes: c } if c == classes.len() => {}
        _ => return Err(Error::WrongHead("softmax head with matching classes".into())),
    }
    let x = gather_batch(dataset, &(0..dataset.len()).collect::<Vec<_>>())?;
    cross_entropy_eval(net, &x, &targets)
}

/// Replay a recorded mined-count sequence through the scheduler and check
/// that the recorded margins match exactly (log-integrity check).
pub fn verify_alpha_trajectory(log: &TrainLog, cfg: &MetricTrainConfig) -> bool {
    let mut state = MarginState::new(cfg.margin);
    for r in &log.records {
        state = scheduler_update(state, r.mined);
        if state.alpha != r.alpha {
            return false;
        }
    }
    true
}

/// Embeddings matrix helper used by trainers and tests.
pub fn to_f64(m: &Array2<f32>) -> Array2<f64> {
    m.mapv(f64::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::MelExample;
    use crate::net::NetworkConfig;
    use ndarray::Array3;
    use rand::Rng;

    /// Tiny synthetic feature tensors: each class is a distinct constant
    /// pattern plus noise, in the network's expected dB-like range.
    fn toy_dataset(classes: usize, per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut examples = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                let tensor = Array3::from_shape_fn((8, 12, 3), |(m, f, ch)| {
                    let base = -60.0
                        + 50.0 * f32::from(u8::from(m % classes.max(1) == c))
                        + 3.0 * ((f + ch) as f32 / 15.0);
                    base + rng.gen::<f32>() * 2.0
                });
                examples.push(MelExample {
                    tensor,
                    label: format!("class{c}"),
                    example_id: format!("class{c}/{i}#0"),
                });
            }
        }
        Dataset { examples }
    }

    fn tiny_net(head: Head, seed: u64) -> Network<f32> {
        let cfg = NetworkConfig {
            input_shape: (8, 12, 3),
            conv_filters: 4,
            mam_strand_filters: 4,
            mam_reduce_filters: 2,
            dense_units: (16, 12, 8),
            dropout: 0.2,
            weight_decay: 0.0001,
            learning_rate: 0.01,
            head,
        };
        Network::build(cfg, seed).unwrap()
    }

    fn metric_cfg(epochs: usize) -> MetricTrainConfig {
        MetricTrainConfig {
            epochs,
            minibatches_per_epoch: 1000,
            triplet_batch_cap: 50,
            per_class: 5,
            learning_rate: 0.01,
            weight_decay: 0.0001,
            margin: crate::config::MarginConfig::default(),
            seed: 5,
        }
    }

    #[test]
    fn metric_training_logs_and_margin_are_consistent() {
        let data = toy_dataset(3, 10, 1);
        let mut net = tiny_net(Head::Metric, 2);
        let cfg = metric_cfg(3);
        let log = train_metric(&mut net, &data, &cfg, None, |_| {}).unwrap();
        // One record per iteration: 30 examples / 15 per batch = 2 per epoch.
        assert_eq!(log.records.len(), log.epochs.iter().map(|e| e.iterations).sum::<usize>());
        assert!(verify_alpha_trajectory(&log, &cfg));
        // Margin is non-decreasing and loss records are finite, >= 0.
        let mut prev = 0.0;
        for r in &log.records {
            assert!(r.alpha >= prev);
            assert!(r.loss >= 0.0 && r.loss.is_finite());
            prev = r.alpha;
        }
    }

    #[test]
    fn metric_training_rejects_single_class() {
        let data = toy_dataset(1, 10, 2);
        let mut net = tiny_net(Head::Metric, 2);
        assert!(matches!(
            train_metric(&mut net, &data, &metric_cfg(1), None, |_| {}),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn metric_training_is_deterministic_under_seed() {
        let data = toy_dataset(3, 8, 3);
        let cfg = metric_cfg(2);
        let mut a = tiny_net(Head::Metric, 7);
        let la = train_metric(&mut a, &data, &cfg, None, |_| {}).unwrap();
        let mut b = tiny_net(Head::Metric, 7);
        let lb = train_metric(&mut b, &data, &cfg, None, |_| {}).unwrap();
        assert_eq!(la.records, lb.records);
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value, pb.value, "{}", pa.name);
        }
    }

    #[test]
    fn zero_triplet_epochs_leave_weights_unchanged() {
        // Margin already satisfied everywhere: two classes far apart after
        // heavy training would do it, but simpler: single pass over a
        // dataset whose mined count is zero because classes are identical
        // copies mapped far apart is fragile; instead verify directly that
        // iterations with mined == 0 never change weights, by snapshotting
        // around a forced-zero mining run (margin cap at tiny value).
        let data = toy_dataset(2, 6, 4);
        let mut net = tiny_net(Head::Metric, 9);
        let mut cfg = metric_cfg(1);
        // An absurdly small margin makes semi-hard bands almost empty but
        // not provably empty; instead check the invariant on the log.
        cfg.margin.alpha_init = 1e-9;
        cfg.margin.alpha_cap = 1e-9;
        let before: Vec<_> = net.params().iter().map(|p| p.value.clone()).collect();
        let log = train_metric(&mut net, &data, &cfg, None, |_| {}).unwrap();
        let changed = net
            .params()
            .iter()
            .zip(before.iter())
            .any(|(p, b)| &p.value != b);
        let mined_any = log.records.iter().any(|r| r.mined > 0);
        assert_eq!(changed, mined_any, "weights change iff something was mined");
    }

    #[test]
    fn baseline_selects_min_validation_loss() {
        let train = toy_dataset(3, 8, 5);
        let val = toy_dataset(3, 4, 6);
        let mut net = tiny_net(Head::Softmax { classes: 3 }, 3);
        let cfg = BaselineTrainConfig {
            epochs: 6,
            batch_size: 8,
            learning_rate: 0.01,
            weight_decay: 0.0001,
            seed: 2,
        };
        let log = train_baseline(&mut net, &train, &val, &cfg, |_| {}).unwrap();
        let min_val = log
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        let selected = log
            .epochs
            .iter()
            .find(|e| e.epoch == log.selected_epoch)
            .unwrap();
        assert_eq!(selected.val_loss, min_val);
        // The returned network reproduces the selected epoch's loss.
        let reloaded = dataset_cross_entropy(&net, &val).unwrap();
        assert!((reloaded - min_val).abs() < 1e-6, "{reloaded} vs {min_val}");
    }

    #[test]
    fn baseline_learns_separable_toy_data() {
        let train = toy_dataset(2, 12, 7);
        let val = toy_dataset(2, 6, 8);
        let mut net = tiny_net(Head::Softmax { classes: 2 }, 4);
        let cfg = BaselineTrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            weight_decay: 0.0001,
            seed: 3,
        };
        train_baseline(&mut net, &train, &val, &cfg, |_| {}).unwrap();
        // Train accuracy ~ 1.0 on this separable toy set.
        let (classes, targets) = train.class_targets();
        let refs: Vec<&MelExample> = train.examples.iter().collect();
        let x = batch_from_examples::<f32>(&refs).unwrap();
        let probs = net.softmax_batch(&x).unwrap();
        let correct = probs
            .rows()
            .into_iter()
            .zip(targets.iter())
            .filter(|(row, &t)| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
                    == t
            })
            .count();
        let acc = correct as f64 / train.len() as f64;
        assert!(acc >= 0.95, "train accuracy {acc} on {} classes", classes.len());
    }

    #[test]
    fn baseline_is_deterministic_under_seed() {
        let train = toy_dataset(2, 8, 9);
        let val = toy_dataset(2, 4, 10);
        let cfg = BaselineTrainConfig {
            epochs: 4,
            batch_size: 8,
            learning_rate: 0.01,
            weight_decay: 0.0,
            seed: 11,
        };
        let mut a = tiny_net(Head::Softmax { classes: 2 }, 5);
        let la = train_baseline(&mut a, &train, &val, &cfg, |_| {}).unwrap();
        let mut b = tiny_net(Head::Softmax { classes: 2 }, 5);
        let lb = train_baseline(&mut b, &train, &val, &cfg, |_| {}).unwrap();
        assert_eq!(la.epochs, lb.epochs);
        assert_eq!(la.selected_epoch, lb.selected_epoch);
    }

    #[test]
    fn log_rendering_round_trips_deterministically() {
        let data = toy_dataset(2, 6, 12);
        let mut net = tiny_net(Head::Metric, 6);
        let log = train_metric(&mut net, &data, &metric_cfg(2), None, |_| {}).unwrap();
        assert_eq!(log.render_records(), log.render_records());
        assert!(log.render_records().starts_with("epoch\titer\tmined\talpha\tloss\n"));
    }
}
