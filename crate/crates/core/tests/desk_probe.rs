//! Scratch feasibility probe (will be replaced by the acceptance suite).

use chirpnet::config::{FeatureConfig, MetricTrainConfig, MlpConfig, SplitRatios};
use chirpnet::eval::{embed_split, evaluate, stratified_split, EvalInputs};
use chirpnet::head::train_mlp;
use chirpnet::net::{Head, Network, NetworkConfig};
use chirpnet::store::Split;
use chirpnet::{synth, train};
use std::time::Instant;

#[test]
#[ignore]
fn desk_probe() {
    let t0 = Instant::now();
    let fcfg = FeatureConfig::default();
    let classes: Vec<&str> = synth::CLASSES.to_vec();
    let data = synth::dataset(&fcfg, &classes, 50, 42).unwrap();
    eprintln!("[{:?}] features: {} examples", t0.elapsed(), data.len());

    let pairs: Vec<(String, String)> = data
        .examples
        .iter()
        .map(|e| (e.example_id.clone(), e.label.clone()))
        .collect();
    let assignment = stratified_split(&pairs, SplitRatios::default(), 7).unwrap();
    let train_set = chirpnet::store::Dataset {
        examples: data
            .examples
            .iter()
            .filter(|e| assignment.of(&e.example_id) == Some(Split::Train))
            .cloned()
            .collect(),
    };
    eprintln!("train {} / total {}", train_set.len(), data.len());

    let ncfg = NetworkConfig {
        input_shape: (40, 200, 3),
        conv_filters: 8,
        mam_strand_filters: 8,
        mam_reduce_filters: 4,
        dense_units: (256, 128, 128),
        dropout: 0.5,
        weight_decay: 0.0001,
        learning_rate: 0.001,
        head: Head::Metric,
    };
    let mut net = Network::<f32>::build(ncfg, 42).unwrap();
    eprintln!("params: {}", net.param_count());

    let tcfg = MetricTrainConfig {
        epochs: 40,
        seed: 42,
        ..MetricTrainConfig::default()
    };
    let tstart = Instant::now();
    let log = train::train_metric(&mut net, &train_set, &tcfg, None, |s| {
        eprintln!(
            "[{:6.1}s] epoch {:3} iters {} mined {:4} loss {:8.3} alpha {:.2}",
            tstart.elapsed().as_secs_f64(),
            s.epoch,
            s.iterations,
            s.mined_total,
            s.mean_loss,
            s.alpha_end
        );
    })
    .unwrap();
    eprintln!("metric training: {:.1}s converged={:?}", log.wall_seconds, log.converged_at);

    let train_emb = embed_split(&net, &data, &assignment, Split::Train).unwrap();
    let mlp = train_mlp(&train_emb, &MlpConfig::default()).unwrap();
    let report = evaluate(EvalInputs {
        network: &net,
        mlp: &mlp,
        gaussians: None,
        dataset: &data,
        assignment: &assignment,
        outliers: None,
        config_echo: "{}".into(),
    })
    .unwrap();
    eprintln!("macro F1: {:.4} over {} test examples", report.macro_f1, report.n_test);
    eprintln!("total: {:?}", t0.elapsed());
}
