//! End-to-end gradient verification of the multiscale CNN.
//!
//! A frozen, quarter-width variant on 8-band inputs is differentiated
//! analytically and compared against 64-bit central finite differences on a
//! deterministic sample of the weights, for both heads.

use chirpnet::metric::{triplet_loss, triplet_loss_grad, Hardness, Triplet};
use chirpnet::net::{softmax_cross_entropy, Head, Network, NetworkConfig};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quarter_width_cfg(head: Head) -> NetworkConfig {
    NetworkConfig {
        input_shape: (8, 12, 3),
        conv_filters: 16,
        mam_strand_filters: 16,
        mam_reduce_filters: 8,
        dense_units: (64, 32, 32),
        dropout: 0.0,
        weight_decay: 0.0,
        learning_rate: 0.001,
        head,
    }
}

fn random_batch(n: usize, seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array4::<f64>::zeros((n, 3, 8, 12));
    for v in x.iter_mut() {
        *v = rng.gen::<f64>() * 2.0 - 1.0;
    }
    x
}

/// Every ~100th weight coordinate, cycling the offset per parameter.
fn sampled_coords(net: &Network<f64>) -> Vec<(usize, usize)> {
    let mut coords = Vec::new();
    for (pi, p) in net.params().iter().enumerate() {
        let stride = 100;
        let mut k = pi % stride;
        while k < p.len() {
            coords.push((pi, k));
            k += stride;
        }
    }
    coords
}

fn check_against_finite_differences(
    mut net: Network<f64>,
    loss_and_backward: impl Fn(&mut Network<f64>) -> f64,
    loss_only: impl Fn(&Network<f64>) -> f64,
) {
    net.zero_grads();
    let _ = loss_and_backward(&mut net);
    let coords = sampled_coords(&net);
    assert!(coords.len() > 300, "sample too small: {}", coords.len());

    let numeric_at = |net: &mut Network<f64>, pi: usize, flat: usize, eps: f64| -> f64 {
        let orig = net.params()[pi].value.as_slice().unwrap()[flat];
        net.params_mut()[pi].value.as_slice_mut().unwrap()[flat] = orig + eps;
        let up = loss_only(net);
        net.params_mut()[pi].value.as_slice_mut().unwrap()[flat] = orig - eps;
        let down = loss_only(net);
        net.params_mut()[pi].value.as_slice_mut().unwrap()[flat] = orig;
        (up - down) / (2.0 * eps)
    };

    let mut checked = 0;
    for (pi, flat) in coords {
        let analytic = net.params()[pi].grad.as_slice().unwrap()[flat];
        // Primary check at eps = 1e-4. A coordinate whose perturbation window
        // straddles a ReLU/hinge kink sees truncation noise there, so on
        // disagreement the check is repeated at a smaller eps; an actually
        // wrong gradient disagrees at every eps.
        let mut pass = false;
        for eps in [1e-4, 1e-5, 1e-6] {
            let numeric = numeric_at(&mut net, pi, flat, eps);
            if analytic.abs() <= 1e-8 && numeric.abs() <= 1e-8 {
                pass = true;
                break;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            if rel < 1e-3 {
                pass = true;
                checked += 1;
                break;
            }
            if eps == 1e-6 {
                panic!(
                    "param {pi} coord {flat}: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
            }
        }
        assert!(pass);
    }
    assert!(checked > 100, "only {checked} informative coordinates");
}

#[test]
fn softmax_head_gradients_match_finite_differences() {
    let net = Network::<f64>::build(quarter_width_cfg(Head::Softmax { classes: 3 }), 21).unwrap();
    let x = random_batch(4, 77);
    let targets = vec![0usize, 2, 1, 2];

    let tx = x.clone();
    let tt = targets.clone();
    let loss_and_backward = move |net: &mut Network<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, tape) = net.forward_train(&tx, &mut rng).unwrap();
        let (loss, dlogits) = softmax_cross_entropy(&logits, &tt);
        net.backward(&tape, &dlogits);
        loss
    };
    let loss_only = move |net: &Network<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = net.forward_train(&x, &mut rng).unwrap();
        softmax_cross_entropy(&logits, &targets).0
    };
    check_against_finite_differences(net, loss_and_backward, loss_only);
}

#[test]
fn metric_head_triplet_gradients_match_finite_differences() {
    let net = Network::<f64>::build(quarter_width_cfg(Head::Metric), 22).unwrap();
    let x = random_batch(6, 78);
    let mk = |a, p, n| Triplet {
        anchor: a,
        positive: p,
        negative: n,
        d_ap: 0.0,
        d_an: 0.0,
        hardness: Hardness::SemiHard,
    };
    let triplets = vec![mk(0, 1, 2), mk(3, 4, 5), mk(1, 0, 4), mk(2, 5, 0)];
    let alpha = 0.3;

    let tx = x.clone();
    let tt = triplets.clone();
    let loss_and_backward = move |net: &mut Network<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (emb, tape) = net.forward_train(&tx, &mut rng).unwrap();
        let (loss, demb) = triplet_loss_grad(&emb, &tt, alpha);
        net.backward(&tape, &demb);
        loss
    };
    let loss_only = move |net: &Network<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (emb, _) = net.forward_train(&x, &mut rng).unwrap();
        triplet_loss(&emb, &triplets, alpha)
    };
    check_against_finite_differences(net, loss_and_backward, loss_only);
}

#[test]
fn dropout_is_seed_deterministic_and_off_at_inference() {
    let mut cfg = quarter_width_cfg(Head::Metric);
    cfg.dropout = 0.5;
    let net = Network::<f64>::build(cfg, 5).unwrap();
    let x = random_batch(3, 9);
    let (a, _) = net
        .forward_train(&x, &mut ChaCha8Rng::seed_from_u64(42))
        .unwrap();
    let (b, _) = net
        .forward_train(&x, &mut ChaCha8Rng::seed_from_u64(42))
        .unwrap();
    assert_eq!(a, b);
    let (c, _) = net
        .forward_train(&x, &mut ChaCha8Rng::seed_from_u64(43))
        .unwrap();
    assert_ne!(a, c);
    // Inference is dropout-free and repeatable.
    let d = net.embed_batch(&x).unwrap();
    let e = net.embed_batch(&x).unwrap();
    assert_eq!(d, e);
}
