//! The multiscale CNN.
//!
//! Trunk: CONV1 -> MAM1 -> CONV2 -> MAM2 -> CONV3 -> MAM3 -> CONV4 -> MAM4
//! -> CONV5 -> GAP, where every stand-alone convolution uses 3x3 kernels and
//! CONV2..CONV5 downsample the Mel axis by strides 2, 2, 2, 5 (time stride
//! is always 1). Each multiscale analysis module (MAM) runs four parallel
//! strands over its 64-map input: a 1x1 strand, and three strands that
//! reduce channels with a 1x1 convolution before 3x3, 5x5 and 7x7
//! convolutions; the strand outputs are concatenated channel-wise.
//!
//! Head: GAP -> dense 256 -> dense 128 -> dense 128 scaled to unit norm
//! (metric head), or the last dense replaced by `C` units with softmax
//! (classification head). ReLU follows every convolution and the first two
//! dense layers; dropout precedes each dense layer at train time.

pub mod checkpoint;
pub mod opt;
pub(crate) mod ops;
mod param;

pub use ops::{softmax, softmax_cross_entropy};
pub use param::{NetFloat, Param};

use ndarray::{s, Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelExample;
use crate::{Error, Result};

use ops::{
    dropout_backward, dropout_forward, gap_backward, gap_forward, relu2, relu2_backward, relu4,
    relu4_backward, unit_norm_backward, unit_norm_forward, Conv2d, Dense,
};

/// Output head of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Final dense layer scaled to the unit hypersphere.
    Metric,
    /// Final dense layer with `classes` units and softmax.
    Softmax { classes: usize },
}

/// Structural configuration of the multiscale CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// (mel bands, frames, channels).
    pub input_shape: (usize, usize, usize),
    /// Filters of the five stand-alone convolutions (also each MAM's input).
    pub conv_filters: usize,
    /// Filters per MAM strand; the module outputs `4 *` this many maps.
    pub mam_strand_filters: usize,
    /// Filters of the 1x1 channel reducers inside MAM strands 2-4.
    pub mam_reduce_filters: usize,
    pub dense_units: (usize, usize, usize),
    pub dropout: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub head: Head,
}

impl NetworkConfig {
    /// The published full-size architecture with the given head.
    pub fn full(head: Head) -> Self {
        Self {
            input_shape: (40, 200, 3),
            conv_filters: 64,
            mam_strand_filters: 64,
            mam_reduce_filters: 32,
            dense_units: (256, 128, 128),
            dropout: 0.5,
            weight_decay: 0.0001,
            learning_rate: 0.001,
            head,
        }
    }

    /// Mel-axis strides of CONV1..CONV5.
    pub const MEL_STRIDES: [usize; 5] = [1, 2, 2, 2, 5];

    /// Heights of the Mel axis before CONV1 and after each convolution.
    pub fn mel_chain(&self) -> Result<Vec<usize>> {
        let mut h = self.input_shape.0;
        let mut chain = vec![h];
        for (i, &stride) in Self::MEL_STRIDES.iter().enumerate() {
            match stride {
                1 => {}
                2 => {
                    if h % 2 != 0 {
                        return Err(Error::Config(format!(
                            "mel axis not reducible: height {h} before conv{} is odd",
                            i + 1
                        )));
                    }
                    h /= 2;
                }
                5 => {
                    if h != 5 && h != 1 {
                        return Err(Error::Config(format!(
                            "mel axis not reducible: height {h} before conv{} must be 5 or 1",
                            i + 1
                        )));
                    }
                    h = 1;
                }
                _ => unreachable!(),
            }
            chain.push(h);
        }
        Ok(chain)
    }

    /// Embedding width (metric head) or class count (softmax head).
    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Metric => self.dense_units.2,
            Head::Softmax { classes } => classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (mel, frames, channels) = self.input_shape;
        if mel == 0 || frames == 0 || channels == 0 {
            return Err(Error::Config("input shape must be nonzero".into()));
        }
        self.mel_chain()?;
        if self.conv_filters == 0 || self.mam_strand_filters == 0 || self.mam_reduce_filters == 0 {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        let (d1, d2, d3) = self.dense_units;
        if d1 == 0 || d2 == 0 || d3 == 0 {
            return Err(Error::Config("dense widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if let Head::Softmax { classes } = self.head {
            if classes < 2 {
                return Err(Error::Config("softmax head requires at least 2 classes".into()));
            }
        }
        Ok(())
    }
}

/// Multiscale analysis module: four parallel strands concatenated
/// channel-wise. Spatial dimensions are preserved by SAME padding.
#[derive(Debug, Clone)]
struct Mam<F: NetFloat> {
    strand1: Conv2d<F>,
    reducers: [Conv2d<F>; 3],
    branches: [Conv2d<F>; 3],
    strand_filters: usize,
}

struct MamCache<F: NetFloat> {
    x: Array4<F>,
    strand1_y: Array4<F>,
    reducer_y: [Array4<F>; 3],
    branch_y: [Array4<F>; 3],
}

impl<F: NetFloat> Mam<F> {
    const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];

    fn new(name: &str, c_in: usize, strand: usize, reduce: usize, rng: &mut ChaCha8Rng) -> Self {
        let strand1 = Conv2d::new(&format!("{name}.s1x1"), c_in, strand, 1, 1, 1, rng);
        let mut reducers = Vec::with_capacity(3);
        let mut branches = Vec::with_capacity(3);
        for k in Self::BRANCH_KERNELS {
            reducers.push(Conv2d::new(&format!("{name}.r{k}x{k}"), c_in, reduce, 1, 1, 1, rng));
            branches.push(Conv2d::new(&format!("{name}.c{k}x{k}"), reduce, strand, k, k, 1, rng));
        }
        Self {
            strand1,
            reducers: reducers.try_into().map_err(|_| ()).expect("three strands"),
            branches: branches.try_into().map_err(|_| ()).expect("three strands"),
            strand_filters: strand,
        }
    }

    fn forward(&self, x: &Array4<F>) -> (Array4<F>, MamCache<F>) {
        let (n, _, h, w) = x.dim();
        let strand1_y = relu4(self.strand1.forward(x));
        let mut reducer_y: Vec<Array4<F>> = Vec::with_capacity(3);
        let mut branch_y: Vec<Array4<F>> = Vec::with_capacity(3);
        for i in 0..3 {
            let r = relu4(self.reducers[i].forward(x));
            let b = relu4(self.branches[i].forward(&r));
            reducer_y.push(r);
            branch_y.push(b);
        }
        let sf = self.strand_filters;
        let mut y = Array4::<F>::zeros((n, 4 * sf, h, w));
        y.slice_mut(s![.., 0..sf, .., ..]).assign(&strand1_y);
        for (i, b) in branch_y.iter().enumerate() {
            y.slice_mut(s![.., (i + 1) * sf..(i + 2) * sf, .., ..])
                .assign(b);
        }
        let cache = MamCache {
            x: x.clone(),
            strand1_y,
            reducer_y: reducer_y.try_into().map_err(|_| ()).expect("three strands"),
            branch_y: branch_y.try_into().map_err(|_| ()).expect("three strands"),
        };
        (y, cache)
    }

    fn backward(&mut self, cache: &MamCache<F>, dy: &Array4<F>) -> Array4<F> {
        let sf = self.strand_filters;
        let d1 = dy.slice(s![.., 0..sf, .., ..]).to_owned();
        let d1 = relu4_backward(&cache.strand1_y, &d1);
        let mut dx = self.strand1.backward(&cache.x, &d1);
        for i in 0..3 {
            let db = dy
                .slice(s![.., (i + 1) * sf..(i + 2) * sf, .., ..])
                .to_owned();
            let db = relu4_backward(&cache.branch_y[i], &db);
            let dr = self.branches[i].backward(&cache.reducer_y[i], &db);
            let dr = relu4_backward(&cache.reducer_y[i], &dr);
            dx += &self.reducers[i].backward(&cache.x, &dr);
        }
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.strand1.params_mut();
        for (r, b) in self.reducers.iter_mut().zip(self.branches.iter_mut()) {
            out.extend(r.params_mut());
            out.extend(b.params_mut());
        }
        out
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut out = self.strand1.params();
        for (r, b) in self.reducers.iter().zip(self.branches.iter()) {
            out.extend(r.params());
            out.extend(b.params());
        }
        out
    }
}

enum TrunkCache<F: NetFloat> {
    Conv { x: Array4<F>, y: Array4<F> },
    Mam(MamCache<F>),
}

enum HeadCache<F: NetFloat> {
    Metric { y: Array2<F>, norms: Array1<F> },
    Softmax,
}

/// Intermediate activations of one forward pass, consumed by backward.
pub struct Tape<F: NetFloat> {
    trunk: Vec<TrunkCache<F>>,
    gap_hw: (usize, usize),
    drop_masks: [Option<Array2<F>>; 3],
    dense_in: [Array2<F>; 3],
    dense_y: [Array2<F>; 2],
    head: HeadCache<F>,
}

enum Mode<'r> {
    Infer,
    Train(&'r mut ChaCha8Rng),
}

/// The multiscale CNN with its parameters.
#[derive(Debug, Clone)]
pub struct Network<F: NetFloat> {
    pub cfg: NetworkConfig,
    pub seed: u64,
    conv1: Conv2d<F>,
    stages: Vec<Stage<F>>,
    dense1: Dense<F>,
    dense2: Dense<F>,
    dense3: Dense<F>,
}

#[derive(Debug, Clone)]
enum Stage<F: NetFloat> {
    Conv(Conv2d<F>),
    Mam(Mam<F>),
}

impl<F: NetFloat> Network<F> {
    /// Build the network with seeded, reproducible initialization.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cf = cfg.conv_filters;
        let sf = cfg.mam_strand_filters;
        let rf = cfg.mam_reduce_filters;
        let mam_out = 4 * sf;

        let conv1 = Conv2d::new("conv1", cfg.input_shape.2, cf, 3, 3, 1, &mut rng);
        let mut stages = Vec::new();
        for i in 0..4 {
            stages.push(Stage::Mam(Mam::new(
                &format!("mam{}", i + 1),
                cf,
                sf,
                rf,
                &mut rng,
            )));
            let stride = NetworkConfig::MEL_STRIDES[i + 1];
            stages.push(Stage::Conv(Conv2d::new(
                &format!("conv{}", i + 2),
                mam_out,
                cf,
                3,
                3,
                stride,
                &mut rng,
            )));
        }
        let (d1, d2, _) = cfg.dense_units;
        let dense1 = Dense::new("dense1", cf, d1, &mut rng);
        let dense2 = Dense::new("dense2", d1, d2, &mut rng);
        let dense3 = Dense::new("dense3", d2, cfg.output_dim(), &mut rng);
        Ok(Self {
            cfg,
            seed,
            conv1,
            stages,
            dense1,
            dense2,
            dense3,
        })
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut out = self.conv1.params();
        for st in &self.stages {
            match st {
                Stage::Conv(c) => out.extend(c.params()),
                Stage::Mam(m) => out.extend(m.params()),
            }
        }
        out.extend(self.dense1.params());
        out.extend(self.dense2.params());
        out.extend(self.dense3.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.conv1.params_mut();
        for st in &mut self.stages {
            match st {
                Stage::Conv(c) => out.extend(c.params_mut()),
                Stage::Mam(m) => out.extend(m.params_mut()),
            }
        }
        out.extend(self.dense1.params_mut());
        out.extend(self.dense2.params_mut());
        out.extend(self.dense3.params_mut());
        out
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Width of the global-average-pooled vector.
    pub fn gap_width(&self) -> usize {
        self.cfg.conv_filters
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// L2 penalty term `lambda * sum(w^2)` over decaying parameters.
    pub fn weight_penalty(&self) -> f64 {
        let lambda = self.cfg.weight_decay;
        if lambda == 0.0 {
            return 0.0;
        }
        lambda
            * self
                .params()
                .iter()
                .filter(|p| p.decay)
                .flat_map(|p| p.value.iter())
                .map(|v| v.to_f64c() * v.to_f64c())
                .sum::<f64>()
    }

    /// Add the penalty gradient `2 * lambda * w` to every decaying weight.
    pub fn apply_weight_decay(&mut self) {
        let lambda = F::from_f64(2.0 * self.cfg.weight_decay);
        if self.cfg.weight_decay == 0.0 {
            return;
        }
        for p in self.params_mut() {
            if p.decay {
                let value = p.value.clone();
                p.grad.zip_mut_with(&value, |g, v| *g = *g + lambda * *v);
            }
        }
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let (mel, frames, channels) = self.cfg.input_shape;
        if c != channels || h != mel || w != frames {
            return Err(Error::ShapeMismatch {
                expected: format!("[n, {channels}, {mel}, {frames}]"),
                got: format!("{:?}", x.dim()),
            });
        }
        if x.iter().any(|v| !v.to_f64c().is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn forward(&self, x: &Array4<F>, mut mode: Mode) -> (Array2<F>, Tape<F>) {
        let mut trunk = Vec::with_capacity(1 + self.stages.len());
        let mut cur = relu4(self.conv1.forward(x));
        trunk.push(TrunkCache::Conv {
            x: x.clone(),
            y: cur.clone(),
        });
        for st in &self.stages {
            match st {
                Stage::Conv(c) => {
                    let y = relu4(c.forward(&cur));
                    trunk.push(TrunkCache::Conv {
                        x: cur,
                        y: y.clone(),
                    });
                    cur = y;
                }
                Stage::Mam(m) => {
                    let (y, cache) = m.forward(&cur);
                    trunk.push(TrunkCache::Mam(cache));
                    cur = y;
                }
            }
        }
        let (_, _, h, w) = cur.dim();
        let pooled = gap_forward(&cur);

        let drop = |x: &Array2<F>, mode: &mut Mode| -> (Array2<F>, Option<Array2<F>>) {
            match mode {
                Mode::Train(rng) if self.cfg.dropout > 0.0 => {
                    let (y, mask) = dropout_forward(x, self.cfg.dropout, rng);
                    (y, Some(mask))
                }
                _ => (x.clone(), None),
            }
        };

        let (d1_in, m0) = drop(&pooled, &mut mode);
        let d1_y = relu2(self.dense1.forward(&d1_in));
        let (d2_in, m1) = drop(&d1_y, &mut mode);
        let d2_y = relu2(self.dense2.forward(&d2_in));
        let (d3_in, m2) = drop(&d2_y, &mut mode);
        let raw = self.dense3.forward(&d3_in);

        let (out, head) = match self.cfg.head {
            Head::Metric => {
                let (y, norms) = unit_norm_forward(&raw);
                (y.clone(), HeadCache::Metric { y, norms })
            }
            Head::Softmax { .. } => (raw, HeadCache::Softmax),
        };
        let tape = Tape {
            trunk,
            gap_hw: (h, w),
            drop_masks: [m0, m1, m2],
            dense_in: [d1_in, d2_in, d3_in],
            dense_y: [d1_y, d2_y],
            head,
        };
        (out, tape)
    }

    /// Training forward pass (dropout active). Returns unit-norm embeddings
    /// for the metric head or raw logits for the softmax head, plus the tape
    /// for [`Self::backward`].
    pub fn forward_train(
        &self,
        x: &Array4<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<F>, Tape<F>)> {
        self.check_input(x)?;
        Ok(self.forward(x, Mode::Train(rng)))
    }

    /// Backpropagate `d_out` (gradient w.r.t. the forward output) and
    /// accumulate parameter gradients.
    pub fn backward(&mut self, tape: &Tape<F>, d_out: &Array2<F>) {
        let mut d = match &tape.head {
            HeadCache::Metric { y, norms } => unit_norm_backward(y, norms, d_out),
            HeadCache::Softmax => d_out.clone(),
        };
        d = self.dense3.backward(&tape.dense_in[2], &d);
        if let Some(m) = &tape.drop_masks[2] {
            d = dropout_backward(&d, m);
        }
        d = relu2_backward(&tape.dense_y[1], &d);
        d = self.dense2.backward(&tape.dense_in[1], &d);
        if let Some(m) = &tape.drop_masks[1] {
            d = dropout_backward(&d, m);
        }
        d = relu2_backward(&tape.dense_y[0], &d);
        d = self.dense1.backward(&tape.dense_in[0], &d);
        if let Some(m) = &tape.drop_masks[0] {
            d = dropout_backward(&d, m);
        }
        let mut d4 = gap_backward(&d, tape.gap_hw.0, tape.gap_hw.1);

        for (st, cache) in self.stages.iter_mut().rev().zip(tape.trunk.iter().skip(1).rev()) {
            match (st, cache) {
                (Stage::Conv(c), TrunkCache::Conv { x, y }) => {
                    let dr = relu4_backward(y, &d4);
                    d4 = c.backward(x, &dr);
                }
                (Stage::Mam(m), TrunkCache::Mam(cache)) => {
                    d4 = m.backward(cache, &d4);
                }
                _ => unreachable!("tape out of sync with stages"),
            }
        }
        if let TrunkCache::Conv { x, y } = &tape.trunk[0] {
            let dr = relu4_backward(y, &d4);
            let _ = self.conv1.backward(x, &dr);
        } else {
            unreachable!("first trunk stage is conv1");
        }
    }

    /// Inference-mode embeddings for a batch (metric head only). The batch
    /// is processed in chunks to bound activation memory.
    pub fn embed_batch(&self, x: &Array4<F>) -> Result<Array2<F>> {
        if self.cfg.head != Head::Metric {
            return Err(Error::WrongHead("embedding requires the metric head".into()));
        }
        self.infer(x)
    }

    /// Inference-mode class probabilities (softmax head only).
    pub fn softmax_batch(&self, x: &Array4<F>) -> Result<Array2<F>> {
        match self.cfg.head {
            Head::Softmax { .. } => {}
            Head::Metric => {
                return Err(Error::WrongHead(
                    "class probabilities require the softmax head".into(),
                ))
            }
        }
        Ok(softmax(&self.infer(x)?))
    }

    /// Inference-mode raw logits (softmax head only).
    pub fn logits_batch(&self, x: &Array4<F>) -> Result<Array2<F>> {
        match self.cfg.head {
            Head::Softmax { .. } => {}
            Head::Metric => {
                return Err(Error::WrongHead("logits require the softmax head".into()))
            }
        }
        self.infer(x)
    }

    fn infer(&self, x: &Array4<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let n = x.dim().0;
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        const CHUNK: usize = 32;
        let mut out = Array2::<F>::zeros((n, self.cfg.output_dim()));
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let chunk = x.slice(s![start..end, .., .., ..]).to_owned();
            let (y, _) = self.forward(&chunk, Mode::Infer);
            out.slice_mut(s![start..end, ..]).assign(&y);
            start = end;
        }
        Ok(out)
    }
}

/// A 128-D (by default) unit-norm embedding with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub label: Option<String>,
    pub example_id: String,
}

impl Embedding {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Stack embeddings into a row matrix for the metric ops.
pub fn embeddings_matrix(embeddings: &[Embedding]) -> Array2<f64> {
    let n = embeddings.len();
    let d = embeddings.first().map(Embedding::dim).unwrap_or(0);
    let mut m = Array2::<f64>::zeros((n, d));
    for (i, e) in embeddings.iter().enumerate() {
        assert_eq!(e.dim(), d, "embedding dimensions must agree");
        for (k, v) in e.values.iter().enumerate() {
            m[[i, k]] = *v;
        }
    }
    m
}

/// Arrange Mel examples `[mel, frame, channel]` into a network batch
/// `[n, channel, mel, frame]`.
pub fn batch_from_examples<F: NetFloat>(examples: &[&MelExample]) -> Result<Array4<F>> {
    let first = examples.first().ok_or(Error::EmptyInput)?;
    let (mel, frames, channels) = first.tensor.dim();
    let mut x = Array4::<F>::zeros((examples.len(), channels, mel, frames));
    for (n, ex) in examples.iter().enumerate() {
        if ex.tensor.dim() != (mel, frames, channels) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", (mel, frames, channels)),
                got: format!("{:?}", ex.tensor.dim()),
            });
        }
        for ((m, f, c), v) in ex.tensor.indexed_iter() {
            x[[n, c, m, f]] = F::from_f64(f64::from(*v));
        }
    }
    Ok(x)
}

impl Network<f32> {
    /// Embed a batch of Mel examples (inference mode, metric head).
    pub fn embed_examples(&self, examples: &[&MelExample]) -> Result<Vec<Embedding>> {
        let x = batch_from_examples::<f32>(examples)?;
        let m = self.embed_batch(&x)?;
        Ok(examples
            .iter()
            .zip(m.rows())
            .map(|(ex, row)| Embedding {
                values: row.iter().map(|v| f64::from(*v)).collect(),
                label: Some(ex.label.clone()),
                example_id: ex.example_id.clone(),
            })
            .collect())
    }
}
