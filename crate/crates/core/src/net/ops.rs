//! Differentiable primitives: convolution (im2col + GEMM), ReLU, global
//! average pooling, dense layers, dropout, unit normalization and softmax
//! cross-entropy. Every op provides an explicit backward pass; correctness
//! is pinned by finite-difference tests at the network level.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{NetFloat, Param};

/// 2-D convolution with SAME padding, strided along the height (Mel) axis
/// only. Weights are stored GEMM-ready as `[c_out, c_in * kh * kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: NetFloat> {
    pub w: Param<F>,
    pub b: Param<F>,
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride_h: usize,
}

/// SAME padding: output length `ceil(len / stride)`, zeros split with the
/// extra zero at the end.
fn same_pad(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

impl<F: NetFloat> Conv2d<F> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kh * kw;
        Self {
            w: Param::uniform_init(format!("{name}.w"), &[c_out, fan_in], fan_in, rng),
            b: Param::zeros(format!("{name}.b"), &[c_out]),
            c_in,
            c_out,
            kh,
            kw,
            stride_h,
        }
    }

    /// Gather the padded receptive fields of one example into a
    /// `[c_in*kh*kw, out_h*out_w]` matrix.
    fn im2col(&self, x: &ArrayView3<F>) -> Array2<F> {
        let (c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.c_in);
        let (out_h, pad_top) = same_pad(h, self.kh, self.stride_h);
        let (out_w, pad_left) = same_pad(w, self.kw, 1);
        debug_assert_eq!(out_w, w);

        let mut cols = Array2::<F>::zeros((self.c_in * self.kh * self.kw, out_h * out_w));
        for ci in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    // Time axis has stride 1: input col = out col + kj - pad_left.
                    let off = kj as isize - pad_left as isize;
                    let lo = (-off).max(0) as usize;
                    let hi = ((w as isize - off).min(out_w as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    for oh in 0..out_h {
                        let ih = (oh * self.stride_h + ki) as isize - pad_top as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = x.slice(s![
                            ci,
                            ih as usize,
                            (lo as isize + off) as usize..(hi as isize + off) as usize
                        ]);
                        let base = oh * out_w;
                        cols.slice_mut(s![row, base + lo..base + hi]).assign(&src);
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatter-add column gradients back onto
    /// the input feature map.
    fn col2im(&self, cols_grad: &ArrayView2<F>, h: usize, w: usize) -> Array3<F> {
        let (out_h, pad_top) = same_pad(h, self.kh, self.stride_h);
        let (out_w, pad_left) = same_pad(w, self.kw, 1);
        let mut dx = Array3::<F>::zeros((self.c_in, h, w));
        for ci in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let off = kj as isize - pad_left as isize;
                    let lo = (-off).max(0) as usize;
                    let hi = ((w as isize - off).min(out_w as isize)).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    for oh in 0..out_h {
                        let ih = (oh * self.stride_h + ki) as isize - pad_top as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let base = oh * out_w;
                        let src = cols_grad.slice(s![row, base + lo..base + hi]);
                        let mut dst = dx.slice_mut(s![
                            ci,
                            ih as usize,
                            (lo as isize + off) as usize..(hi as isize + off) as usize
                        ]);
                        dst += &src;
                    }
                }
            }
        }
        dx
    }

    /// Convolve a batch `[n, c_in, h, w] -> [n, c_out, out_h, w]`.
    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let (out_h, _) = same_pad(h, self.kh, self.stride_h);
        let wmat = self.w.view2();
        let mut y = Array4::<F>::zeros((n, self.c_out, out_h, w));
        for i in 0..n {
            let cols = self.im2col(&x.index_axis(Axis(0), i));
            let prod = wmat.dot(&cols); // [c_out, out_h*w]
            let mut yi = y.index_axis_mut(Axis(0), i);
            for co in 0..self.c_out {
                let bias = self.b.value_slice()[co];
                let mut plane = yi.slice_mut(s![co, .., ..]);
                let row = prod.row(co);
                for (o, v) in plane.iter_mut().zip(row.iter()) {
                    *o = *v + bias;
                }
            }
        }
        y
    }

    /// Accumulate weight/bias gradients and return the input gradient.
    pub fn backward(&mut self, x: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let (_, c_out, out_h, out_w) = dy.dim();
        debug_assert_eq!(c_out, self.c_out);
        let mut dx = Array4::<F>::zeros(x.raw_dim());
        let wmat = self.w.view2().to_owned();
        for i in 0..n {
            let cols = self.im2col(&x.index_axis(Axis(0), i));
            let dyi = dy
                .index_axis(Axis(0), i)
                .to_shape((c_out, out_h * out_w))
                .expect("contiguous gradient")
                .to_owned();
            // dW += dY . colsT
            let dw = dyi.dot(&cols.t());
            self.w.grad2_mut().zip_mut_with(&dw, |g, d| *g += *d);
            // db += row sums of dY
            for (co, g) in self.b.grad_slice_mut().iter_mut().enumerate() {
                *g += dyi.row(co).iter().fold(F::zero(), |acc, v| acc + *v);
            }
            // dX = col2im(WT . dY)
            let cols_grad = wmat.t().dot(&dyi);
            let dxi = self.col2im(&cols_grad.view(), h, w);
            dx.index_axis_mut(Axis(0), i).assign(&dxi);
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.w, &self.b]
    }
}

/// In-place ReLU; returns the activated tensor.
pub fn relu4<F: NetFloat>(mut x: Array4<F>) -> Array4<F> {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
    x
}

/// Gradient through ReLU given the activated output.
pub fn relu4_backward<F: NetFloat>(y: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, o| {
        if *o <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn relu2<F: NetFloat>(mut x: Array2<F>) -> Array2<F> {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
    x
}

pub fn relu2_backward<F: NetFloat>(y: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, o| {
        if *o <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Global average pooling `[n, c, h, w] -> [n, c]`.
pub fn gap_forward<F: NetFloat>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let scale = F::one() / F::from_f64((h * w) as f64);
    let mut y = Array2::<F>::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let sum = x
                .slice(s![i, ch, .., ..])
                .iter()
                .fold(F::zero(), |acc, v| acc + *v);
            y[[i, ch]] = sum * scale;
        }
    }
    y
}

pub fn gap_backward<F: NetFloat>(dy: &Array2<F>, h: usize, w: usize) -> Array4<F> {
    let (n, c) = dy.dim();
    let scale = F::one() / F::from_f64((h * w) as f64);
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let g = dy[[i, ch]] * scale;
            dx.slice_mut(s![i, ch, .., ..]).fill(g);
        }
    }
    dx
}

/// Fully connected layer; weights `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense<F: NetFloat> {
    pub w: Param<F>,
    pub b: Param<F>,
}

impl<F: NetFloat> Dense<F> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Param::uniform_init(format!("{name}.w"), &[out_dim, in_dim], in_dim, rng),
            b: Param::zeros(format!("{name}.b"), &[out_dim]),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w.view2().t());
        let b = self.b.value_slice();
        for mut row in y.rows_mut() {
            for (v, bias) in row.iter_mut().zip(b.iter()) {
                *v = *v + *bias;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        let dw = dy.t().dot(x);
        self.w.grad2_mut().zip_mut_with(&dw, |g, d| *g += *d);
        for (co, g) in self.b.grad_slice_mut().iter_mut().enumerate() {
            *g += dy.column(co).iter().fold(F::zero(), |acc, v| acc + *v);
        }
        dy.dot(&self.w.view2())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.w, &self.b]
    }
}

/// Inverted dropout: scales kept activations by `1/keep` at train time so
/// inference needs no rescaling. Returns the output and the mask.
pub fn dropout_forward<F: NetFloat>(
    x: &Array2<F>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<F>, Array2<F>) {
    if rate <= 0.0 {
        return (x.clone(), Array2::from_elem(x.raw_dim(), F::one()));
    }
    let keep = 1.0 - rate;
    let scale = F::from_f64(1.0 / keep);
    let mask = Array2::from_shape_simple_fn(x.dim(), || {
        if rng.gen::<f64>() < keep {
            scale
        } else {
            F::zero()
        }
    });
    (x * &mask, mask)
}

pub fn dropout_backward<F: NetFloat>(dy: &Array2<F>, mask: &Array2<F>) -> Array2<F> {
    dy * mask
}

/// Scale every row onto the unit sphere; returns outputs and row norms.
pub fn unit_norm_forward<F: NetFloat>(x: &Array2<F>) -> (Array2<F>, Array1<F>) {
    let eps = F::from_f64(1e-12);
    let mut y = x.clone();
    let mut norms = Array1::<F>::zeros(x.nrows());
    for (i, mut row) in y.rows_mut().into_iter().enumerate() {
        let n = row
            .iter()
            .fold(F::zero(), |acc, v| acc + *v * *v)
            .sqrt()
            .max(eps);
        norms[i] = n;
        row.mapv_inplace(|v| v / n);
    }
    (y, norms)
}

/// Gradient through row normalization: `dx = (dy - y * <y, dy>) / norm`.
pub fn unit_norm_backward<F: NetFloat>(
    y: &Array2<F>,
    norms: &Array1<F>,
    dy: &Array2<F>,
) -> Array2<F> {
    let mut dx = Array2::<F>::zeros(y.raw_dim());
    for i in 0..y.nrows() {
        let yi = y.row(i);
        let di = dy.row(i);
        let dot = yi
            .iter()
            .zip(di.iter())
            .fold(F::zero(), |acc, (a, b)| acc + *a * *b);
        let n = norms[i];
        for (k, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = (di[k] - yi[k] * dot) / n;
        }
    }
    dx
}

/// Row-wise softmax with the usual max-shift for stability.
pub fn softmax<F: NetFloat>(logits: &Array2<F>) -> Array2<F> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |a, v| a.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().fold(F::zero(), |acc, v| acc + *v);
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<F: NetFloat>(
    logits: &Array2<F>,
    targets: &[usize],
) -> (f64, Array2<F>) {
    let n = logits.nrows();
    assert_eq!(n, targets.len(), "one target per row");
    let probs = softmax(logits);
    let tiny = F::from_f64(1e-30);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(tiny).to_f64c().ln();
    }
    loss /= n as f64;
    let scale = F::from_f64(1.0 / n as f64);
    let mut grad = probs;
    for (i, &t) in targets.iter().enumerate() {
        grad[[i, t]] = grad[[i, t]] - F::one();
    }
    grad.mapv_inplace(|v| v * scale);
    (loss, grad)
}
