//! Parameter storage shared by all layers: a named value/gradient pair with
//! fan-in-scaled uniform initialization.

use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, Ix2, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scalar type the network runs in. `f32` for production training, `f64`
/// for finite-difference verification.
pub trait NetFloat: ndarray::NdFloat + std::iter::Sum + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn from_f64(x: f64) -> Self;
    fn to_f64c(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl NetFloat for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64c(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl NetFloat for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64c(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A named weight array with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: NetFloat> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    /// Whether the L2 penalty applies (weights yes, biases no).
    pub decay: bool,
}

impl<F: NetFloat> Param<F> {
    /// Fan-in-scaled uniform init: `U(-sqrt(3/fan_in), sqrt(3/fan_in))`,
    /// drawn in f64 for a bit-identical layout across scalar types.
    pub fn uniform_init(name: String, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (3.0 / fan_in as f64).sqrt();
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            F::from_f64(rng.gen_range(-limit..limit))
        });
        let grad = ArrayD::zeros(IxDyn(shape));
        Self {
            name,
            value,
            grad,
            decay: true,
        }
    }

    pub fn zeros(name: String, shape: &[usize]) -> Self {
        Self {
            name,
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
            decay: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn view2(&self) -> ArrayView2<'_, F> {
        self.value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-D parameter")
    }

    pub fn grad2_mut(&mut self) -> ArrayViewMut2<'_, F> {
        self.grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-D parameter")
    }

    pub fn value_slice(&self) -> &[F] {
        self.value.as_slice().expect("contiguous parameter")
    }

    pub fn value_slice_mut(&mut self) -> &mut [F] {
        self.value.as_slice_mut().expect("contiguous parameter")
    }

    pub fn grad_slice(&self) -> &[F] {
        self.grad.as_slice().expect("contiguous parameter")
    }

    pub fn grad_slice_mut(&mut self) -> &mut [F] {
        self.grad.as_slice_mut().expect("contiguous parameter")
    }
}
