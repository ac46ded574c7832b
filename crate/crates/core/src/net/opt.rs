//! Gradient-descent optimizers over the parameter list.
//!
//! State is keyed by parameter position, which is stable because parameter
//! visitation order is fixed at construction.

use ndarray::ArrayD;

use super::param::{NetFloat, Param};

/// Adagrad: per-coordinate accumulated squared gradients,
/// `w -= lr * g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone)]
pub struct Adagrad<F: NetFloat> {
    pub lr: f64,
    pub eps: f64,
    acc: Vec<ArrayD<F>>,
}

impl<F: NetFloat> Adagrad<F> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            eps: 1e-8,
            acc: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<F>]) {
        if self.acc.is_empty() {
            self.acc = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
        }
        assert_eq!(self.acc.len(), params.len(), "optimizer/parameter mismatch");
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);
        for (p, acc) in params.iter_mut().zip(self.acc.iter_mut()) {
            for ((w, g), a) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(acc.iter_mut())
            {
                *a = *a + *g * *g;
                *w = *w - lr * *g / (a.sqrt() + eps);
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: NetFloat> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: NetFloat> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<F>]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer/parameter mismatch");
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let corr1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);
        for ((p, m), v) in params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((w, g), mi), vi) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * *g;
                *vi = b2 * *vi + (one - b2) * *g * *g;
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_param() -> Param<f64> {
        let mut p = Param::<f64>::zeros("w".into(), &[2]);
        p.value[0] = 5.0;
        p.value[1] = -3.0;
        p
    }

    /// Minimize f(w) = ||w||^2 / 2; gradient is w itself.
    #[test]
    fn adagrad_descends_a_quadratic() {
        let mut p = quad_param();
        let mut opt = Adagrad::<f64>::new(0.5);
        let start: f64 = p.value.iter().map(|v| v * v).sum();
        for _ in 0..200 {
            let value = p.value.clone();
            p.grad.assign(&value);
            opt.step(&mut [&mut p]);
        }
        let end: f64 = p.value.iter().map(|v| v * v).sum();
        assert!(end < start * 0.05, "{start} -> {end}");
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = quad_param();
        let mut opt = Adam::<f64>::new(0.1);
        for _ in 0..300 {
            let value = p.value.clone();
            p.grad.assign(&value);
            opt.step(&mut [&mut p]);
        }
        let end: f64 = p.value.iter().map(|v| v * v).sum();
        assert!(end < 1e-2, "residual {end}");
    }

    #[test]
    fn adagrad_first_step_is_lr_sized() {
        let mut p = Param::<f64>::zeros("w".into(), &[1]);
        p.value[0] = 1.0;
        p.grad[0] = 0.3;
        let mut opt = Adagrad::<f64>::new(0.001);
        opt.step(&mut [&mut p]);
        // First update: lr * g / (|g| + eps) ~= lr.
        assert!((p.value[0] - (1.0 - 0.001)).abs() < 1e-6);
    }
}
