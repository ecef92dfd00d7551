//! Shared network building blocks: a dense layer, softmax, cross-entropy,
//! and parameter (de)serialization into flat vectors for the
//! finite-difference gradient checks.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::Mat;

/// Fully connected layer `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense { w: Mat::zeros(out_dim, in_dim), b: vec![0.0; out_dim] }
    }

    pub fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let mut layer = Dense::zeros(out_dim, in_dim);
        init_uniform(layer.w.as_mut_slice(), rng);
        init_uniform(&mut layer.b, rng);
        layer
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        axpy_vec(&mut y, &self.b, 1.0);
        y
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// and returns the input gradient `W^T dy`.
    pub fn backward(&self, grad: &mut Dense, x: &[f64], dy: &[f64]) -> Vec<f64> {
        grad.w.add_outer(dy, x, 1.0);
        axpy_vec(&mut grad.b, dy, 1.0);
        self.w.vecmat(dy)
    }

    pub fn add_scaled(&mut self, other: &Dense, s: f64) {
        self.w.add_scaled(&other.w, s);
        axpy_vec(&mut self.b, &other.b, s);
    }

    pub fn fill(&mut self, v: f64) {
        self.w.fill(v);
        self.b.iter_mut().for_each(|x| *x = v);
    }
}

fn axpy_vec(a: &mut [f64], b: &[f64], s: f64) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

/// Conventional small-range init; the forget-gate bias is set separately.
pub fn init_uniform<R: Rng>(slice: &mut [f64], rng: &mut R) {
    for v in slice {
        *v = rng.random_range(-0.08..=0.08);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Numerically stable softmax; the output is a valid distribution for any
/// finite input.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Cross-entropy against a one-hot target, returning the loss and the
/// gradient with respect to the logits (`probs - onehot`).
pub fn cross_entropy(probs: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = -libm::log(probs[target].max(1e-300));
    let mut dlogits = probs.to_vec();
    dlogits[target] -= 1.0;
    (loss, dlogits)
}

/// Flat-vector views over model parameters, used by the finite-difference
/// gradient oracles.
pub trait FlatParams {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]);
}

impl FlatParams for Dense {
    fn params(&self) -> Vec<f64> {
        let mut out = self.w.as_slice().to_vec();
        out.extend_from_slice(&self.b);
        out
    }

    fn set_params(&mut self, flat: &[f64]) {
        let nw = self.w.as_slice().len();
        self.w.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.b.copy_from_slice(&flat[nw..]);
    }
}
