//! Dense numerical kernel used by the recurrent network.
//!
//! Everything here is generic over [`Real`] so the same code runs at single
//! precision for training and at double precision for gradient verification.

mod adam;
mod dd;
mod dense;
mod gradcheck;

pub use adam::{adam_step, AdamConfig};
pub use dd::DoubleDouble;
pub use dense::{cross_entropy, gemm_into, softmax_rows, Dense2D, Real};
pub(crate) use dense::{softmax_in_place, PROB_FLOOR};
pub use gradcheck::{finite_diff_check, FdOptions, FdReport, ParamSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Errors raised by the kernel.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range for {bound} columns (row {row})")]
    Index { row: usize, index: usize, bound: usize },
    #[error("loss function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    Length { len: usize, rows: usize, cols: usize },
}

/// A named trainable array with its gradient and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Dense2D<T>,
    pub grad: Dense2D<T>,
    pub m1: Dense2D<T>,
    pub m2: Dense2D<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Dense2D<T>) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            grad: Dense2D::zeros(r, c),
            m1: Dense2D::zeros(r, c),
            m2: Dense2D::zeros(r, c),
            value,
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Dense2D::zeros(rows, cols))
    }

    /// Uniform Glorot initialization, `r = sqrt(6 / (rows + cols))`.
    pub fn glorot(name: impl Into<String>, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let r = (6.0 / (rows + cols) as f64).sqrt();
        let value = Dense2D::from_fn(rows, cols, |_, _| T::from_f64c(rng.gen_range(-r..r)));
        Self::new(name, value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Copy converting precision. Gradients come along; optimizer state does too.
    /// Clears gradient, Adam moments and step count.
    pub fn reset_optimizer(&mut self) {
        self.zero_grad();
        self.m1.fill(T::zero());
        self.m2.fill(T::zero());
        self.step_count = 0;
    }

    pub fn cast<U: Real>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            m1: self.m1.cast(),
            m2: self.m2.cast(),
            step_count: self.step_count,
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut [&mut Parameter<T>], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.to_f64c().powi(2)).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64c(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.map_inplace(|g| g * scale);
        }
    }
    norm
}
