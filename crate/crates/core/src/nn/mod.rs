//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during a forward call made
//! with `cache = true`; `backward` consumes that cache and accumulates into the
//! `grad` buffers of its parameters.

mod conv;
mod linear;
mod loss;
mod nonlocal;
mod norm;
mod pool;

pub use conv::Conv3d;
pub use linear::{Dropout, Linear};
pub use loss::softmax_cross_entropy;
pub use nonlocal::NonLocal;
pub use norm::BatchNorm3d;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool3d};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Train mode uses batch statistics and dropout; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable array together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![v; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Non-trainable state saved with the model (normalization running stats).
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Buffer {
    pub fn filled(name: impl Into<String>, len: usize, v: f64) -> Self {
        Self {
            name: name.into(),
            shape: vec![len],
            value: vec![v; len],
        }
    }
}

/// Anything owning parameters or buffers.
pub trait Module {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut Buffer)) {}
}

/// Standard normal sample via Box-Muller.
pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gaussian weights with variance `2 / fan_out`.
pub(crate) fn fan_out_normal<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_out: usize) -> Vec<f64> {
    let std = (2.0 / fan_out.max(1) as f64).sqrt();
    (0..len).map(|_| std * standard_normal(rng)).collect()
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Mask `dy` by the positive part of the ReLU output it flows back through.
pub fn relu_backward_inplace(dy: &mut Tensor, out: &Tensor) {
    for (g, &o) in dy.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
