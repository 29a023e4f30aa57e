use rand::Rng;

use super::{standard_normal, Mode, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer on `(N, D, 1, 1, 1)` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = 0.01;
        let w = (0..inputs * outputs).map(|_| std * standard_normal(rng)).collect();
        Self {
            weight: Param::new(format!("{name}.weight"), vec![outputs, inputs], w),
            bias: Param::filled(format!("{name}.bias"), vec![outputs], 0.0),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let n = x.batch();
        let d = x.sample_len();
        if d != self.inputs() {
            return Err(Error::Shape(format!(
                "{}: expected {} features, got {}",
                self.weight.name,
                self.inputs(),
                d
            )));
        }
        let o = self.outputs();
        let mut y = Tensor::zeros([n, o, 1, 1, 1]);
        gemm(n, d, o, 1.0, x.data(), false, &self.weight.value, true, 0.0, y.data_mut());
        for b in 0..n {
            for (v, bv) in y.sample_mut(b).iter_mut().zip(&self.bias.value) {
                *v += bv;
            }
        }
        self.cache = cache.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("linear backward without cached forward");
        let n = x.batch();
        let d = self.inputs();
        let o = self.outputs();
        gemm(o, n, d, 1.0, dy.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        for b in 0..n {
            for (g, v) in self.bias.grad.iter_mut().zip(dy.sample(b)) {
                *g += v;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, o, d, 1.0, dy.data(), false, &self.weight.value, false, 0.0, dx.data_mut());
        dx
    }
}

impl Module for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Inverted dropout: active only in train mode.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Tensor {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.data().len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        if let Some(mask) = self.mask.take() {
            dx.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        }
        dx
    }
}
