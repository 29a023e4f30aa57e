use rand::Rng;

use super::{Conv3d, Module, Param};
use crate::error::Result;
use crate::tensor::{gemm, Tensor};

/// Embedded-Gaussian non-local block with a residual connection:
/// `out = x + W_z · softmax(θ(x)ᵀ φ(x)) g(x)`.
///
/// The output projection starts at zero, so a freshly built block is the
/// identity map.
#[derive(Clone, Debug)]
pub struct NonLocal {
    pub theta: Conv3d,
    pub phi: Conv3d,
    pub g: Conv3d,
    pub out: Conv3d,
    inner: usize,
    cache: Option<Vec<NlCache>>,
}

#[derive(Clone, Debug)]
struct NlCache {
    theta: Vec<f64>,
    phi: Vec<f64>,
    g: Vec<f64>,
    attn: Vec<f64>,
}

impl NonLocal {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        let inner = (channels / 2).max(1);
        let pw = |n: &str, cin, cout, rng: &mut R| {
            Conv3d::new(&format!("{name}.{n}"), cin, cout, [1, 1, 1], [1, 1, 1], [0, 0, 0], true, rng)
        };
        let theta = pw("theta", channels, inner, rng);
        let phi = pw("phi", channels, inner, rng);
        let g = pw("g", channels, inner, rng);
        let mut out = pw("out", inner, channels, rng);
        out.weight.value.iter_mut().for_each(|v| *v = 0.0);
        Self {
            theta,
            phi,
            g,
            out,
            inner,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.theta.in_channels()
    }

    pub fn inner_channels(&self) -> usize {
        self.inner
    }

    /// Multiply-accumulate count of one forward pass on `input`.
    pub fn macs(&self, input: [usize; 5]) -> Result<u64> {
        let p = (input[2] * input[3] * input[4]) as u64;
        let attn = 2 * input[0] as u64 * p * p * self.inner as u64;
        let inner_shape = [input[0], self.inner, input[2], input[3], input[4]];
        Ok(self.theta.macs(input)? * 3 + self.out.macs(inner_shape)? + attn)
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let th = self.theta.forward(x, cache)?;
        let ph = self.phi.forward(x, cache)?;
        let gg = self.g.forward(x, cache)?;
        let [n, _, t, h, w] = x.shape();
        let p = t * h * w;
        let ci = self.inner;
        let mut y = Tensor::zeros([n, ci, t, h, w]);
        let mut caches = Vec::with_capacity(if cache { n } else { 0 });
        let mut attn = vec![0.0; p * p];
        for b in 0..n {
            // attn[i][j] = θ_iᵀ φ_j, then row softmax over j.
            gemm(p, ci, p, 1.0, th.sample(b), true, ph.sample(b), false, 0.0, &mut attn);
            for row in attn.chunks_mut(p) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                row.iter_mut().for_each(|v| *v /= s);
            }
            // y[:, i] = Σ_j attn[i][j] g[:, j]
            gemm(ci, p, p, 1.0, gg.sample(b), false, &attn, true, 0.0, y.sample_mut(b));
            if cache {
                caches.push(NlCache {
                    theta: th.sample(b).to_vec(),
                    phi: ph.sample(b).to_vec(),
                    g: gg.sample(b).to_vec(),
                    attn: attn.clone(),
                });
            }
        }
        let mut z = self.out.forward(&y, cache)?;
        z.add_assign(x);
        self.cache = cache.then_some(caches);
        Ok(z)
    }

    pub fn backward(&mut self, dout: &Tensor) -> Tensor {
        let caches = self.cache.take().expect("non-local backward without cached forward");
        let dy = self.out.backward(dout);
        let [n, _, t, h, w] = dout.shape();
        let p = t * h * w;
        let ci = self.inner;
        let shape = [n, ci, t, h, w];
        let mut dth = Tensor::zeros(shape);
        let mut dph = Tensor::zeros(shape);
        let mut dg = Tensor::zeros(shape);
        let mut dattn = vec![0.0; p * p];
        for (b, c) in caches.iter().enumerate() {
            let dyb = dy.sample(b);
            // dg = dy · attn ; dattn = dyᵀ · g
            gemm(ci, p, p, 1.0, dyb, false, &c.attn, false, 0.0, dg.sample_mut(b));
            gemm(p, ci, p, 1.0, dyb, true, &c.g, false, 0.0, &mut dattn);
            // softmax backward, row-wise
            for (drow, arow) in dattn.chunks_mut(p).zip(c.attn.chunks(p)) {
                let dot: f64 = drow.iter().zip(arow).map(|(d, a)| d * a).sum();
                for (d, a) in drow.iter_mut().zip(arow) {
                    *d = a * (*d - dot);
                }
            }
            // dθ = φ · dSᵀ ; dφ = θ · dS
            gemm(ci, p, p, 1.0, &c.phi, false, &dattn, true, 0.0, dth.sample_mut(b));
            gemm(ci, p, p, 1.0, &c.theta, false, &dattn, false, 0.0, dph.sample_mut(b));
        }
        let mut dx = dout.clone();
        dx.add_assign(&self.theta.backward(&dth));
        dx.add_assign(&self.phi.backward(&dph));
        dx.add_assign(&self.g.backward(&dg));
        dx
    }
}

impl Module for NonLocal {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.theta.visit_params(f);
        self.phi.visit_params(f);
        self.g.visit_params(f);
        self.out.visit_params(f);
    }
}
