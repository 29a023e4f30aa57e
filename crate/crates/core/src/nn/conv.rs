use rand::Rng;

use super::{fan_out_normal, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// 3-D convolution over `(T, H, W)` implemented as im2col + GEMM.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Option<Param>,
    cin: usize,
    cout: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    cache: Option<Tensor>,
    gather: Option<([usize; 3], Vec<usize>)>,
}

const SKIP: usize = usize::MAX;

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let k: usize = kernel.iter().product();
        let weight = Param::new(
            format!("{name}.weight"),
            vec![cout, cin, kernel[0], kernel[1], kernel[2]],
            fan_out_normal(rng, cout * cin * k, cout * k),
        );
        let bias = bias.then(|| Param::filled(format!("{name}.bias"), vec![cout], 0.0));
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad,
            cache: None,
            gather: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn kernel(&self) -> [usize; 3] {
        self.kernel
    }

    pub fn stride(&self) -> [usize; 3] {
        self.stride
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    pub fn output_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        let [n, c, t, h, w] = input;
        if c != self.cin {
            return Err(Error::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name, self.cin, c
            )));
        }
        let mut out = [n, self.cout, 0, 0, 0];
        for (d, size) in [t, h, w].into_iter().enumerate() {
            let padded = size + 2 * self.pad[d];
            if padded < self.kernel[d] {
                return Err(Error::Shape(format!(
                    "{}: input extent {} smaller than kernel {}",
                    self.weight.name, size, self.kernel[d]
                )));
            }
            out[2 + d] = (padded - self.kernel[d]) / self.stride[d] + 1;
        }
        Ok(out)
    }

    /// Multiply-accumulate count for one forward pass over `input`.
    pub fn macs(&self, input: [usize; 5]) -> Result<u64> {
        let out = self.output_shape(input)?;
        let k: usize = self.kernel.iter().product();
        Ok((out.iter().product::<usize>() * self.cin * k) as u64)
    }

    /// Source offset (within one sample's input) of every im2col cell, or
    /// `SKIP` for padding. Cached per input extent.
    fn gather_table(&mut self, in_dims: [usize; 3], out_dims: [usize; 3]) -> &[usize] {
        if self.gather.as_ref().map(|g| g.0) != Some(in_dims) {
            let [t, h, w] = in_dims;
            let [to, ho, wo] = out_dims;
            let [kt, kh, kw] = self.kernel;
            let [st, sh, sw] = self.stride;
            let [pt, ph, pw] = self.pad;
            let mut table = Vec::with_capacity(self.cin * kt * kh * kw * to * ho * wo);
            for ci in 0..self.cin {
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            for ot in 0..to {
                                let it = (ot * st + dt) as isize - pt as isize;
                                for oh in 0..ho {
                                    let ih = (oh * sh + dh) as isize - ph as isize;
                                    for ow in 0..wo {
                                        let iw = (ow * sw + dw) as isize - pw as isize;
                                        let inside = (0..t as isize).contains(&it)
                                            && (0..h as isize).contains(&ih)
                                            && (0..w as isize).contains(&iw);
                                        table.push(if inside {
                                            ((ci * t + it as usize) * h + ih as usize) * w + iw as usize
                                        } else {
                                            SKIP
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.gather = Some((in_dims, table));
        }
        &self.gather.as_ref().unwrap().1
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let batch = x.batch();
        let mut y = Tensor::zeros(out_shape);
        let in_dims = [x.shape()[2], x.shape()[3], x.shape()[4]];
        let out_dims = [out_shape[2], out_shape[3], out_shape[4]];
        let k = self.cin * self.kernel.iter().product::<usize>();
        let p: usize = out_dims.iter().product();
        let cols_per_row = batch * p;
        // All samples side by side: `k × (N·p)`, one GEMM for the batch.
        let mut cols = vec![0.0; k * cols_per_row];
        let pointwise = self.is_pointwise();
        let table: &[usize] = if pointwise { &[] } else { self.gather_table(in_dims, out_dims) };
        for n in 0..batch {
            let xs = x.sample(n);
            for r in 0..k {
                for q in 0..p {
                    let v = if pointwise {
                        xs[r * p + q]
                    } else {
                        match table[r * p + q] {
                            SKIP => continue,
                            i => xs[i],
                        }
                    };
                    let j = n * p + q;
                    cols[r * cols_per_row + j] = v;
                }
            }
        }
        let mut out = vec![0.0; self.cout * cols_per_row];
        gemm(self.cout, k, cols_per_row, 1.0, &self.weight.value, false, &cols, false, 0.0, &mut out);
        for n in 0..batch {
            let yn = y.sample_mut(n);
            for co in 0..self.cout {
                let src = &out[co * cols_per_row + n * p..co * cols_per_row + (n + 1) * p];
                let dst = &mut yn[co * p..(co + 1) * p];
                match &self.bias {
                    Some(b) => dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + b.value[co]),
                    None => dst.copy_from_slice(src),
                }
            }
        }
        self.cache = cache.then(|| x.clone());
        Ok(y)
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self
            .cache
            .take()
            .unwrap_or_else(|| panic!("{}: backward without cached forward", self.weight.name));
        let in_dims = [x.shape()[2], x.shape()[3], x.shape()[4]];
        let out_dims = [dy.shape()[2], dy.shape()[3], dy.shape()[4]];
        let k = self.cin * self.kernel.iter().product::<usize>();
        let p: usize = out_dims.iter().product();
        let pointwise = self.is_pointwise();
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; k * p] };
        let mut dcols = vec![0.0; k * p];
        if !pointwise {
            self.gather_table(in_dims, out_dims);
        }
        let cached = self.gather.take();
        let table: &[usize] = cached.as_ref().map_or(&[], |g| &g.1);
        for n in 0..x.batch() {
            let dyn_ = dy.sample(n);
            let b: &[f64] = if pointwise {
                x.sample(n)
            } else {
                let xs = x.sample(n);
                for (c, &i) in cols.iter_mut().zip(table) {
                    *c = if i == SKIP { 0.0 } else { xs[i] };
                }
                &cols
            };
            gemm(self.cout, p, k, 1.0, dyn_, false, b, true, 1.0, &mut self.weight.grad);
            if let Some(bias) = &mut self.bias {
                for (co, g) in bias.grad.iter_mut().enumerate() {
                    *g += dyn_[co * p..(co + 1) * p].iter().sum::<f64>();
                }
            }
            if pointwise {
                gemm(k, self.cout, p, 1.0, &self.weight.value, true, dyn_, false, 0.0, dx.sample_mut(n));
            } else {
                gemm(k, self.cout, p, 1.0, &self.weight.value, true, dyn_, false, 0.0, &mut dcols);
                let dxn = dx.sample_mut(n);
                for (&d, &i) in dcols.iter().zip(table) {
                    if i != SKIP {
                        dxn[i] += d;
                    }
                }
            }
        }
        self.gather = cached;
        dx
    }
}

impl Module for Conv3d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct seven-loop convolution used as the reference.
    fn direct(conv: &Conv3d, x: &Tensor) -> Tensor {
        let out = conv.output_shape(x.shape()).unwrap();
        let [n, c, t, h, w] = x.shape();
        let [kt, kh, kw] = conv.kernel;
        Tensor::from_fn(out, |[b, co, ot, oh, ow]| {
            let mut s = conv.bias.as_ref().map_or(0.0, |p| p.value[co]);
            for ci in 0..c {
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let it = (ot * conv.stride[0] + dt) as isize - conv.pad[0] as isize;
                            let ih = (oh * conv.stride[1] + dh) as isize - conv.pad[1] as isize;
                            let iw = (ow * conv.stride[2] + dw) as isize - conv.pad[2] as isize;
                            if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= w as isize {
                                continue;
                            }
                            let wi = (((co * c + ci) * kt + dt) * kh + dh) * kw + dw;
                            s += conv.weight.value[wi] * x.get([b, ci, it as usize, ih as usize, iw as usize]);
                        }
                    }
                }
            }
            let _ = n;
            s
        })
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (kernel, stride, pad) in [
            ([3, 3, 3], [1, 2, 2], [1, 1, 1]),
            ([5, 1, 1], [4, 1, 1], [2, 0, 0]),
            ([1, 1, 1], [1, 1, 1], [0, 0, 0]),
            ([1, 7, 7], [1, 2, 2], [0, 3, 3]),
        ] {
            let mut conv = Conv3d::new("c", 3, 4, kernel, stride, pad, true, &mut rng);
            conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3, 0.0];
            let x = Tensor::from_fn([2, 3, 8, 9, 7], |i| ((i[0] * 7 + i[1] * 5 + i[2] * 3 + i[3] + 2 * i[4]) as f64 * 0.13).sin());
            let got = conv.forward(&x, false).unwrap();
            let want = direct(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-10, "{kernel:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv3d::new("c", 2, 3, [3, 3, 3], [2, 2, 1], [1, 1, 1], true, &mut rng);
        let x = Tensor::from_fn([2, 2, 5, 4, 3], |i| ((i[1] + 3 * i[2] + 5 * i[3] + 7 * i[4] + 11 * i[0]) as f64).cos());
        let y = conv.forward(&x, true).unwrap();
        let gy = Tensor::from_fn(y.shape(), |i| ((i[1] * 2 + i[2] + i[3] + i[4]) as f64 * 0.7).sin());
        let dx = conv.backward(&gy);
        let loss = |conv: &mut Conv3d, x: &Tensor| -> f64 {
            let y = conv.forward(x, false).unwrap();
            y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in (0..x.data().len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "dx[{i}]");
        }
        let grads = conv.weight.grad.clone();
        for i in (0..grads.len()).step_by(5) {
            let v = conv.weight.value[i];
            conv.weight.value[i] = v + h;
            let lp = loss(&mut conv, &x);
            conv.weight.value[i] = v - h;
            let lm = loss(&mut conv, &x);
            conv.weight.value[i] = v;
            assert!(((lp - lm) / (2.0 * h) - grads[i]).abs() < 1e-6, "dw[{i}]");
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv3d::new("stem", 3, 8, [1, 3, 3], [1, 1, 1], [0, 1, 1], false, &mut rng);
        let err = conv.forward(&Tensor::zeros([1, 4, 2, 4, 4]), false).unwrap_err();
        assert!(err.to_string().contains("stem.weight"));
    }
}
