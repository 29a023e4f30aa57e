use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max pooling over `(T, H, W)` with implicit `-inf` padding.
#[derive(Clone, Debug)]
pub struct MaxPool3d {
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    cache: Option<([usize; 5], Vec<u32>)>,
}

impl MaxPool3d {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self {
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        let mut out = input;
        for d in 0..3 {
            let padded = input[2 + d] + 2 * self.pad[d];
            if padded < self.kernel[d] {
                return Err(Error::Shape(format!("max-pool input {input:?} smaller than kernel")));
            }
            out[2 + d] = (padded - self.kernel[d]) / self.stride[d] + 1;
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor, cache: bool) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, c, t, h, w] = x.shape();
        let [_, _, to, ho, wo] = out_shape;
        let mut y = Tensor::zeros(out_shape);
        let mut arg = Vec::with_capacity(if cache { y.data().len() } else { 0 });
        let plane = t * h * w;
        let mut o = 0;
        for b in 0..n {
            let xs = x.sample(b);
            for ch in 0..c {
                let xc = &xs[ch * plane..(ch + 1) * plane];
                for ot in 0..to {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = 0usize;
                            for dt in 0..self.kernel[0] {
                                let it = (ot * self.stride[0] + dt) as isize - self.pad[0] as isize;
                                if it < 0 || it >= t as isize {
                                    continue;
                                }
                                for dh in 0..self.kernel[1] {
                                    let ih = (oh * self.stride[1] + dh) as isize - self.pad[1] as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for dw in 0..self.kernel[2] {
                                        let iw = (ow * self.stride[2] + dw) as isize - self.pad[2] as isize;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        let i = (it as usize * h + ih as usize) * w + iw as usize;
                                        if xc[i] > best {
                                            best = xc[i];
                                            best_i = i;
                                        }
                                    }
                                }
                            }
                            y.data_mut()[o] = best;
                            if cache {
                                arg.push((b * c * plane + ch * plane + best_i) as u32);
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
        self.cache = cache.then_some((x.shape(), arg));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.take().expect("max-pool backward without cached forward");
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(dy.data()) {
            d[i as usize] += g;
        }
        dx
    }
}

/// Mean over `(T, H, W)`, returned as `(N, C, 1, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, ..] = x.shape();
    let p = x.positions();
    let mut y = Tensor::zeros([n, c, 1, 1, 1]);
    for b in 0..n {
        let xs = x.sample(b);
        for ch in 0..c {
            y.data_mut()[b * c + ch] = xs[ch * p..(ch + 1) * p].iter().sum::<f64>() / p as f64;
        }
    }
    y
}

pub fn global_avg_pool_backward(dy: &Tensor, input_shape: [usize; 5]) -> Tensor {
    let [n, c, t, h, w] = input_shape;
    let p = t * h * w;
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let g = dy.data()[b * c + ch] / p as f64;
            dx.sample_mut(b)[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}
