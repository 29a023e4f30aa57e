use super::{Buffer, Mode, Module, Param};
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(N, T, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm3d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    cache: Option<(Tensor, Vec<f64>, Mode)>,
}

impl BatchNorm3d {
    pub fn new(name: &str, channels: usize, gamma_init: f64) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], gamma_init),
            beta: Param::filled(format!("{name}.beta"), vec![channels], 0.0),
            running_mean: Buffer::filled(format!("{name}.running_mean"), channels, 0.0),
            running_var: Buffer::filled(format!("{name}.running_var"), channels, 1.0),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, cache: bool) -> Tensor {
        let [n, c, ..] = x.shape();
        debug_assert_eq!(c, self.channels());
        let p = x.positions();
        let m = (n * p) as f64;
        let mut xhat = x.clone();
        let mut invstd = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += x.sample(b)[ch * p..(ch + 1) * p].iter().sum::<f64>();
                    }
                    let mean = s / m;
                    let mut ss = 0.0;
                    for b in 0..n {
                        ss += x.sample(b)[ch * p..(ch + 1) * p]
                            .iter()
                            .map(|v| (v - mean) * (v - mean))
                            .sum::<f64>();
                    }
                    let var = ss / m;
                    let unbiased = if m > 1.0 { ss / (m - 1.0) } else { var };
                    self.running_mean.value[ch] =
                        (1.0 - MOMENTUM) * self.running_mean.value[ch] + MOMENTUM * mean;
                    self.running_var.value[ch] =
                        (1.0 - MOMENTUM) * self.running_var.value[ch] + MOMENTUM * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.value[ch], self.running_var.value[ch]),
            };
            let is = 1.0 / (var + EPS).sqrt();
            invstd[ch] = is;
            for b in 0..n {
                xhat.sample_mut(b)[ch * p..(ch + 1) * p]
                    .iter_mut()
                    .for_each(|v| *v = (*v - mean) * is);
            }
        }
        let mut y = xhat.clone();
        for b in 0..n {
            let ys = y.sample_mut(b);
            for ch in 0..c {
                let (g, be) = (self.gamma.value[ch], self.beta.value[ch]);
                ys[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v = g * *v + be);
            }
        }
        self.cache = cache.then_some((xhat, invstd, mode));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, invstd, mode) = self
            .cache
            .take()
            .unwrap_or_else(|| panic!("{}: backward without cached forward", self.gamma.name));
        let [n, c, ..] = dy.shape();
        let p = dy.positions();
        let m = (n * p) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                let d = &dy.sample(b)[ch * p..(ch + 1) * p];
                let xh = &xhat.sample(b)[ch * p..(ch + 1) * p];
                sum_dy += d.iter().sum::<f64>();
                sum_dy_xhat += d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let g = self.gamma.value[ch];
            let is = invstd[ch];
            for b in 0..n {
                let d = &dy.sample(b)[ch * p..(ch + 1) * p];
                let xh = &xhat.sample(b)[ch * p..(ch + 1) * p];
                let out = &mut dx.sample_mut(b)[ch * p..(ch + 1) * p];
                match mode {
                    Mode::Train => {
                        for i in 0..p {
                            out[i] = g * is * (d[i] - sum_dy / m - xh[i] * sum_dy_xhat / m);
                        }
                    }
                    Mode::Eval => {
                        for i in 0..p {
                            out[i] = g * is * d[i];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm3d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor {
        Tensor::from_fn([3, 2, 2, 2, 3], |i| {
            ((i[0] * 13 + i[1] * 7 + i[2] * 5 + i[3] * 3 + i[4]) as f64 * 0.41).sin() * (1.0 + i[1] as f64)
        })
    }

    #[test]
    fn train_output_is_normalized_per_channel() {
        let mut bn = BatchNorm3d::new("bn", 2, 1.0);
        let y = bn.forward(&input(), Mode::Train, false);
        let p = y.positions();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.sample(b)[ch * p..(ch + 1) * p].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut bn = BatchNorm3d::new("bn", 2, 0.0);
        bn.beta.value = vec![0.5, -1.0];
        let y = bn.forward(&input(), Mode::Train, false);
        let p = y.positions();
        assert!(y.sample(1)[..p].iter().all(|&v| v == 0.5));
        assert!(y.sample(2)[p..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn backward_matches_finite_differences_in_both_modes() {
        for mode in [Mode::Train, Mode::Eval] {
            let mut bn = BatchNorm3d::new("bn", 2, 1.0);
            bn.gamma.value = vec![1.3, -0.7];
            bn.beta.value = vec![0.2, 0.1];
            bn.running_mean.value = vec![0.1, -0.3];
            bn.running_var.value = vec![0.8, 2.0];
            let x = input();
            let gy = Tensor::from_fn(x.shape(), |i| ((i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3] + 7 * i[4]) as f64).cos());
            let loss = |bn: &mut BatchNorm3d, x: &Tensor| -> f64 {
                let y = bn.forward(x, mode, false);
                y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
            };
            let mut probe = bn.clone();
            probe.forward(&x, mode, true);
            let dx = probe.backward(&gy);
            let h = 1e-6;
            for i in 0..x.data().len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (loss(&mut bn.clone(), &xp) - loss(&mut bn.clone(), &xm)) / (2.0 * h);
                assert!((fd - dx.data()[i]).abs() < 1e-6, "{mode:?} dx[{i}]: {fd} vs {}", dx.data()[i]);
            }
            for ch in 0..2 {
                let mut bp = bn.clone();
                bp.gamma.value[ch] += h;
                let mut bm = bn.clone();
                bm.gamma.value[ch] -= h;
                let fd = (loss(&mut bp, &x) - loss(&mut bm, &x)) / (2.0 * h);
                assert!((fd - probe.gamma.grad[ch]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn running_stats_track_batch_statistics() {
        let mut bn = BatchNorm3d::new("bn", 2, 1.0);
        let x = input();
        for _ in 0..200 {
            bn.forward(&x, Mode::Train, false);
        }
        let p = x.positions();
        let m: f64 = (0..3).map(|b| x.sample(b)[..p].iter().sum::<f64>()).sum::<f64>() / (3 * p) as f64;
        assert!((bn.running_mean.value[0] - m).abs() < 1e-9);
    }
}
