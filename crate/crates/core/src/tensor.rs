//! Dense 5-D feature volumes in `(N, C, T, H, W)` order and the GEMM kernel
//! the layers are built on.

use crate::error::{Error, Result};

/// Batch of spatiotemporal feature volumes, row-major `(N, C, T, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for shape {:?} (needs {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 5], mut f: impl FnMut([usize; 5]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for t in 0..shape[2] {
                    for h in 0..shape[3] {
                        for w in 0..shape[4] {
                            data.push(f([n, c, t, h, w]));
                        }
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.shape[2]
    }

    /// Number of positions `T·H·W` per channel.
    #[inline]
    pub fn positions(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Values per sample, `C·T·H·W`.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.positions()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn index(&self, idx: [usize; 5]) -> usize {
        let [_, c, t, h, w] = self.shape;
        (((idx[0] * c + idx[1]) * t + idx[2]) * h + idx[3]) * w + idx[4]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 5]) -> f64 {
        self.data[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 5], v: f64) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Concatenate along the channel axis. All other axes must agree.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [na, ca, ta, ha, wa] = a.shape;
        let [nb, cb, tb, hb, wb] = b.shape;
        if (na, ta, ha, wa) != (nb, tb, hb, wb) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?} along channels",
                a.shape, b.shape
            )));
        }
        let mut out = Tensor::zeros([na, ca + cb, ta, ha, wa]);
        let la = a.sample_len();
        let lb = b.sample_len();
        for n in 0..na {
            let dst = out.sample_mut(n);
            dst[..la].copy_from_slice(a.sample(n));
            dst[la..la + lb].copy_from_slice(b.sample(n));
        }
        Ok(out)
    }

    /// Inverse of [`Tensor::concat_channels`]: split off the first `c` channels.
    pub fn split_channels(&self, c: usize) -> (Tensor, Tensor) {
        let [n, ct, t, h, w] = self.shape;
        assert!(c <= ct);
        let p = t * h * w;
        let mut a = Tensor::zeros([n, c, t, h, w]);
        let mut b = Tensor::zeros([n, ct - c, t, h, w]);
        for i in 0..n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..c * p]);
            b.sample_mut(i).copy_from_slice(&src[c * p..]);
        }
        (a, b)
    }
}

/// `C = alpha · op(A) · op(B) + beta · C` for row-major matrices, where
/// `op(A)` is `m×k` and `op(B)` is `k×n`. `trans_a`/`trans_b` indicate the
/// stored matrix is the transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: A too small");
    assert!(b.len() >= k * n, "gemm: B too small");
    assert!(c.len() >= m * n, "gemm: C too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: bounds checked above; strides describe dense row-major storage
    // of the (possibly transposed) operands.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
