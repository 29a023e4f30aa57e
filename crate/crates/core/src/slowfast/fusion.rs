use rand::Rng;

use super::config::LATERAL_TEMPORAL_KERNEL;
use crate::error::{Error, Result};
use crate::nn::{Conv3d, Module, Param};
use crate::tensor::Tensor;

/// Fast-to-slow lateral connection: a time-strided convolution over the fast
/// features whose output is concatenated onto the slow channels.
#[derive(Clone, Debug)]
pub struct LateralFusion {
    pub conv: Conv3d,
    alpha: usize,
}

impl LateralFusion {
    pub fn new<R: Rng + ?Sized>(name: &str, fast_channels: usize, ratio: usize, alpha: usize, rng: &mut R) -> Self {
        let k = LATERAL_TEMPORAL_KERNEL;
        Self {
            conv: Conv3d::new(
                name,
                fast_channels,
                ratio * fast_channels,
                [k, 1, 1],
                [alpha, 1, 1],
                [k / 2, 0, 0],
                false,
                rng,
            ),
            alpha,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    /// Set the kernel to pass channel `c` straight through to output `c`
    /// (centre temporal tap only); extra output channels get zero weights.
    pub fn set_identity(&mut self) {
        let cin = self.conv.in_channels();
        let k = LATERAL_TEMPORAL_KERNEL;
        let cout = self.conv.out_channels();
        let w = &mut self.conv.weight.value;
        w.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..cin.min(cout) {
            w[(c * cin + c) * k + k / 2] = 1.0;
        }
    }

    /// Lateral output alone, shaped like the slow features in `(T, H, W)`.
    pub fn project(&mut self, fast: &Tensor, slow_shape: [usize; 5], cache: bool) -> Result<Tensor> {
        let [_, _, tf, hf, wf] = fast.shape();
        let [ns, _, ts, hs, ws] = slow_shape;
        if tf != self.alpha * ts {
            return Err(Error::Shape(format!(
                "{}: fast temporal length {tf} is not alpha({}) x slow length {ts}",
                self.conv.weight.name, self.alpha
            )));
        }
        if (hf, wf) != (hs, ws) || fast.batch() != ns {
            return Err(Error::Shape(format!(
                "{}: fast features {:?} do not align spatially with slow {:?}",
                self.conv.weight.name,
                fast.shape(),
                slow_shape
            )));
        }
        let lat = self.conv.forward(fast, cache)?;
        debug_assert_eq!(lat.frames(), ts);
        Ok(lat)
    }

    /// Fused slow features: `concat(slow, conv(fast))` along channels.
    pub fn fuse(&mut self, fast: &Tensor, slow: &Tensor, cache: bool) -> Result<Tensor> {
        let lat = self.project(fast, slow.shape(), cache)?;
        Tensor::concat_channels(slow, &lat)
    }

    /// Gradient with respect to the fast input, given the gradient of the
    /// lateral channels.
    pub fn backward(&mut self, dlat: &Tensor) -> Tensor {
        self.conv.backward(dlat)
    }

    pub fn macs(&self, fast_shape: [usize; 5]) -> Result<u64> {
        self.conv.macs(fast_shape)
    }

    pub fn output_shape(&self, fast_shape: [usize; 5]) -> Result<[usize; 5]> {
        self.conv.output_shape(fast_shape)
    }
}

impl Module for LateralFusion {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_params(f);
    }
}
