//! Residual stages and stems for one pathway.

use rand::Rng;

use crate::error::Result;
use crate::nn::{relu_backward_inplace, relu_inplace, BatchNorm3d, Conv3d, MaxPool3d, Mode, Module, NonLocal};
use crate::nn::{Buffer, Param};
use crate::tensor::Tensor;

/// Convolution followed by batch norm.
#[derive(Clone, Debug)]
pub(crate) struct ConvBn {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        gamma: f64,
        rng: &mut R,
    ) -> Self {
        let pad = kernel.map(|k| k / 2);
        Self {
            conv: Conv3d::new(&format!("{name}.conv"), cin, cout, kernel, stride, pad, false, rng),
            bn: BatchNorm3d::new(&format!("{name}.bn"), cout, gamma),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, cache: bool) -> Result<Tensor> {
        let y = self.conv.forward(x, cache)?;
        Ok(self.bn.forward(&y, mode, cache))
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.bn.backward(dy);
        self.conv.backward(&d)
    }

    fn macs(&self, input: [usize; 5]) -> Result<(u64, [usize; 5])> {
        Ok((self.conv.macs(input)?, self.conv.output_shape(input)?))
    }
}

impl Module for ConvBn {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer)) {
        self.bn.visit_buffers(f);
    }
}

/// Residual block. Basic blocks have two convolutions, bottlenecks three.
/// The last batch norm of the residual branch starts with zero scale.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    branch: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
    /// ReLU outputs inside the branch and the block output, for backward.
    relu_cache: Vec<Tensor>,
    out_cache: Option<Tensor>,
}

pub(crate) struct BlockSpec {
    pub cin: usize,
    pub inner: usize,
    pub cout: usize,
    pub temporal_kernel: usize,
    pub spatial_stride: usize,
    pub bottleneck: bool,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: &BlockSpec, rng: &mut R) -> Self {
        let kt = spec.temporal_kernel;
        let s = spec.spatial_stride;
        let branch = if spec.bottleneck {
            vec![
                ConvBn::new(&format!("{name}.a"), spec.cin, spec.inner, [kt, 1, 1], [1, 1, 1], 1.0, rng),
                ConvBn::new(&format!("{name}.b"), spec.inner, spec.inner, [1, 3, 3], [1, s, s], 1.0, rng),
                ConvBn::new(&format!("{name}.c"), spec.inner, spec.cout, [1, 1, 1], [1, 1, 1], 0.0, rng),
            ]
        } else {
            vec![
                ConvBn::new(&format!("{name}.a"), spec.cin, spec.cout, [kt, 3, 3], [1, s, s], 1.0, rng),
                ConvBn::new(&format!("{name}.b"), spec.cout, spec.cout, [1, 3, 3], [1, 1, 1], 0.0, rng),
            ]
        };
        let shortcut = (spec.cin != spec.cout || s != 1).then(|| {
            ConvBn::new(&format!("{name}.shortcut"), spec.cin, spec.cout, [1, 1, 1], [1, s, s], 1.0, rng)
        });
        Self {
            branch,
            shortcut,
            relu_cache: Vec::new(),
            out_cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, cache: bool) -> Result<Tensor> {
        self.relu_cache.clear();
        let last = self.branch.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.branch.iter_mut().enumerate() {
            h = layer.forward(&h, mode, cache)?;
            if i < last {
                relu_inplace(&mut h);
                if cache {
                    self.relu_cache.push(h.clone());
                }
            }
        }
        match &mut self.shortcut {
            Some(sc) => h.add_assign(&sc.forward(x, mode, cache)?),
            None => h.add_assign(x),
        }
        relu_inplace(&mut h);
        self.out_cache = cache.then(|| h.clone());
        Ok(h)
    }

    pub fn backward(&mut self, dout: &Tensor) -> Tensor {
        let out = self.out_cache.take().expect("residual block backward without cached forward");
        let mut d = dout.clone();
        relu_backward_inplace(&mut d, &out);
        let mut dx = match &mut self.shortcut {
            Some(sc) => sc.backward(&d),
            None => d.clone(),
        };
        let mut db = d;
        for i in (0..self.branch.len()).rev() {
            db = self.branch[i].backward(&db);
            if i > 0 {
                relu_backward_inplace(&mut db, &self.relu_cache[i - 1]);
            }
        }
        dx.add_assign(&db);
        self.relu_cache.clear();
        dx
    }

    pub fn shape_walk(&self, input: [usize; 5], out: &mut Vec<(String, [usize; 5], u64)>) -> Result<[usize; 5]> {
        let mut s = input;
        for layer in &self.branch {
            let (m, o) = layer.macs(s)?;
            out.push((layer.conv.weight.name.trim_end_matches(".conv.weight").to_string(), o, m));
            s = o;
        }
        if let Some(sc) = &self.shortcut {
            let (m, o) = sc.macs(input)?;
            out.push((sc.conv.weight.name.trim_end_matches(".conv.weight").to_string(), o, m));
        }
        Ok(s)
    }
}

impl Module for ResBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in &mut self.branch {
            l.visit_params(f);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer)) {
        for l in &mut self.branch {
            l.visit_buffers(f);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.visit_buffers(f);
        }
    }
}

/// A residual stage, optionally followed by a non-local block.
#[derive(Clone, Debug)]
pub(crate) struct Stage {
    pub name: String,
    pub blocks: Vec<ResBlock>,
    pub nonlocal: Option<NonLocal>,
}

impl Stage {
    pub fn forward(&mut self, x: &Tensor, mode: Mode, cache: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, mode, cache)?;
        }
        if let Some(nl) = &mut self.nonlocal {
            h = nl.forward(&h, cache)?;
        }
        Ok(h)
    }

    /// Units are the blocks followed by the optional non-local block.
    pub fn num_units(&self) -> usize {
        self.blocks.len() + self.nonlocal.is_some() as usize
    }

    /// Forward without caching, also returning the input of every unit.
    pub fn forward_recording(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Tensor>)> {
        let mut inputs = Vec::with_capacity(self.num_units());
        let mut h = x.clone();
        for u in 0..self.num_units() {
            inputs.push(h.clone());
            h = self.forward_unit(u, &h, mode)?;
        }
        Ok((h, inputs))
    }

    /// Forward from unit `from`, given that unit's input.
    pub fn forward_from_unit(&mut self, from: usize, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = self.forward_unit(from, x, mode)?;
        for u in from + 1..self.num_units() {
            h = self.forward_unit(u, &h, mode)?;
        }
        Ok(h)
    }

    fn forward_unit(&mut self, u: usize, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self.blocks.get_mut(u) {
            Some(b) => b.forward(x, mode, false),
            None => self.nonlocal.as_mut().expect("unit index").forward(x, false),
        }
    }

    pub fn visit_unit_params(&mut self, u: usize, f: &mut dyn FnMut(&mut Param)) {
        match self.blocks.get_mut(u) {
            Some(b) => b.visit_params(f),
            None => self.nonlocal.as_mut().expect("unit index").visit_params(f),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut d = match &mut self.nonlocal {
            Some(nl) => nl.backward(dy),
            None => dy.clone(),
        };
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        d
    }

    pub fn shape_walk(&self, input: [usize; 5], out: &mut Vec<(String, [usize; 5], u64)>) -> Result<[usize; 5]> {
        let mut s = input;
        for b in &self.blocks {
            s = b.shape_walk(s, out)?;
        }
        if let Some(nl) = &self.nonlocal {
            out.push((format!("{}.nonlocal", self.name), s, nl.macs(s)?));
        }
        Ok(s)
    }
}

impl Module for Stage {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        if let Some(nl) = &mut self.nonlocal {
            nl.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer)) {
        for b in &mut self.blocks {
            b.visit_buffers(f);
        }
    }
}

/// Stem: conv, batch norm, ReLU, spatial max pool.
#[derive(Clone, Debug)]
pub(crate) struct Stem {
    pub conv_bn: ConvBn,
    pool: MaxPool3d,
    relu_cache: Option<Tensor>,
}

impl Stem {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, temporal_kernel: usize, rng: &mut R) -> Self {
        Self {
            conv_bn: ConvBn::new(name, cin, cout, [temporal_kernel, 7, 7], [1, 2, 2], 1.0, rng),
            pool: MaxPool3d::new([1, 3, 3], [1, 2, 2], [0, 1, 1]),
            relu_cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, cache: bool) -> Result<Tensor> {
        let mut h = self.conv_bn.forward(x, mode, cache)?;
        relu_inplace(&mut h);
        let y = self.pool.forward(&h, cache)?;
        self.relu_cache = cache.then_some(h);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let h = self.relu_cache.take().expect("stem backward without cached forward");
        let mut d = self.pool.backward(dy);
        relu_backward_inplace(&mut d, &h);
        self.conv_bn.backward(&d)
    }

    pub fn shape_walk(&self, name: &str, input: [usize; 5], out: &mut Vec<(String, [usize; 5], u64)>) -> Result<[usize; 5]> {
        let (m, o) = self.conv_bn.macs(input)?;
        let pooled = self.pool.output_shape(o)?;
        out.push((name.to_string(), pooled, m));
        Ok(pooled)
    }
}

impl Module for Stem {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv_bn.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer)) {
        self.conv_bn.visit_buffers(f);
    }
}
