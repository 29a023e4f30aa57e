use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{BlockSpec, ResBlock, Stage, Stem};
use super::config::{
    PathwayConfig, Pathway, FAST_TEMPORAL_KERNELS, FUSION_RATIO, SLOW_TEMPORAL_KERNELS, STAGE_NAMES,
};
use super::fusion::LateralFusion;
use crate::error::{Error, Result};
use crate::frames::FramePair;
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, Buffer, Dropout, Linear, Mode, Module, NonLocal, Param,
};
use crate::tensor::Tensor;

/// Number of forward steps: stems, res2..res5, head.
pub(crate) const STEPS: usize = 6;

/// A named stage output of one pathway, e.g. `fast.res5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerId {
    pub pathway: Pathway,
    /// 0 = stem, 1..=4 = res2..res5.
    pub stage: usize,
}

impl LayerId {
    pub fn last(pathway: Pathway) -> Self {
        Self { pathway, stage: 4 }
    }

    pub fn name(&self) -> String {
        format!("{}.{}", self.pathway, STAGE_NAMES[self.stage])
    }
}

impl std::str::FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (p, st) = s
            .split_once('.')
            .ok_or_else(|| Error::NotFound(format!("layer {s:?} (expected <slow|fast>.<stem|res2..res5>)")))?;
        let pathway = match p {
            "slow" => Pathway::Slow,
            "fast" => Pathway::Fast,
            _ => return Err(Error::NotFound(format!("layer {s:?}: unknown pathway {p:?}"))),
        };
        let stage = STAGE_NAMES
            .iter()
            .position(|n| *n == st)
            .ok_or_else(|| Error::NotFound(format!("layer {s:?}: unknown stage {st:?}")))?;
        Ok(Self { pathway, stage })
    }
}

/// Per-channel input normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Class scores for each sample of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    rows: Vec<Vec<f64>>,
}

impl Logits {
    pub fn from_tensor(t: &Tensor) -> Self {
        let k = t.sample_len();
        Self {
            rows: t.data().chunks(k).map(|r| r.to_vec()).collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn softmax(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| softmax(r)).collect()
    }

    /// Highest-scoring class per sample; ties resolve to the lower index.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Forward activations at a step boundary.
#[derive(Clone, Debug)]
pub(crate) struct StepState {
    pub slow: Tensor,
    pub fast: Option<Tensor>,
}

/// Part of a forward step whose parameters can be perturbed in isolation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unit {
    SlowStem,
    FastStem,
    /// Block (or trailing non-local block) of the slow stage.
    Slow(usize),
    Fast(usize),
    Lateral,
    Head,
}

/// Intermediates of one forward step.
pub(crate) struct StepTrace {
    slow_inputs: Vec<Tensor>,
    fast_inputs: Vec<Tensor>,
    /// Slow output before the lateral concatenation.
    slow_out: Tensor,
    fast_out: Option<Tensor>,
    lateral: Option<Tensor>,
}

/// The dual-pathway network plus its mode and input normalization.
#[derive(Clone, Debug)]
pub struct SlowFast {
    cfg: PathwayConfig,
    mode: Mode,
    norm: InputNorm,
    slow_stem: Stem,
    fast_stem: Stem,
    slow_stages: Vec<Stage>,
    fast_stages: Vec<Stage>,
    laterals: Vec<LateralFusion>,
    dropout: Dropout,
    fc: Linear,
    dropout_rng: ChaCha8Rng,
    fast_lesion: bool,
    // backward bookkeeping
    slow_split: [usize; 4],
    head_shapes: Option<([usize; 5], Option<[usize; 5]>)>,
    capture: Option<LayerId>,
    captured: Option<(Tensor, Option<Tensor>)>,
}

/// Build a network from `cfg`, initialized deterministically from `init_seed`.
pub fn build_slowfast(cfg: &PathwayConfig, init_seed: u64) -> Result<SlowFast> {
    cfg.validate()?;
    SlowFast::new(cfg.clone(), init_seed)
}

impl SlowFast {
    fn new(cfg: PathwayConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sw = cfg.slow_widths();
        let fw = cfg.fast_widths();
        let si = cfg.slow_inner_widths();
        let fi = cfg.fast_inner_widths();
        let bottleneck = cfg.backbone_depth.bottleneck();
        let blocks = cfg.backbone_depth.stage_blocks();

        let slow_stem = Stem::new("slow.stem", cfg.in_channels, sw[0], 1, &mut rng);
        let fast_stem = Stem::new("fast.stem", cfg.in_channels, fw[0], 5, &mut rng);
        let mut laterals = Vec::with_capacity(4);
        let mut slow_stages = Vec::with_capacity(4);
        let mut fast_stages = Vec::with_capacity(4);
        let lateral =
            |k: usize, rng: &mut ChaCha8Rng| LateralFusion::new(&format!("lateral{k}"), fw[k], FUSION_RATIO, cfg.alpha, rng);
        laterals.push(lateral(0, &mut rng));
        for k in 0..4 {
            let stage_name = STAGE_NAMES[k + 1];
            let stride = if k == 0 { 1 } else { 2 };
            let build = |pathway: Pathway, cin: usize, inner: usize, cout: usize, kt: usize, rng: &mut ChaCha8Rng| {
                let name = format!("{pathway}.{stage_name}");
                let stage_blocks = (0..blocks[k])
                    .map(|b| {
                        let spec = BlockSpec {
                            cin: if b == 0 { cin } else { cout },
                            inner,
                            cout,
                            temporal_kernel: kt,
                            spatial_stride: if b == 0 { stride } else { 1 },
                            bottleneck,
                        };
                        ResBlock::new(&format!("{name}.block{b}"), &spec, rng)
                    })
                    .collect();
                let nonlocal = cfg
                    .has_nonlocal(pathway, stage_name)
                    .then(|| NonLocal::new(&format!("{name}.nonlocal"), cout, rng));
                Stage {
                    name,
                    blocks: stage_blocks,
                    nonlocal,
                }
            };
            let slow_in = sw[k] + FUSION_RATIO * fw[k];
            slow_stages.push(build(Pathway::Slow, slow_in, si[k], sw[k + 1], SLOW_TEMPORAL_KERNELS[k], &mut rng));
            fast_stages.push(build(Pathway::Fast, fw[k], fi[k], fw[k + 1], FAST_TEMPORAL_KERNELS[k], &mut rng));
            if k < 3 {
                laterals.push(lateral(k + 1, &mut rng));
            }
        }
        let fc = Linear::new("head.fc", sw[4] + fw[4], cfg.num_classes, &mut rng);
        let dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            norm: InputNorm {
                mean: vec![0.45; cfg.in_channels],
                std: vec![0.225; cfg.in_channels],
            },
            dropout: Dropout::new(cfg.dropout_rate),
            cfg,
            mode: Mode::Train,
            slow_stem,
            fast_stem,
            slow_stages,
            fast_stages,
            laterals,
            fc,
            dropout_rng,
            fast_lesion: false,
            slow_split: [0; 4],
            head_shapes: None,
            capture: None,
            captured: None,
        })
    }

    pub fn config(&self) -> &PathwayConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        if norm.mean.len() != self.cfg.in_channels || norm.std.len() != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "input normalization needs {} channels",
                self.cfg.in_channels
            )));
        }
        if norm.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid("input normalization std must be positive".into()));
        }
        self.norm = norm;
        Ok(())
    }

    /// With the lesion on, the fast pathway is skipped and every fast-derived
    /// feature (lateral inputs to the slow pathway and the fast half of the
    /// head) is replaced by zeros.
    pub fn set_fast_lesion(&mut self, on: bool) {
        self.fast_lesion = on;
    }

    pub fn fast_lesion(&self) -> bool {
        self.fast_lesion
    }

    pub(crate) fn dropout_rng(&self) -> &ChaCha8Rng {
        &self.dropout_rng
    }

    pub(crate) fn set_dropout_rng(&mut self, rng: ChaCha8Rng) {
        self.dropout_rng = rng;
    }

    /// Record the activation (forward) and gradient (backward) of one stage output.
    pub fn set_capture(&mut self, layer: Option<LayerId>) {
        self.capture = layer;
        self.captured = None;
    }

    /// `(activation, gradient)` recorded for the capture layer.
    pub fn take_captured(&mut self) -> Option<(Tensor, Option<Tensor>)> {
        self.captured.take()
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for step in 0..STEPS {
            self.visit_step_params(step, f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Buffer)) {
        self.slow_stem.visit_buffers(f);
        self.fast_stem.visit_buffers(f);
        for s in &mut self.slow_stages {
            s.visit_buffers(f);
        }
        for s in &mut self.fast_stages {
            s.visit_buffers(f);
        }
    }

    /// Parameters touched by forward step `step`, in a fixed order.
    pub(crate) fn visit_step_params(&mut self, step: usize, f: &mut dyn FnMut(&mut Param)) {
        match step {
            0 => {
                self.slow_stem.visit_params(f);
                self.fast_stem.visit_params(f);
                self.laterals[0].visit_params(f);
            }
            1..=4 => {
                self.slow_stages[step - 1].visit_params(f);
                self.fast_stages[step - 1].visit_params(f);
                if step < 4 {
                    self.laterals[step].visit_params(f);
                }
            }
            5 => self.fc.visit_params(f),
            _ => {}
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Parameter and buffer names with their shapes, in checkpoint order.
    pub fn shape_inventory(&mut self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.shape.clone())));
        self.visit_buffers(&mut |b| out.push((b.name.clone(), b.shape.clone())));
        out
    }

    /// Normalized `(slow, fast)` input tensors for a batch.
    pub fn input_tensors(&self, batch: &[FramePair]) -> Result<(Tensor, Tensor)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Invalid("empty batch".into()))?;
        let (h, w) = (first.fast.height(), first.fast.width());
        let c = self.cfg.in_channels;
        let ts = self.cfg.slow_frames;
        let tf = self.cfg.fast_frames();
        for (i, p) in batch.iter().enumerate() {
            if p.slow.frames() != ts || p.fast.frames() != tf {
                return Err(Error::Shape(format!(
                    "sample {i}: {} slow / {} fast frames, model expects {ts} / {tf}",
                    p.slow.frames(),
                    p.fast.frames()
                )));
            }
            if p.fast.channels() != c || p.slow.channels() != c {
                return Err(Error::Shape(format!(
                    "sample {i}: {} channels, model expects {c}",
                    p.fast.channels()
                )));
            }
            if (p.fast.height(), p.fast.width(), p.slow.height(), p.slow.width()) != (h, w, h, w) {
                return Err(Error::Shape(format!("sample {i}: spatial size differs from sample 0 ({h}x{w})")));
            }
        }
        let to_tensor = |t: usize, pick: &dyn Fn(&FramePair) -> &crate::frames::FrameVolume| {
            let mut x = Tensor::zeros([batch.len(), c, t, h, w]);
            let plane = h * w;
            for (n, pair) in batch.iter().enumerate() {
                let v = pick(pair).data();
                let dst = x.sample_mut(n);
                for ti in 0..t {
                    for p in 0..plane {
                        for ch in 0..c {
                            let val = v[(ti * plane + p) * c + ch] as f64;
                            dst[(ch * t + ti) * plane + p] = (val - self.norm.mean[ch]) / self.norm.std[ch];
                        }
                    }
                }
            }
            x
        };
        Ok((to_tensor(ts, &|p| &p.slow), to_tensor(tf, &|p| &p.fast)))
    }

    /// Logits for a batch, without caching for backward.
    pub fn forward(&mut self, batch: &[FramePair]) -> Result<Logits> {
        let (xs, xf) = self.input_tensors(batch)?;
        let y = self.forward_tensors(&xs, &xf, false)?;
        Ok(Logits::from_tensor(&y))
    }

    /// Forward on prepared tensors. With `cache` the pass can be followed by
    /// [`SlowFast::backward`].
    pub fn forward_tensors(&mut self, xs: &Tensor, xf: &Tensor, cache: bool) -> Result<Tensor> {
        if xf.frames() != self.cfg.alpha * xs.frames() {
            return Err(Error::Shape(format!(
                "fast input has {} frames, slow {}; alpha = {}",
                xf.frames(),
                xs.frames(),
                self.cfg.alpha
            )));
        }
        let mut state = StepState {
            slow: xs.clone(),
            fast: (!self.fast_lesion).then(|| xf.clone()),
        };
        for step in 0..STEPS - 1 {
            state = self.step(step, &state, cache)?;
        }
        self.head(&state, cache)
    }

    /// Run forward from step `from`, given the state entering that step.
    /// Returns the logits; when `record` is set, the entering state of every
    /// later step is appended to it.
    pub(crate) fn forward_from(
        &mut self,
        from: usize,
        entering: &StepState,
        cache: bool,
        mut record: Option<&mut Vec<StepState>>,
    ) -> Result<Tensor> {
        let mut state = entering.clone();
        for step in from..STEPS - 1 {
            state = self.step(step, &state, cache)?;
            if let Some(r) = record.as_mut() {
                r.push(state.clone());
            }
        }
        self.head(&state, cache)
    }

    pub(crate) fn initial_state(&self, xs: &Tensor, xf: &Tensor) -> StepState {
        StepState {
            slow: xs.clone(),
            fast: (!self.fast_lesion).then(|| xf.clone()),
        }
    }

    fn check(t: &Tensor, name: impl FnOnce() -> String) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { layer: name() })
        }
    }

    fn step(&mut self, step: usize, state: &StepState, cache: bool) -> Result<StepState> {
        let mode = self.mode;
        let (mut slow, fast) = if step == 0 {
            let s = self.slow_stem.forward(&state.slow, mode, cache)?;
            let f = match &state.fast {
                Some(f) => Some(self.fast_stem.forward(f, mode, cache)?),
                None => None,
            };
            (s, f)
        } else {
            let s = self.slow_stages[step - 1].forward(&state.slow, mode, cache)?;
            let f = match &state.fast {
                Some(f) => Some(self.fast_stages[step - 1].forward(f, mode, cache)?),
                None => None,
            };
            (s, f)
        };
        Self::check(&slow, || format!("slow.{}", STAGE_NAMES[step]))?;
        if let Some(f) = &fast {
            Self::check(f, || format!("fast.{}", STAGE_NAMES[step]))?;
            // Temporal law: the fast pathway keeps alpha times the slow frames.
            if f.frames() != self.cfg.alpha * slow.frames() {
                return Err(Error::Shape(format!(
                    "{}: fast has {} frames, slow {}",
                    STAGE_NAMES[step],
                    f.frames(),
                    slow.frames()
                )));
            }
        }
        if let Some(cap) = self.capture {
            if cap.stage == step && cache {
                let act = match cap.pathway {
                    Pathway::Slow => Some(slow.clone()),
                    Pathway::Fast => fast.clone(),
                };
                if let Some(a) = act {
                    self.captured = Some((a, None));
                }
            }
        }
        if step < 4 {
            self.slow_split[step] = slow.channels();
            let lat = self.lateral_out(step, fast.as_ref(), &slow, cache)?;
            slow = Tensor::concat_channels(&slow, &lat)?;
        }
        Ok(StepState { slow, fast })
    }

    /// Lateral projection of step `step`; zeros when the fast pathway is lesioned.
    fn lateral_out(&mut self, step: usize, fast: Option<&Tensor>, slow: &Tensor, cache: bool) -> Result<Tensor> {
        match fast {
            Some(f) => self.laterals[step].project(f, slow.shape(), cache),
            None => {
                let [n, _, t, h, w] = slow.shape();
                Ok(Tensor::zeros([n, FUSION_RATIO * self.cfg.fast_widths()[step], t, h, w]))
            }
        }
    }

    /// Perturbable parts of forward step `step`.
    pub(crate) fn units(&self, step: usize) -> Vec<Unit> {
        match step {
            0 => vec![Unit::SlowStem, Unit::FastStem, Unit::Lateral],
            1..=4 => {
                let mut u: Vec<Unit> = (0..self.slow_stages[step - 1].num_units()).map(Unit::Slow).collect();
                u.extend((0..self.fast_stages[step - 1].num_units()).map(Unit::Fast));
                if step < 4 {
                    u.push(Unit::Lateral);
                }
                u
            }
            _ => vec![Unit::Head],
        }
    }

    pub(crate) fn visit_unit_params(&mut self, step: usize, unit: Unit, f: &mut dyn FnMut(&mut Param)) {
        match unit {
            Unit::SlowStem => self.slow_stem.visit_params(f),
            Unit::FastStem => self.fast_stem.visit_params(f),
            Unit::Slow(u) => self.slow_stages[step - 1].visit_unit_params(u, f),
            Unit::Fast(u) => self.fast_stages[step - 1].visit_unit_params(u, f),
            Unit::Lateral => self.laterals[step].visit_params(f),
            Unit::Head => self.fc.visit_params(f),
        }
    }

    /// Run step `step` without caching, keeping what [`SlowFast::resume_unit`] needs.
    pub(crate) fn trace_step(&mut self, step: usize, state: &StepState) -> Result<StepTrace> {
        let mode = self.mode;
        let ((slow_out, slow_inputs), fast) = if step == 0 {
            let s = (self.slow_stem.forward(&state.slow, mode, false)?, vec![state.slow.clone()]);
            let f = match &state.fast {
                Some(f) => Some((self.fast_stem.forward(f, mode, false)?, vec![f.clone()])),
                None => None,
            };
            (s, f)
        } else if step < STEPS - 1 {
            let s = self.slow_stages[step - 1].forward_recording(&state.slow, mode)?;
            let f = match &state.fast {
                Some(f) => Some(self.fast_stages[step - 1].forward_recording(f, mode)?),
                None => None,
            };
            (s, f)
        } else {
            ((state.slow.clone(), Vec::new()), state.fast.clone().map(|f| (f, Vec::new())))
        };
        let (fast_out, fast_inputs) = match fast {
            Some((o, i)) => (Some(o), i),
            None => (None, Vec::new()),
        };
        let lateral = if step < 4 {
            Some(self.lateral_out(step, fast_out.as_ref(), &slow_out, false)?)
        } else {
            None
        };
        Ok(StepTrace {
            slow_inputs,
            fast_inputs,
            slow_out,
            fast_out,
            lateral,
        })
    }

    /// Logits after recomputing only `unit` of step `step` (and everything
    /// downstream), reusing the traced values for the rest of the step.
    pub(crate) fn resume_unit(&mut self, step: usize, unit: Unit, entering: &StepState, trace: &StepTrace) -> Result<Tensor> {
        let mode = self.mode;
        let (slow, fast, lat) = match unit {
            Unit::Head => return self.forward_from(STEPS - 1, entering, false, None),
            Unit::SlowStem => (self.slow_stem.forward(&trace.slow_inputs[0], mode, false)?, trace.fast_out.clone(), trace.lateral.clone()),
            Unit::Slow(u) => (
                self.slow_stages[step - 1].forward_from_unit(u, &trace.slow_inputs[u], mode)?,
                trace.fast_out.clone(),
                trace.lateral.clone(),
            ),
            Unit::FastStem | Unit::Fast(_) if trace.fast_out.is_none() => {
                (trace.slow_out.clone(), None, trace.lateral.clone())
            }
            Unit::FastStem => (trace.slow_out.clone(), Some(self.fast_stem.forward(&trace.fast_inputs[0], mode, false)?), None),
            Unit::Fast(u) => (
                trace.slow_out.clone(),
                Some(self.fast_stages[step - 1].forward_from_unit(u, &trace.fast_inputs[u], mode)?),
                None,
            ),
            Unit::Lateral => (trace.slow_out.clone(), trace.fast_out.clone(), None),
        };
        let slow = if step < 4 {
            let lat = match lat {
                Some(l) => l,
                None => self.lateral_out(step, fast.as_ref(), &slow, false)?,
            };
            Tensor::concat_channels(&slow, &lat)?
        } else {
            slow
        };
        self.forward_from(step + 1, &StepState { slow, fast }, false, None)
    }

    fn head(&mut self, state: &StepState, cache: bool) -> Result<Tensor> {
        let ps = global_avg_pool(&state.slow);
        let n = ps.batch();
        let cf = self.cfg.fast_widths()[4];
        let pf = match &state.fast {
            Some(f) => global_avg_pool(f),
            None => Tensor::zeros([n, cf, 1, 1, 1]),
        };
        let feat = Tensor::concat_channels(&ps, &pf)?;
        let d = self.dropout.forward(&feat, self.mode, &mut self.dropout_rng);
        let y = self.fc.forward(&d, cache)?;
        Self::check(&y, || "head.fc".into())?;
        self.head_shapes = cache.then(|| (state.slow.shape(), state.fast.as_ref().map(|f| f.shape())));
        Ok(y)
    }

    /// Backpropagate `dlogits` through the cached forward pass, accumulating
    /// parameter gradients.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let (slow_shape, fast_shape) = self
            .head_shapes
            .take()
            .ok_or_else(|| Error::Invalid("backward called without a cached forward pass".into()))?;
        let dfeat = self.dropout.backward(&self.fc.backward(dlogits));
        let (dps, dpf) = dfeat.split_channels(slow_shape[1]);
        let mut ds = global_avg_pool_backward(&dps, slow_shape);
        let mut df = fast_shape.map(|s| global_avg_pool_backward(&dpf, s));
        for step in (0..STEPS - 1).rev() {
            if step < 4 {
                let (main, dlat) = ds.split_channels(self.slow_split[step]);
                ds = main;
                if let Some(df) = df.as_mut() {
                    df.add_assign(&self.laterals[step].backward(&dlat));
                }
            }
            if let (Some(cap), Some((_, grad))) = (self.capture, self.captured.as_mut()) {
                if cap.stage == step {
                    *grad = match cap.pathway {
                        Pathway::Slow => Some(ds.clone()),
                        Pathway::Fast => df.clone(),
                    };
                }
            }
            if step == 0 {
                self.slow_stem.backward(&ds);
                if let Some(df) = &df {
                    self.fast_stem.backward(df);
                }
            } else {
                ds = self.slow_stages[step - 1].backward(&ds);
                df = df.map(|d| self.fast_stages[step - 1].backward(&d));
            }
        }
        Ok(())
    }

    /// Per-layer output shapes and multiply-accumulate counts for a
    /// `height × width` input, without running the network.
    pub fn layer_table(&self, height: usize, width: usize) -> Result<Vec<LayerRow>> {
        let c = self.cfg.in_channels;
        let mut rows = Vec::new();
        let mut s = [1, c, self.cfg.slow_frames, height, width];
        let mut f = [1, c, self.cfg.fast_frames(), height, width];
        let push = |pathway: Option<Pathway>, raw: Vec<(String, [usize; 5], u64)>, rows: &mut Vec<LayerRow>| {
            rows.extend(raw.into_iter().map(|(name, shape, macs)| LayerRow {
                name,
                pathway: pathway.map_or("fusion".into(), |p| p.to_string()),
                output_shape: shape[1..].to_vec(),
                macs,
            }));
        };
        for step in 0..STEPS - 1 {
            let mut raw_s = Vec::new();
            let mut raw_f = Vec::new();
            if step == 0 {
                s = self.slow_stem.shape_walk("slow.stem", s, &mut raw_s)?;
                f = self.fast_stem.shape_walk("fast.stem", f, &mut raw_f)?;
            } else {
                s = self.slow_stages[step - 1].shape_walk(s, &mut raw_s)?;
                f = self.fast_stages[step - 1].shape_walk(f, &mut raw_f)?;
            }
            push(Some(Pathway::Slow), raw_s, &mut rows);
            push(Some(Pathway::Fast), raw_f, &mut rows);
            if step < 4 {
                let lat = &self.laterals[step];
                let o = lat.output_shape(f)?;
                push(None, vec![(format!("lateral{step}"), o, lat.macs(f)?)], &mut rows);
                s[1] += o[1];
            }
        }
        let fc_in = self.fc.inputs();
        push(
            None,
            vec![("head.fc".into(), [1, self.cfg.num_classes, 1, 1, 1], (fc_in * self.cfg.num_classes) as u64)],
            &mut rows,
        );
        Ok(rows)
    }

    /// Stage-output shapes `(slow, fast)` for a `height × width` input.
    pub fn stage_shapes(&self, height: usize, width: usize) -> Result<Vec<([usize; 5], [usize; 5])>> {
        let c = self.cfg.in_channels;
        let mut s = [1, c, self.cfg.slow_frames, height, width];
        let mut f = [1, c, self.cfg.fast_frames(), height, width];
        let mut out = Vec::new();
        let mut sink = Vec::new();
        for step in 0..STEPS - 1 {
            if step == 0 {
                s = self.slow_stem.shape_walk("slow.stem", s, &mut sink)?;
                f = self.fast_stem.shape_walk("fast.stem", f, &mut sink)?;
            } else {
                s = self.slow_stages[step - 1].shape_walk(s, &mut sink)?;
                f = self.fast_stages[step - 1].shape_walk(f, &mut sink)?;
            }
            out.push((s, f));
            if step < 4 {
                s[1] += self.laterals[step].out_channels();
            }
        }
        Ok(out)
    }
}

/// One row of the model summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    /// `slow`, `fast` or `fusion` (laterals and head).
    pub pathway: String,
    /// `(C, T, H, W)`.
    pub output_shape: Vec<usize>,
    pub macs: u64,
}
