use serde::{Deserialize, Serialize};

use super::saliency::resample;
use crate::clipstore::Label;
use crate::error::{Error, Result};
use crate::frames::FramePair;
use crate::nn::Mode;
use crate::slowfast::{LayerId, Pathway, SlowFast};
use crate::tensor::Tensor;

/// Grad-CAM maps of one pathway, one per input frame of that pathway,
/// normalized so the stack maximum is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStack {
    pub pathway: Pathway,
    pub source_layer: String,
    pub target_class: Label,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// `frames × height × width`, values in `[0, 1]`.
    pub data: Vec<f64>,
    /// Set when the raw map was zero everywhere (all values are then zero).
    pub all_zero: bool,
}

impl HeatmapStack {
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    /// `(frame, y, x)` of the largest value; the first one in scan order on ties.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        let n = self.height * self.width;
        let (t, r) = (best.0 / n, best.0 % n);
        (t, r / self.width, r % self.width)
    }

    /// Per-frame map averaged over time.
    pub fn mean_map(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n];
        for t in 0..self.frames {
            for (o, v) in out.iter_mut().zip(self.frame(t)) {
                *o += v / self.frames as f64;
            }
        }
        out
    }
}

/// Raw class-activation volume `(T, H, W)` from a stage activation and the
/// gradient of the target score with respect to it (single sample).
pub(crate) fn cam_volume(act: &Tensor, grad: &Tensor) -> Vec<f64> {
    let [_, c, t, h, w] = act.shape();
    let p = t * h * w;
    let (a, g) = (act.sample(0), grad.sample(0));
    let mut cam = vec![0.0; p];
    for k in 0..c {
        let gk = &g[k * p..(k + 1) * p];
        let weight = gk.iter().sum::<f64>() / p as f64;
        for (o, v) in cam.iter_mut().zip(&a[k * p..(k + 1) * p]) {
            *o += weight * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

/// Gradient-weighted class activation map of `layer` for `target`. The
/// model must be in eval mode. Parameter gradients are cleared afterwards.
pub fn grad_cam(model: &mut SlowFast, input: &FramePair, target: Label, layer: LayerId) -> Result<HeatmapStack> {
    if model.mode() != Mode::Eval {
        return Err(Error::Invalid("grad_cam needs the model in eval mode".into()));
    }
    if layer.pathway == Pathway::Fast && model.fast_lesion() {
        return Err(Error::NotFound(format!("layer {} (fast pathway is lesioned)", layer.name())));
    }
    let (xs, xf) = model.input_tensors(std::slice::from_ref(input))?;
    model.set_capture(Some(layer));
    let result = (|| -> Result<(Tensor, Tensor)> {
        let logits = model.forward_tensors(&xs, &xf, true)?;
        let mut d = Tensor::zeros(logits.shape());
        d.data_mut()[target.class_index()] = 1.0;
        model.zero_grad();
        model.backward(&d)?;
        match model.take_captured() {
            Some((a, Some(g))) => Ok((a, g)),
            _ => Err(Error::NotFound(format!("layer {}", layer.name()))),
        }
    })();
    model.set_capture(None);
    model.zero_grad();
    let (act, grad) = result?;

    let [_, _, tf, hf, wf] = act.shape();
    let cam = cam_volume(&act, &grad);
    let frames_in = match layer.pathway {
        Pathway::Slow => input.slow.frames(),
        Pathway::Fast => input.fast.frames(),
    };
    let (h, w) = (input.fast.height(), input.fast.width());
    let up: Vec<Vec<f64>> = (0..tf)
        .map(|t| resample(&cam[t * hf * wf..(t + 1) * hf * wf], hf, wf, h, w))
        .collect();
    let mut data = Vec::with_capacity(frames_in * h * w);
    for i in 0..frames_in {
        data.extend_from_slice(&up[(i * tf / frames_in).min(tf - 1)]);
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    let all_zero = max <= 0.0;
    if !all_zero {
        data.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    }
    Ok(HeatmapStack {
        pathway: layer.pathway,
        source_layer: layer.name(),
        target_class: target,
        frames: frames_in,
        height: h,
        width: w,
        data,
        all_zero,
    })
}
