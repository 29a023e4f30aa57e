//! Central finite-difference check of the analytic gradients.
//!
//! Perturbing a parameter only changes the activations downstream of the
//! block that owns it, so each perturbed loss is evaluated by resuming the
//! forward pass from that block's recorded input while reusing the recorded
//! outputs of the other pathway. The dropout
//! generator is rewound before every evaluation so that all passes draw the
//! same mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Depth, PathwayConfig};
use super::model::{SlowFast, StepState, StepTrace, Unit, STEPS};
use crate::error::Result;
use crate::nn::{softmax_cross_entropy, standard_normal, Mode};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many entries per parameter array (all when `None`).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entry with the largest error: `(index, analytic, numeric)`.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub entries_checked: usize,
    pub params: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamError> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Depth-18, width-8 network used for the gradient check.
pub fn tiny_config() -> PathwayConfig {
    PathwayConfig {
        backbone_depth: Depth::R18,
        base_width: 8,
        ..PathwayConfig::default()
    }
}

/// Random normalized `(slow, fast)` inputs with `size × size` frames.
pub fn random_inputs(cfg: &PathwayConfig, batch: usize, size: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xf = Tensor::from_fn([batch, cfg.in_channels, cfg.fast_frames(), size, size], |_| {
        standard_normal(&mut rng)
    });
    let ts = cfg.slow_frames;
    let xs = Tensor::from_fn([batch, cfg.in_channels, ts, size, size], |[n, c, t, h, w]| {
        xf.get([n, c, t * cfg.alpha, h, w])
    });
    (xs, xf)
}

/// Replace zero-initialized scales (residual-branch norms, non-local output)
/// with random values so that every parameter receives a non-trivial gradient.
pub fn randomize_zero_inits(model: &mut SlowFast, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_params(&mut |p| {
        if p.value.iter().all(|&v| v == 0.0) && !p.name.ends_with(".beta") && !p.name.ends_with(".bias") {
            for v in &mut p.value {
                *v = if p.name.ends_with(".gamma") {
                    rng.random_range(0.5..1.5)
                } else {
                    0.1 * standard_normal(&mut rng)
                };
            }
        }
    });
}

/// Compare analytic gradients of the mean cross-entropy with central
/// differences, in train mode. Buffers and the dropout generator are
/// restored afterwards; parameter gradients hold the analytic values.
pub fn gradcheck(
    model: &mut SlowFast,
    xs: &Tensor,
    xf: &Tensor,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    model.set_mode(Mode::Train);
    let mut buffers = Vec::new();
    model.visit_buffers(&mut |b| buffers.push(b.value.clone()));
    let rng0 = model.dropout_rng().clone();

    model.zero_grad();
    let mut entering = vec![model.initial_state(xs, xf)];
    let logits = model.forward_from(0, &entering[0].clone(), true, Some(&mut entering))?;
    entering.truncate(STEPS);
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
    model.backward(&dlogits)?;

    let mut sampler = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::new();
    let mut total = 0;
    for step in 0..STEPS {
        let trace = model.trace_step(step, &entering[step])?;
        for unit in model.units(step) {
            let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
            model.visit_unit_params(step, unit, &mut |p| arrays.push((p.name.clone(), p.grad.clone())));
            for (pi, (name, grad)) in arrays.iter().enumerate() {
                let indices: Vec<usize> = match opts.max_entries {
                    Some(m) if m < grad.len() => (0..m).map(|_| sampler.random_range(0..grad.len())).collect(),
                    _ => (0..grad.len()).collect(),
                };
                let mut rec = ParamError {
                    name: name.clone(),
                    checked: 0,
                    max_rel_error: 0.0,
                    worst: (0, 0.0, 0.0),
                };
                let at = Site {
                    step,
                    unit,
                    param: pi,
                    entering: &entering[step],
                    trace: &trace,
                };
                for &j in &indices {
                    let plus = perturbed_loss(model, &at, j, opts.step, labels, &rng0)?;
                    let minus = perturbed_loss(model, &at, j, -opts.step, labels, &rng0)?;
                    let numeric = (plus - minus) / (2.0 * opts.step);
                    let e = relative_error(grad[j], numeric, opts.floor);
                    if e > rec.max_rel_error || rec.checked == 0 {
                        rec.max_rel_error = e;
                        rec.worst = (j, grad[j], numeric);
                    }
                    rec.checked += 1;
                }
                total += rec.checked;
                params.push(rec);
            }
        }
    }

    let mut it = buffers.into_iter();
    model.visit_buffers(&mut |b| b.value = it.next().expect("buffer count changed"));
    model.set_dropout_rng(rng0);
    Ok(GradCheckReport {
        loss,
        entries_checked: total,
        params,
    })
}

/// Parameter array `param` of `unit` in forward step `step`, with the
/// recorded values needed to resume from it.
struct Site<'a> {
    step: usize,
    unit: Unit,
    param: usize,
    entering: &'a StepState,
    trace: &'a StepTrace,
}

fn with_entry(model: &mut SlowFast, at: &Site, entry: usize, f: &mut dyn FnMut(&mut f64)) {
    let mut i = 0;
    model.visit_unit_params(at.step, at.unit, &mut |p| {
        if i == at.param {
            f(&mut p.value[entry]);
        }
        i += 1;
    });
}

fn perturbed_loss(
    model: &mut SlowFast,
    at: &Site,
    entry: usize,
    delta: f64,
    labels: &[usize],
    rng0: &ChaCha8Rng,
) -> Result<f64> {
    let mut saved = 0.0;
    with_entry(model, at, entry, &mut |v| {
        saved = *v;
        *v += delta;
    });
    model.set_dropout_rng(rng0.clone());
    let out = model.resume_unit(at.step, at.unit, at.entering, at.trace);
    with_entry(model, at, entry, &mut |v| *v = saved);
    Ok(softmax_cross_entropy(&out?, labels)?.0)
}
