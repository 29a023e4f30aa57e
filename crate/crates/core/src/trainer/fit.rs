use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::curve::{EpochRecord, IterRecord, TrainingCurve};
use super::data::{SegmentSet, Transform};
use super::optim::{OptimConfig, Sgd};
use super::schedule::{lr_at_fraction, ScheduleConfig};
use crate::clipstore::Label;
use crate::error::{Error, Result};
use crate::frames::FramePair;
use crate::nn::{softmax_cross_entropy, Mode};
use crate::slowfast::{save_checkpoint, softmax, CheckpointMeta, RngState, SlowFast};
use crate::synthgen::clip_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub top1_error: f64,
    pub iterations: Vec<IterRecord>,
}

/// Generator for the sampling decisions of one epoch.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(clip_seed(seed, epoch))
}

fn batch_tensors(model: &SlowFast, pairs: &[FramePair]) -> Result<(Tensor, Tensor)> {
    model.input_tensors(pairs)
}

fn argmax_labels(logits: &Tensor) -> Result<Vec<Label>> {
    logits
        .data()
        .chunks(logits.sample_len())
        .map(|r| {
            let best = r
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            Label::from_class_index(best.0)
        })
        .collect()
}

/// One pass over `data` in a seeded random order. `lr(batch, n_batches)`
/// gives the learning rate of each batch; `first_iteration` numbers the
/// iteration records.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut SlowFast,
    sgd: &mut Sgd,
    data: &SegmentSet,
    transform: &Transform,
    batch_size: usize,
    epoch: usize,
    seed: u64,
    first_iteration: usize,
    lr: &dyn Fn(usize, usize) -> f64,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    model.set_mode(Mode::Train);
    let cfg = model.config().clone();
    let mut rng = epoch_rng(seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let draws: Vec<(f64, u64)> = order.iter().map(|_| (rng.random::<f64>(), rng.random::<u64>())).collect();
    let n_batches = order.len().div_ceil(batch_size);
    let mut iterations = Vec::with_capacity(n_batches);
    let (mut loss_sum, mut wrong) = (0.0, 0usize);
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let mut pairs = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for (k, &i) in chunk.iter().enumerate() {
            let (offset, jseed) = draws[b * batch_size + k];
            pairs.push(data.load(i, &cfg, offset, transform, jseed)?);
            labels.push(data.samples[i].segment.label.class_index());
        }
        let (xs, xf) = batch_tensors(model, &pairs)?;
        model.zero_grad();
        let logits = model.forward_tensors(&xs, &xf, true)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        model.backward(&dlogits)?;
        let rate = lr(b, n_batches);
        sgd.step(model, rate);
        let preds = argmax_labels(&logits)?;
        let batch_wrong = preds.iter().zip(&labels).filter(|(p, &y)| p.class_index() != y).count();
        loss_sum += loss * chunk.len() as f64;
        wrong += batch_wrong;
        iterations.push(IterRecord {
            iteration: first_iteration + b,
            epoch,
            lr: rate,
            loss,
            top1_error: batch_wrong as f64 / chunk.len() as f64,
        });
    }
    Ok(EpochStats {
        epoch,
        mean_loss: loss_sum / data.len() as f64,
        top1_error: wrong as f64 / data.len() as f64,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub labels: Vec<Label>,
    pub predictions: Vec<Label>,
    /// Softmax probability of the near-miss class per sample.
    pub near_miss_prob: Vec<f64>,
    pub mean_loss: f64,
}

impl EvalOutput {
    pub fn accuracy(&self) -> f64 {
        let right = self.labels.iter().zip(&self.predictions).filter(|(a, b)| a == b).count();
        right as f64 / self.labels.len().max(1) as f64
    }
}

/// Deterministic evaluation at the centred temporal grid, in eval mode.
/// The model's previous mode is restored afterwards.
pub fn evaluate(model: &mut SlowFast, data: &SegmentSet, transform: &Transform, batch_size: usize) -> Result<EvalOutput> {
    if data.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let prev = model.mode();
    model.set_mode(Mode::Eval);
    let cfg = model.config().clone();
    let mut out = EvalOutput {
        labels: data.labels(),
        predictions: Vec::with_capacity(data.len()),
        near_miss_prob: Vec::with_capacity(data.len()),
        mean_loss: 0.0,
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let result = (|| -> Result<()> {
        for chunk in idx.chunks(batch_size.max(1)) {
            let pairs = chunk
                .iter()
                .map(|&i| data.load(i, &cfg, 0.5, transform, 0))
                .collect::<Result<Vec<_>>>()?;
            let (xs, xf) = batch_tensors(model, &pairs)?;
            let logits = model.forward_tensors(&xs, &xf, false)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.samples[i].segment.label.class_index()).collect();
            let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
            out.mean_loss += loss * chunk.len() as f64;
            out.predictions.extend(argmax_labels(&logits)?);
            for row in logits.data().chunks(logits.sample_len()) {
                out.near_miss_prob.push(softmax(row)[Label::NearMiss.class_index()]);
            }
        }
        Ok(())
    })();
    model.set_mode(prev);
    result?;
    out.mean_loss /= data.len() as f64;
    Ok(out)
}

pub struct FitOptions {
    pub seed: u64,
    pub train_transform: Transform,
    pub eval_transform: Transform,
    /// Where to write the best checkpoint, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

pub struct FitResult {
    pub best_model: SlowFast,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_loss: f64,
    pub curve: TrainingCurve,
}

/// Train for `optim.max_epochs` epochs with the warmup/cosine schedule,
/// keeping the epoch with the best validation accuracy (ties: lower
/// validation loss).
pub fn fit(
    model: &mut SlowFast,
    train: &SegmentSet,
    val: &SegmentSet,
    schedule: &ScheduleConfig,
    optim: &OptimConfig,
    opts: &FitOptions,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult> {
    schedule.validate()?;
    optim.validate()?;
    if optim.max_epochs > schedule.t_max + 1 {
        return Err(Error::Config(format!(
            "train.max_epochs {} runs past train.t_max {}",
            optim.max_epochs, schedule.t_max
        )));
    }
    if val.is_empty() {
        return Err(Error::Invalid("validation set is empty".into()));
    }
    let mut sgd = Sgd::new(optim);
    let mut curve = TrainingCurve::default();
    let mut best: Option<(usize, f64, f64, SlowFast)> = None;
    for epoch in 0..optim.max_epochs {
        let epoch_lr = lr_at_fraction(epoch as f64, schedule)?;
        let per_iter = schedule.per_iteration;
        let lr = |b: usize, n: usize| {
            if per_iter {
                let t = (epoch as f64 + b as f64 / n as f64).min(schedule.t_max as f64);
                lr_at_fraction(t, schedule).unwrap_or(epoch_lr)
            } else {
                epoch_lr
            }
        };
        let stats = train_epoch(
            model,
            &mut sgd,
            train,
            &opts.train_transform,
            optim.batch_size,
            epoch,
            opts.seed,
            curve.iterations.len(),
            &lr,
        )?;
        let ev = evaluate(model, val, &opts.eval_transform, optim.batch_size)?;
        let rec = EpochRecord {
            epoch,
            lr: epoch_lr,
            train_loss: stats.mean_loss,
            train_top1_error: stats.top1_error,
            val_loss: ev.mean_loss,
            val_accuracy: ev.accuracy(),
        };
        curve.iterations.extend(stats.iterations);
        progress(&rec);
        let improved = match &best {
            None => true,
            Some((_, acc, loss, _)) => rec.val_accuracy > *acc || (rec.val_accuracy == *acc && rec.val_loss < *loss),
        };
        if improved {
            if let Some(path) = &opts.checkpoint {
                let meta = CheckpointMeta {
                    epoch,
                    rng: vec![("trainer".into(), RngState::capture(&epoch_rng(opts.seed, epoch + 1)))],
                    notes: serde_json::json!({
                        "val_accuracy": rec.val_accuracy,
                        "val_loss": rec.val_loss,
                        "seed": opts.seed,
                    }),
                };
                save_checkpoint(path, model, &meta)?;
            }
            best = Some((epoch, rec.val_accuracy, rec.val_loss, model.clone()));
        }
        curve.epochs.push(rec);
    }
    let (best_epoch, best_val_accuracy, best_val_loss, best_model) = best.expect("at least one epoch runs");
    Ok(FitResult {
        best_model,
        best_epoch,
        best_val_accuracy,
        best_val_loss,
        curve,
    })
}
