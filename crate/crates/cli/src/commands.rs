//! The six pipeline commands. Every command writes the effective config to
//! `<output_dir>/config.toml` and its seeds and version to
//! `<output_dir>/meta/<command>.json`; nothing outside `output_dir` is
//! written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nearmiss_core::clipstore::{
    eval_transform, make_splits, read_manifest_with_fps, sample_indices, segment_clip, ClipRecord, DatasetSplit,
    FrameDir, SplitPart,
};
use nearmiss_core::explain::{compare_maps, gaussian_gaze, grad_cam, load_saliency, render_overlay, save_grid, save_saliency_png, spatial_entropy, HeatmapStack, SaliencyMap};
use nearmiss_core::frames::FramePair;
use nearmiss_core::metrics::{compute_metrics, confusion, improvement_table, published_baselines, MetricsReport};
use nearmiss_core::nn::Mode;
use nearmiss_core::slowfast::{build_slowfast, load_checkpoint, InputNorm, ModelSummary, Pathway, SlowFast};
use nearmiss_core::synthgen::{generate_corpus, write_corpus, GroundTruth};
use nearmiss_core::trainer::{compute_input_norm, evaluate, fit, smooth_curve, EvalOutput, FitOptions, SegmentSet, TrainingCurve, Transform};
use nearmiss_core::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::plot::{line_chart, Series};
use crate::{CliError, CliResult};

/// Name of the baseline row the comparison table measures against.
pub const REFERENCE_BASELINE: &str = "NTT (V)";
pub const MODEL_NAME: &str = "SlowFast (ours)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Synth,
    Prepare,
    Train,
    Eval,
    Explain,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Explain => "explain",
            Command::Plot => "plot",
        }
    }
}

/// Artifact locations under an output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn segments(&self) -> PathBuf {
        self.root.join("segments.tsv")
    }
    pub fn norm(&self) -> PathBuf {
        self.root.join("norm.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("best.ckpt")
    }
    pub fn curve(&self) -> PathBuf {
        self.root.join("curve.jsonl")
    }
    pub fn val_curve(&self) -> PathBuf {
        self.root.join("val.jsonl")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn explain_dir(&self) -> PathBuf {
        self.root.join("explain")
    }
    pub fn plot_dir(&self) -> PathBuf {
        self.root.join("plots")
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    write(p, serde_json::to_string_pretty(v)? + "\n")
}

fn require(path: PathBuf, what: &'static str, producer: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { what, path, producer })
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    data_seed: u64,
    synth_master_seed: u64,
    train_seed: u64,
    init_seed: u64,
    inputs: Vec<String>,
}

fn record_run(cfg: &RunConfig, cmd: Command, inputs: &[PathBuf]) -> Result<()> {
    let out = cfg.output_dir();
    mkdir(&out.join("meta"))?;
    write(&out.join("config.toml"), cfg.to_toml())?;
    let meta = RunMeta {
        command: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        data_seed: cfg.data.seed,
        synth_master_seed: cfg.synth.master_seed,
        train_seed: cfg.train.seed,
        init_seed: cfg.train.init_seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&out.join("meta").join(format!("{}.json", cmd.name())), &meta)
}

/// Run one command against a validated configuration.
pub fn dispatch(cmd: Command, cfg: &RunConfig) -> CliResult<()> {
    let layout = Layout::new(cfg.output_dir());
    match cmd {
        Command::Synth => synth(cfg, &layout),
        Command::Prepare => prepare(cfg, &layout),
        Command::Train => train(cfg, &layout),
        Command::Eval => eval(cfg, &layout),
        Command::Explain => explain(cfg, &layout),
        Command::Plot => plot(cfg, &layout),
    }
}

fn synth(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    record_run(cfg, Command::Synth, &[])?;
    let corpus = generate_corpus(&cfg.synth.corpus_options())?;
    let manifest = write_corpus(&layout.corpus(), &corpus)?;
    eprintln!("wrote {} clips, manifest {}", corpus.entries.len(), manifest.display());
    Ok(())
}

fn read_clips(cfg: &RunConfig) -> CliResult<(PathBuf, Vec<ClipRecord>)> {
    let path = require(cfg.manifest_path(), "manifest", "synth")?;
    let clips = read_manifest_with_fps(&path, cfg.data.fps)?;
    Ok((path, clips))
}

fn read_split(layout: &Layout) -> CliResult<DatasetSplit> {
    Ok(DatasetSplit::load(&require(layout.split(), "split", "prepare")?)?)
}

fn eval_tf(cfg: &RunConfig) -> Transform {
    Transform::Center(cfg.data.jitter.crop)
}

fn part_name(p: SplitPart) -> &'static str {
    match p {
        SplitPart::Train => "train",
        SplitPart::Validation => "validation",
        SplitPart::Test => "test",
    }
}

fn prepare(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let (manifest, clips) = read_clips(cfg)?;
    record_run(cfg, Command::Prepare, &[manifest])?;
    let split = make_splits(&clips, cfg.data.ratio, cfg.data.seed)?;
    split.save(&layout.split())?;

    let mut tsv = String::from("# clip_id\tsplit\tlabel\twindow\tn_frames\n");
    for part in [SplitPart::Train, SplitPart::Validation, SplitPart::Test] {
        let ids = split.part(part);
        for clip in clips.iter().filter(|c| ids.contains(&c.clip_id)) {
            for seg in segment_clip(clip, &cfg.data.policy)? {
                let _ = writeln!(
                    tsv,
                    "{}\t{}\t{}\t{}\t{}",
                    seg.clip_id,
                    part_name(part),
                    seg.label,
                    seg.window,
                    seg.frame_indices.len()
                );
            }
        }
    }
    write(&layout.segments(), tsv)?;

    let train = SegmentSet::from_clips(&clips, &split.train, &cfg.data.policy, &FrameDir)?;
    let norm = compute_input_norm(&train, &cfg.model, &eval_tf(cfg))?;
    write_json(&layout.norm(), &norm)?;
    let [a, b, c] = split.sizes();
    eprintln!("split {a}/{b}/{c} clips, {} training segments", train.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_val_accuracy: f64,
    best_val_loss: f64,
    epochs: usize,
    train_segments: usize,
    val_segments: usize,
    model: ModelSummaryBrief,
}

#[derive(Serialize)]
struct ModelSummaryBrief {
    params: usize,
    total_macs: u64,
    fast_share: f64,
}

fn train(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let (manifest, clips) = read_clips(cfg)?;
    let split = read_split(layout)?;
    let norm_path = require(layout.norm(), "input statistics", "prepare")?;
    record_run(cfg, Command::Train, &[manifest, layout.split(), norm_path.clone()])?;
    let text = fs::read_to_string(&norm_path).map_err(|e| Error::io(&norm_path, e))?;
    let norm: InputNorm = serde_json::from_str(&text).map_err(|e| Error::format(&norm_path, e.to_string()))?;

    let train = SegmentSet::from_clips(&clips, &split.train, &cfg.data.policy, &FrameDir)?;
    let val = SegmentSet::from_clips(&clips, &split.validation, &cfg.data.policy, &FrameDir)?;
    let mut model = build_slowfast(&cfg.model, cfg.train.init_seed)?;
    model.set_input_norm(norm)?;
    let crop = cfg.data.jitter.crop;
    let summary = ModelSummary::new(&mut model, crop, crop)?;

    mkdir(&layout.checkpoint().parent().expect("checkpoint has a parent"))?;
    let opts = FitOptions {
        seed: cfg.train.seed,
        train_transform: Transform::Jitter(cfg.data.jitter),
        eval_transform: eval_tf(cfg),
        checkpoint: Some(layout.checkpoint()),
    };
    let result = fit(
        &mut model,
        &train,
        &val,
        &cfg.train.schedule(),
        &cfg.train.optim(),
        &opts,
        &mut |r| {
            eprintln!(
                "epoch {:3}  lr {:.5}  train_loss {:.4}  train_err {:.3}  val_loss {:.4}  val_acc {:.3}",
                r.epoch, r.lr, r.train_loss, r.train_top1_error, r.val_loss, r.val_accuracy
            )
        },
    )?;
    result.curve.save(&layout.curve(), &layout.val_curve())?;
    write_json(
        &layout.root.join("train_summary.json"),
        &TrainSummary {
            best_epoch: result.best_epoch,
            best_val_accuracy: result.best_val_accuracy,
            best_val_loss: result.best_val_loss,
            epochs: result.curve.epochs.len(),
            train_segments: train.len(),
            val_segments: val.len(),
            model: ModelSummaryBrief {
                params: summary.params,
                total_macs: summary.total_macs,
                fast_share: summary.fast_share,
            },
        },
    )?;
    eprintln!(
        "best epoch {} (val accuracy {:.4}), checkpoint {}",
        result.best_epoch,
        result.best_val_accuracy,
        layout.checkpoint().display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig, layout: &Layout) -> CliResult<SlowFast> {
    let path = require(layout.checkpoint(), "checkpoint", "train")?;
    let mut model = load_checkpoint(&path, Some(&cfg.model))?.model;
    model.set_mode(Mode::Eval);
    Ok(model)
}

fn predictions_tsv(set: &SegmentSet, out: &EvalOutput) -> String {
    let mut s = String::from("# clip_id\twindow\tlabel\tprediction\tnear_miss_prob\n");
    for (i, sample) in set.samples.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.6}",
            sample.clip.clip_id, sample.segment.window, out.labels[i], out.predictions[i], out.near_miss_prob[i]
        );
    }
    s
}

fn report_of(out: &EvalOutput) -> Result<MetricsReport> {
    compute_metrics(&confusion(&out.predictions, &out.labels)?)
}

fn eval(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let (manifest, clips) = read_clips(cfg)?;
    let split = read_split(layout)?;
    let mut model = load_model(cfg, layout)?;
    record_run(cfg, Command::Eval, &[manifest, layout.split(), layout.checkpoint()])?;
    let test = SegmentSet::from_clips(&clips, &split.test, &cfg.data.policy, &FrameDir)?;
    let dir = layout.eval_dir();
    mkdir(&dir)?;
    let batch = cfg.train.batch_size;

    let out = evaluate(&mut model, &test, &eval_tf(cfg), batch)?;
    let report = report_of(&out)?;
    write_json(&dir.join("metrics.json"), &report)?;
    write(&dir.join("metrics.txt"), report.to_text())?;
    write(&dir.join("predictions.tsv"), predictions_tsv(&test, &out))?;
    let table = improvement_table(&report, MODEL_NAME, &published_baselines(), REFERENCE_BASELINE)?;
    write(&dir.join("table.txt"), table.to_text())?;
    write_json(&dir.join("table.json"), &table)?;

    model.set_fast_lesion(true);
    let lesion = evaluate(&mut model, &test, &eval_tf(cfg), batch)?;
    let lesion_report = report_of(&lesion)?;
    write_json(&dir.join("slow_only_metrics.json"), &lesion_report)?;
    write(&dir.join("slow_only_metrics.txt"), lesion_report.to_text())?;
    write(&dir.join("slow_only_predictions.tsv"), predictions_tsv(&test, &lesion))?;

    eprint!("{}", report.to_text());
    eprintln!("slow-only accuracy {:.2}", lesion_report.accuracy);
    Ok(())
}

/// Whether the argmax of a Grad-CAM stack lies inside the intruder box of
/// the clip frame it was computed on. `indices` are the clip frames behind
/// each heatmap frame; `native` is the clip resolution and `crop` the
/// centre crop (if any) the model input was taken from.
pub fn localization_hit(
    heat: &HeatmapStack,
    indices: &[usize],
    truth: &GroundTruth,
    native: (usize, usize),
    crop: Option<usize>,
) -> bool {
    if heat.all_zero {
        return false;
    }
    let (t, y, x) = heat.argmax();
    let Some(frame) = indices.get(t) else {
        return false;
    };
    let Some(bbox) = truth.bbox_at(*frame) else {
        return false;
    };
    let (ih, iw) = match crop {
        Some(c) => (c, c),
        None => native,
    };
    // Cell centre in model-input pixels, then back to native pixels.
    let py = (y as f64 + 0.5) * ih as f64 / heat.height as f64;
    let px = (x as f64 + 0.5) * iw as f64 / heat.width as f64;
    let (ny, nx) = match crop {
        None => (py, px),
        Some(c) => {
            let (h, w) = native;
            let s0 = h.min(w) as f64;
            let (rh, rw) = if h <= w {
                (c, ((w as f64 * c as f64 / s0).round() as usize).max(c))
            } else {
                (((h as f64 * c as f64 / s0).round() as usize).max(c), c)
            };
            let (top, left) = ((rh - c) / 2, (rw - c) / 2);
            ((py + top as f64) * h as f64 / rh as f64, (px + left as f64) * w as f64 / rw as f64)
        }
    };
    bbox.contains(ny.floor() as usize, nx.floor() as usize)
}

#[derive(Serialize)]
struct OverlapRow {
    clip_id: String,
    window: String,
    layer: String,
    frame: usize,
    clip_frame: usize,
    pearson_cc: f64,
    cc_defined: bool,
    iou_at_threshold: f64,
    entropy: f64,
}

#[derive(Serialize)]
struct ExplainRow {
    clip_id: String,
    window: String,
    layer: String,
    argmax: (usize, usize, usize),
    all_zero: bool,
    /// `None` without ground truth for the clip.
    argmax_in_bbox: Option<bool>,
}

fn saliency_for(cfg: &RunConfig, clip_id: &str, h: usize, w: usize) -> CliResult<SaliencyMap> {
    if cfg.explain.saliency_dir.is_empty() {
        return Ok(gaussian_gaze(h, w, (0.5, 0.5), 0.15));
    }
    let dir = Path::new(&cfg.explain.saliency_dir);
    for ext in ["png", "txt"] {
        let p = dir.join(format!("{clip_id}.{ext}"));
        if p.is_file() {
            return Ok(load_saliency(&p)?);
        }
    }
    Err(CliError::MissingArtifact {
        what: "saliency map",
        path: dir.join(format!("{clip_id}.png")),
        producer: "an external gaze model",
    })
}

fn explain(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let (manifest, clips) = read_clips(cfg)?;
    let split = read_split(layout)?;
    let mut model = load_model(cfg, layout)?;
    record_run(cfg, Command::Explain, &[manifest.clone(), layout.split(), layout.checkpoint()])?;
    let truth_dir = manifest.parent().unwrap_or(Path::new(".")).join("truth");
    let test = SegmentSet::from_clips(&clips, &split.test, &cfg.data.policy, &FrameDir)?;
    let root = layout.explain_dir();
    mkdir(&root)?;
    let mcfg = cfg.model.clone();
    let crop = cfg.data.jitter.crop;
    let layers = cfg.explain_layers();

    let mut overlap = Vec::new();
    let mut rows = Vec::new();
    let chosen = (0..test.len()).filter(|&i| test.samples[i].segment.label == cfg.explain.target).take(cfg.explain.clips);
    for i in chosen {
        let sample = &test.samples[i];
        let native = test.load(i, &mcfg, 0.5, &Transform::Native, 0)?;
        let input = FramePair::from_fast(eval_transform(&native.fast, crop)?, mcfg.alpha)?;
        let idx = sample_indices(&sample.segment, &mcfg, 0.5)?;
        let truth_path = truth_dir.join(format!("{}.json", sample.clip.clip_id));
        let truth = if truth_path.is_file() { Some(GroundTruth::load(&truth_path)?) } else { None };
        let (h, w) = (input.fast.height(), input.fast.width());
        let sal = saliency_for(cfg, &sample.clip.clip_id, h, w)?;
        let tag = format!("{}_{}", sample.clip.clip_id, sample.segment.label);
        let seg_dir = root.join(&tag);
        mkdir(&seg_dir)?;
        save_saliency_png(&seg_dir.join("saliency.png"), sal.height, sal.width, &sal.data)?;

        for &layer in &layers {
            let heat = grad_cam(&mut model, &input, cfg.explain.target, layer)?;
            let frames_idx = match layer.pathway {
                Pathway::Fast => &idx.fast,
                Pathway::Slow => &idx.slow,
            };
            let dir = seg_dir.join(layer.name());
            mkdir(&dir)?;
            for t in 0..heat.frames {
                let m = heat.frame(t);
                save_grid(&dir.join(format!("heat_t{t:02}.txt")), heat.height, heat.width, m)?;
                let rep = compare_maps(m, heat.height, heat.width, &sal, layer.pathway, cfg.explain.threshold);
                overlap.push(OverlapRow {
                    clip_id: sample.clip.clip_id.clone(),
                    window: sample.segment.window.to_string(),
                    layer: layer.name(),
                    frame: t,
                    clip_frame: frames_idx[t],
                    pearson_cc: rep.pearson_cc,
                    cc_defined: rep.cc_defined,
                    iou_at_threshold: rep.iou_at_threshold,
                    entropy: spatial_entropy(m),
                });
            }
            for &f in &cfg.explain.frames {
                let t = match layer.pathway {
                    Pathway::Fast => f,
                    Pathway::Slow => f / mcfg.alpha,
                };
                let img = render_overlay(&input.fast.frame(f), heat.frame(t), heat.height, heat.width, cfg.explain.opacity)?;
                FrameDir::write_frame(&dir.join(format!("overlay_f{f:02}.png")), &img)?;
            }
            rows.push(ExplainRow {
                clip_id: sample.clip.clip_id.clone(),
                window: sample.segment.window.to_string(),
                layer: layer.name(),
                argmax: heat.argmax(),
                all_zero: heat.all_zero,
                argmax_in_bbox: truth.as_ref().map(|g| {
                    localization_hit(&heat, frames_idx, g, (native.fast.height(), native.fast.width()), Some(crop))
                }),
            });
        }
    }

    write_json(&root.join("overlap.json"), &overlap)?;
    let mut txt = String::from("clip_id\twindow\tlayer\tframe\tclip_frame\tpearson_cc\tcc_defined\tiou\tentropy\n");
    for r in &overlap {
        let _ = writeln!(
            txt,
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{:.4}\t{:.4}",
            r.clip_id, r.window, r.layer, r.frame, r.clip_frame, r.pearson_cc, r.cc_defined, r.iou_at_threshold, r.entropy
        );
    }
    write(&root.join("overlap.txt"), txt)?;
    write_json(&root.join("heatmaps.json"), &rows)?;
    let with_truth: Vec<bool> = rows.iter().filter(|r| r.layer.starts_with("fast")).filter_map(|r| r.argmax_in_bbox).collect();
    if !with_truth.is_empty() {
        let hits = with_truth.iter().filter(|h| **h).count();
        eprintln!("fast-pathway argmax inside the intruder box: {hits}/{}", with_truth.len());
    }
    eprintln!("explained {} segments", rows.len() / layers.len().max(1));
    Ok(())
}

fn csv_f(v: f64) -> String {
    format!("{v:.6}")
}

fn plot(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let curve_path = require(layout.curve(), "training curve", "train")?;
    let val_path = require(layout.val_curve(), "validation curve", "train")?;
    record_run(cfg, Command::Plot, &[curve_path.clone(), val_path.clone()])?;
    let curve = TrainingCurve::load(&curve_path, &val_path)?;
    let dir = layout.plot_dir();
    mkdir(&dir)?;
    let win = cfg.plot.window;
    let (w, h) = (cfg.plot.width, cfg.plot.height);

    let it: Vec<f64> = curve.iterations.iter().map(|r| r.iteration as f64).collect();
    let loss: Vec<f64> = curve.iterations.iter().map(|r| r.loss).collect();
    let err: Vec<f64> = curve.iterations.iter().map(|r| r.top1_error).collect();
    let loss_s = smooth_curve(&loss, win)?;
    let err_s = smooth_curve(&err, win)?;
    let zip = |a: &[f64], b: &[f64]| a.iter().copied().zip(b.iter().copied()).collect::<Vec<_>>();

    let raw = [160, 190, 230];
    let smooth = [20, 70, 180];
    line_chart(
        &dir.join("loss.png"),
        w,
        h,
        &[Series { points: &zip(&it, &loss), color: raw }, Series { points: &zip(&it, &loss_s), color: smooth }],
    )?;
    line_chart(
        &dir.join("top1_error.png"),
        w,
        h,
        &[Series { points: &zip(&it, &err), color: raw }, Series { points: &zip(&it, &err_s), color: smooth }],
    )?;
    let lr: Vec<f64> = curve.iterations.iter().map(|r| r.lr).collect();
    line_chart(&dir.join("lr.png"), w, h, &[Series { points: &zip(&it, &lr), color: smooth }])?;

    let ep: Vec<f64> = curve.epochs.iter().map(|r| r.epoch as f64).collect();
    let va: Vec<f64> = curve.epochs.iter().map(|r| r.val_accuracy).collect();
    let vl: Vec<f64> = curve.epochs.iter().map(|r| r.val_loss).collect();
    line_chart(&dir.join("val_accuracy.png"), w, h, &[Series { points: &zip(&ep, &va), color: [30, 140, 60] }])?;
    line_chart(&dir.join("val_loss.png"), w, h, &[Series { points: &zip(&ep, &vl), color: [180, 60, 30] }])?;

    let mut csv = String::from("iteration,epoch,lr,loss,loss_smoothed,top1_error,top1_error_smoothed\n");
    for (i, r) in curve.iterations.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.epoch,
            csv_f(r.lr),
            csv_f(r.loss),
            csv_f(loss_s[i]),
            csv_f(r.top1_error),
            csv_f(err_s[i])
        );
    }
    write(&dir.join("iterations.csv"), csv)?;
    let mut csv = String::from("epoch,lr,train_loss,train_top1_error,val_loss,val_accuracy\n");
    for r in &curve.epochs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.epoch,
            csv_f(r.lr),
            csv_f(r.train_loss),
            csv_f(r.train_top1_error),
            csv_f(r.val_loss),
            csv_f(r.val_accuracy)
        );
    }
    write(&dir.join("epochs.csv"), csv)?;
    eprintln!("plots in {}", dir.display());
    Ok(())
}
