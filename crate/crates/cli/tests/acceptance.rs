//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of outcome unless `NEARMISS_ACCEPTANCE_STRICT=1`.
//! `NEARMISS_ACCEPTANCE_ONLY=3,7` runs a subset.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nearmiss_cli::{dispatch, load_config, localization_hit, Command};
use nearmiss_core::clipstore::{make_splits, sample_indices, JitterConfig, Label, SegmentationPolicy};
use nearmiss_core::explain::{compare_maps, grad_cam, pearson, spatial_entropy, top_fraction_iou, SaliencyMap};
use nearmiss_core::metrics::{compute_metrics, improvement_table, published_baselines, ConfusionMatrix};
use nearmiss_core::nn::{Mode, NonLocal};
use nearmiss_core::slowfast::gradcheck::{gradcheck, random_inputs, randomize_zero_inits, tiny_config, GradCheckOptions};
use nearmiss_core::slowfast::{build_slowfast, Depth, LayerId, ModelSummary, Pathway, PathwayConfig, SlowFast};
use nearmiss_core::synthgen::{generate_corpus, CorpusOptions, SynthSource};
use nearmiss_core::tensor::Tensor;
use nearmiss_core::trainer::{compute_input_norm, evaluate, fit, lr_at, FitOptions, OptimConfig, ScheduleConfig, SegmentSet, Transform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    failures: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {id} {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
        if !pass {
            self.failures.push(id);
        }
    }

    fn info(&self, id: usize, detail: String) {
        println!("INFO {id} {detail}");
    }
}

fn metrics_reproduction(r: &mut Report) {
    let t = Instant::now();
    let m = compute_metrics(&ConfusionMatrix::new(30, 24, 12, 42)).unwrap();
    let got = m.rounded();
    let want = [66.67, 55.56, 71.43, 62.50];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.005);
    r.line(
        1,
        "metrics reproduction",
        ok,
        format!("accuracy {:.2} recall {:.2} precision {:.2} f1 {:.2}", got[0], got[1], got[2], got[3]),
        t,
    );
}

fn table_deltas(r: &mut Report) {
    let t = Instant::now();
    let ours = compute_metrics(&ConfusionMatrix::new(30, 24, 12, 42)).unwrap();
    let table = improvement_table(&ours, "SlowFast", &published_baselines(), "NTT (V)").unwrap();
    let d = &table.rows.last().unwrap().deltas;
    let ok = d[0] == Some(26.88) && d[1] == Some(12.43) && d[2] == Some(19.11);
    r.line(2, "table deltas vs NTT (V)", ok, format!("precision {:?} recall {:?} f1 {:?}", d[0], d[1], d[2]), t);
}

fn schedule(r: &mut Report) {
    let t = Instant::now();
    let cfg = ScheduleConfig::default();
    let closed = |e: f64| {
        if e < 34.0 {
            0.01 + (0.1 - 0.01) * e / 34.0
        } else {
            0.0 + 0.5 * (0.1 - 0.0) * (1.0 + (PI * (e - 34.0) / (196.0 - 34.0)).cos())
        }
    };
    let worst = (0..=196)
        .map(|e| (lr_at(e, &cfg).unwrap() - closed(e as f64)).abs())
        .fold(0.0, f64::max);
    let ends = [lr_at(0, &cfg).unwrap(), lr_at(34, &cfg).unwrap(), lr_at(196, &cfg).unwrap()];
    let ok = worst <= 1e-9
        && (ends[0] - 0.01).abs() <= 1e-9
        && (ends[1] - 0.1).abs() <= 1e-9
        && (ends[2] - cfg.lr_min).abs() <= 1e-9;
    r.line(
        3,
        "warmup + cosine schedule",
        ok,
        format!("max |lr - closed form| {worst:.1e} over 0..=196; lr(0) {} lr(34) {} lr(196) {:.1e}", ends[0], ends[1], ends[2]),
        t,
    );
}

fn splits(r: &mut Report) {
    let t = Instant::now();
    let corpus = generate_corpus(&CorpusOptions {
        n: 287,
        ..CorpusOptions::default()
    })
    .unwrap();
    let recs = corpus.records();
    let all: HashSet<&str> = recs.iter().map(|c| c.clip_id.as_str()).collect();
    let mut sizes_ok = true;
    let mut leaks = 0;
    for seed in 0..1000 {
        let s = make_splits(&recs, [6.0, 2.0, 2.0], seed).unwrap();
        sizes_ok &= s.sizes() == [172, 57, 58];
        let mut seen = HashSet::new();
        for id in s.train.iter().chain(&s.validation).chain(&s.test) {
            if !seen.insert(id.as_str()) {
                leaks += 1;
            }
        }
        sizes_ok &= seen.len() == all.len() && seen.iter().all(|id| all.contains(id));
    }
    let sizes = make_splits(&recs, [6.0, 2.0, 2.0], 0).unwrap().sizes();
    r.line(
        4,
        "split reproduction",
        sizes_ok && leaks == 0,
        format!("287 clips -> {}/{}/{}, {leaks} leaked clips over 1000 seeds", sizes[0], sizes[1], sizes[2]),
        t,
    );
}

fn architecture(r: &mut Report) {
    let t = Instant::now();
    let cfg = PathwayConfig::default();
    let mut m = build_slowfast(&cfg, 0).unwrap();
    let s = ModelSummary::new(&mut m, 224, 224).unwrap();
    let mut laws = true;
    for (slow, fast) in m.stage_shapes(224, 224).unwrap() {
        laws &= fast[1] * cfg.beta_inv == slow[1] && fast[2] == cfg.alpha * slow[2];
    }
    let share_ok = (0.10..=0.30).contains(&s.fast_share);
    let no_lateral = s.fast_macs as f64 / s.total_macs as f64;
    r.line(
        5,
        "architecture laws",
        share_ok && laws,
        format!(
            "fast share {:.2}% (fast layers only {:.2}%), required [10%, 30%]; channel fast = slow/8 and T_fast = 4 T_slow at every stage: {}",
            100.0 * s.fast_share,
            100.0 * no_lateral,
            if laws { "hold" } else { "violated" }
        ),
        t,
    );
}

fn brute_force_nonlocal(nl: &NonLocal, x: &Tensor) -> Tensor {
    let [_, c, tt, h, w] = x.shape();
    let p = tt * h * w;
    let ci = nl.inner_channels();
    let proj = |conv: &nearmiss_core::nn::Conv3d, cin: usize, cout: usize, v: &dyn Fn(usize, usize) -> f64| {
        let b = conv.bias.as_ref().unwrap();
        (0..p)
            .map(|i| {
                (0..cout)
                    .map(|o| b.value[o] + (0..cin).map(|k| conv.weight.value[o * cin + k] * v(k, i)).sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    let xv = |k: usize, i: usize| x.data()[k * p + i];
    let (th, ph, g) = (proj(&nl.theta, c, ci, &xv), proj(&nl.phi, c, ci, &xv), proj(&nl.g, c, ci, &xv));
    let mut y = vec![vec![0.0; ci]; p];
    for i in 0..p {
        let s: Vec<f64> = (0..p).map(|j| (0..ci).map(|k| th[i][k] * ph[j][k]).sum()).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
        for j in 0..p {
            let a = (s[j] - m).exp() / z;
            for k in 0..ci {
                y[i][k] += a * g[j][k];
            }
        }
    }
    let z = proj(&nl.out, ci, c, &|k, i| y[i][k]);
    Tensor::from_fn(x.shape(), |[_, k, ti, hi, wi]| {
        let i = (ti * h + hi) * w + wi;
        x.data()[k * p + i] + z[i][k]
    })
}

fn numerics(r: &mut Report) {
    let t = Instant::now();
    let mut nl_err = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 2 * rng.random_range(1..=4);
        let mut nl = NonLocal::new("nl", c, &mut rng);
        for conv in [&mut nl.theta, &mut nl.phi, &mut nl.g, &mut nl.out] {
            for v in conv.weight.value.iter_mut().chain(conv.bias.as_mut().unwrap().value.iter_mut()) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let shape = [1, c, rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let x = Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0));
        let got = nl.forward(&x, false).unwrap();
        let want = brute_force_nonlocal(&nl, &x);
        for (a, b) in got.data().iter().zip(want.data()) {
            nl_err = nl_err.max((a - b).abs());
        }
    }

    let cfg = tiny_config();
    let (xs, xf) = random_inputs(&cfg, 2, 8, 3);
    let mut full = build_slowfast(&cfg, 1).unwrap();
    randomize_zero_inits(&mut full, 2);
    let mut coarse = full.clone();
    let rep = gradcheck(&mut full, &xs, &xf, &[0, 1], &GradCheckOptions { step: 1e-6, ..Default::default() }).unwrap();
    let worst = rep.worst().map(|p| p.name.clone()).unwrap_or_default();
    let ok = nl_err <= 1e-5 && rep.max_rel_error() <= 1e-3;
    r.line(
        6,
        "non-local oracle and gradient check",
        ok,
        format!(
            "non-local max abs error {nl_err:.1e} over 50 inputs; gradient check over all {} entries at step 1e-6: max relative error {:.2e} ({worst})",
            rep.entries_checked,
            rep.max_rel_error()
        ),
        t,
    );
    let sampled = gradcheck(
        &mut coarse,
        &xs,
        &xf,
        &[0, 1],
        &GradCheckOptions {
            step: 1e-3,
            max_entries: Some(20),
            ..Default::default()
        },
    )
    .unwrap();
    r.info(
        6,
        format!(
            "step 1e-3 (sampled, {} entries): max relative error {:.2e}; kink crossings dominate at this step",
            sampled.entries_checked,
            sampled.max_rel_error()
        ),
    );
}

fn small_model_config() -> PathwayConfig {
    PathwayConfig {
        backbone_depth: Depth::R18,
        base_width: 16,
        ..PathwayConfig::default()
    }
}

const EPOCHS: usize = 20;

struct Trained {
    model: SlowFast,
    corpus_source: SynthSource,
    recs: Vec<nearmiss_core::clipstore::ClipRecord>,
    split: nearmiss_core::clipstore::DatasetSplit,
}

fn learnability(r: &mut Report) -> Trained {
    let t = Instant::now();
    let corpus = generate_corpus(&CorpusOptions {
        n: 300,
        balance: 0.5,
        master_seed: 0,
        resolution: (32, 32),
        ..CorpusOptions::default()
    })
    .unwrap();
    let source = SynthSource::new(&corpus).unwrap();
    let recs = corpus.records();
    let split = make_splits(&recs, [6.0, 2.0, 2.0], 0).unwrap();
    let policy = SegmentationPolicy::default();
    let cfg = small_model_config();
    let train = SegmentSet::from_clips(&recs, &split.train, &policy, &source).unwrap();
    let val = SegmentSet::from_clips(&recs, &split.validation, &policy, &source).unwrap();
    let test = SegmentSet::from_clips(&recs, &split.test, &policy, &source).unwrap();
    let mut model = build_slowfast(&cfg, 0).unwrap();
    model.set_input_norm(compute_input_norm(&train, &cfg, &Transform::Native).unwrap()).unwrap();
    let schedule = ScheduleConfig {
        lr_max: 0.02,
        warmup_start: 0.002,
        warmup_epochs: 3,
        t_max: EPOCHS,
        ..ScheduleConfig::default()
    };
    let optim = OptimConfig {
        batch_size: 8,
        max_epochs: EPOCHS,
        ..OptimConfig::default()
    };
    let opts = FitOptions {
        seed: 0,
        train_transform: Transform::Jitter(JitterConfig {
            short_side: [32, 40],
            crop: 32,
        }),
        eval_transform: Transform::Native,
        checkpoint: None,
    };
    let res = fit(&mut model, &train, &val, &schedule, &optim, &opts, &mut |_| {}).unwrap();
    let mut best = res.best_model;
    let acc = evaluate(&mut best, &test, &Transform::Native, 8).unwrap().accuracy();
    best.set_fast_lesion(true);
    let lesion = evaluate(&mut best, &test, &Transform::Native, 8).unwrap().accuracy();
    best.set_fast_lesion(false);
    let ok = acc >= 0.90 && acc - lesion >= 0.10;
    r.line(
        7,
        "end-to-end learnability",
        ok,
        format!(
            "300 clips at 32x32, depth 18, {EPOCHS} epochs (best epoch {}): test accuracy {:.2}% over {} segments, slow-only {:.2}% ({:+.2} points)",
            res.best_epoch,
            100.0 * acc,
            test.len(),
            100.0 * lesion,
            100.0 * (lesion - acc)
        ),
        t,
    );
    Trained {
        model: best,
        corpus_source: source,
        recs,
        split,
    }
}

/// Fast-layer Grad-CAM hit rate on the near-miss segments of `ids`, and the
/// mean spatial entropy of safe and near-miss segments.
fn hit_rate(tr: &mut Trained, ids: &[String], layer: LayerId) -> (f64, usize, f64, f64) {
    let policy = SegmentationPolicy::default();
    let set = SegmentSet::from_clips(&tr.recs, ids, &policy, &tr.corpus_source).unwrap();
    let cfg = tr.model.config().clone();
    let (mut hits, mut n) = (0, 0);
    let (mut ent, mut cnt) = ([0.0; 2], [0usize; 2]);
    for i in 0..set.len() {
        let s = &set.samples[i];
        let pair = set.load(i, &cfg, 0.5, &Transform::Native, 0).unwrap();
        let heat = grad_cam(&mut tr.model, &pair, Label::NearMiss, layer).unwrap();
        let k = s.segment.label.class_index();
        ent[k] += spatial_entropy(&heat.mean_map());
        cnt[k] += 1;
        if s.segment.label != Label::NearMiss {
            continue;
        }
        let idx = sample_indices(&s.segment, &cfg, 0.5).unwrap();
        let truth = tr.corpus_source.renderer(&s.clip.clip_id).unwrap().ground_truth();
        let native = (pair.fast.height(), pair.fast.width());
        n += 1;
        if localization_hit(&heat, &idx.fast, &truth, native, None) {
            hits += 1;
        }
    }
    (hits as f64 / n.max(1) as f64, n, ent[0] / cnt[0].max(1) as f64, ent[1] / cnt[1].max(1) as f64)
}

fn localization(r: &mut Report, tr: &mut Trained) {
    let t = Instant::now();
    tr.model.set_mode(Mode::Eval);
    let candidates: Vec<LayerId> = (1..=4).map(|stage| LayerId { pathway: Pathway::Fast, stage }).collect();
    let val_ids = tr.split.validation.clone();
    let mut chosen = (candidates[3], -1.0);
    for &l in &candidates {
        let (rate, n, _, _) = hit_rate(tr, &val_ids, l);
        r.info(8, format!("validation hit rate {} {:.2}% over {n} near-miss segments", l.name(), 100.0 * rate));
        if rate > chosen.1 {
            chosen = (l, rate);
        }
    }
    let test_ids = tr.split.test.clone();
    let (rate, n, ent_safe, ent_nm) = hit_rate(tr, &test_ids, chosen.0);

    // Identities on a real heatmap.
    let cfg = tr.model.config().clone();
    let set = SegmentSet::from_clips(&tr.recs, &test_ids, &SegmentationPolicy::default(), &tr.corpus_source).unwrap();
    let first_nm = set.samples.iter().position(|s| s.segment.label == Label::NearMiss).unwrap();
    let pair = set.load(first_nm, &cfg, 0.5, &Transform::Native, 0).unwrap();
    let heat = grad_cam(&mut tr.model, &pair, Label::NearMiss, chosen.0).unwrap();
    let a = heat.frame(heat.argmax().0).to_vec();
    let cc_self = pearson(&a, &a);
    let (h, w) = (heat.height, heat.width);
    let self_report = SaliencyMap::from_raw(h, w, a.clone(), "self")
        .ok()
        .map(|sal| compare_maps(&a, h, w, &sal, Pathway::Fast, 0.2));
    let left: Vec<f64> = (0..h * w).map(|i| if i % w < w / 2 { 1.0 } else { 0.0 }).collect();
    let right: Vec<f64> = left.iter().map(|v| 1.0 - v).collect();
    let iou_disjoint = top_fraction_iou(&left, &right, 0.2);
    let identities = cc_self == Some(1.0) && iou_disjoint == 0.0;
    r.line(
        8,
        "explanation localization",
        rate >= 0.70 && identities,
        format!(
            "{} (chosen on validation, {:.2}%) argmax inside the intruder box on {:.2}% of {n} near-miss test segments (need 70%); CC(a,a) = {:?}, disjoint IoU = {iou_disjoint}",
            chosen.0.name(),
            100.0 * chosen.1,
            100.0 * rate,
            cc_self
        ),
        t,
    );
    if let Some(rep) = self_report {
        r.info(8, format!("compare_maps(a, normalized a): CC {:.17}, IoU {}", rep.pearson_cc, rep.iou_at_threshold));
    }
    r.info(8, format!("mean spatial entropy of {}: safe {ent_safe:.4}, near-miss {ent_nm:.4} nats", chosen.0.name()));
}

const PIPELINE: &str = r#"
[synth]
n = 24
resolution = [32, 32]
[data.jitter]
short_side = [32, 40]
crop = 32
[model]
backbone_depth = 18
base_width = 8
[train]
t_max = 4
warmup_epochs = 1
max_epochs = 3
batch_size = 4
lr_max = 0.02
warmup_start = 0.002
"#;

fn pipeline_run(dir: &Path) -> [Vec<u8>; 4] {
    let p = dir.join("run.toml");
    fs::write(&p, PIPELINE).unwrap();
    let out = dir.join("out");
    let cfg = load_config(Some(&p), &[], Some(out.to_str().unwrap())).unwrap();
    for c in [Command::Synth, Command::Prepare, Command::Train, Command::Eval] {
        dispatch(c, &cfg).unwrap();
    }
    ["curve.jsonl", "val.jsonl", "eval/metrics.json", "eval/metrics.txt"].map(|f| fs::read(out.join(f)).unwrap())
}

fn reproducibility(r: &mut Report) {
    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_run(a.path());
    let second = pipeline_run(b.path());
    let same = first == second;
    r.line(
        9,
        "pipeline reproducibility",
        same,
        format!(
            "two synth/prepare/train/eval runs: curve, validation curve and metrics {}; curve {} bytes",
            if same { "byte-identical" } else { "differ" },
            first[0].len()
        ),
        t,
    );
}

fn main() {
    let only: Option<HashSet<usize>> = std::env::var("NEARMISS_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |i: usize| only.as_ref().is_none_or(|s| s.contains(&i));
    let mut r = Report { failures: Vec::new() };
    if want(1) {
        metrics_reproduction(&mut r);
    }
    if want(2) {
        table_deltas(&mut r);
    }
    if want(3) {
        schedule(&mut r);
    }
    if want(4) {
        splits(&mut r);
    }
    if want(5) {
        architecture(&mut r);
    }
    if want(6) {
        numerics(&mut r);
    }
    if want(7) || want(8) {
        let mut tr = learnability(&mut r);
        if want(8) {
            localization(&mut r, &mut tr);
        }
    }
    if want(9) {
        reproducibility(&mut r);
    }
    if r.failures.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {:?}", r.failures);
        if std::env::var("NEARMISS_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
            std::process::exit(1);
        }
    }
}
