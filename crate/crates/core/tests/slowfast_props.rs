use nearmiss_core::frames::{FramePair, FrameVolume};
use nearmiss_core::nn::{Mode, NonLocal};
use nearmiss_core::slowfast::gradcheck::{gradcheck, random_inputs, randomize_zero_inits, tiny_config, GradCheckOptions};
use nearmiss_core::slowfast::*;
use nearmiss_core::tensor::Tensor;
use nearmiss_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> PathwayConfig {
    PathwayConfig {
        backbone_depth: Depth::R18,
        base_width: 16,
        ..PathwayConfig::default()
    }
}

fn pair(seed: u64, cfg: &PathwayConfig, size: usize) -> FramePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = cfg.fast_frames();
    let data = (0..t * size * size * 3).map(|_| rng.random::<f32>()).collect();
    FramePair::from_fast(FrameVolume::new(t, size, size, 3, data).unwrap(), cfg.alpha).unwrap()
}

/// Direct pairwise embedded-Gaussian attention for one sample.
fn brute_force_nonlocal(nl: &NonLocal, x: &Tensor) -> Tensor {
    let [_, c, t, h, w] = x.shape();
    let p = t * h * w;
    let ci = nl.inner_channels();
    let proj = |conv: &nearmiss_core::nn::Conv3d, cin: usize, cout: usize, v: &dyn Fn(usize, usize) -> f64| {
        let mut out = vec![vec![0.0; cout]; p];
        let b = conv.bias.as_ref().unwrap();
        for (i, row) in out.iter_mut().enumerate() {
            for (o, r) in row.iter_mut().enumerate() {
                *r = b.value[o] + (0..cin).map(|k| conv.weight.value[o * cin + k] * v(k, i)).sum::<f64>();
            }
        }
        out
    };
    let xv = |k: usize, i: usize| x.data()[k * p + i];
    let th = proj(&nl.theta, c, ci, &xv);
    let ph = proj(&nl.phi, c, ci, &xv);
    let g = proj(&nl.g, c, ci, &xv);
    let mut y = vec![vec![0.0; ci]; p];
    for i in 0..p {
        let scores: Vec<f64> = (0..p)
            .map(|j| (0..ci).map(|k| th[i][k] * ph[j][k]).sum::<f64>())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for j in 0..p {
            let a = (scores[j] - m).exp() / z;
            for k in 0..ci {
                y[i][k] += a * g[j][k];
            }
        }
    }
    let yv = |k: usize, i: usize| y[i][k];
    let z = proj(&nl.out, ci, c, &yv);
    Tensor::from_fn(x.shape(), |[_, k, ti, hi, wi]| {
        let i = (ti * h + hi) * w + wi;
        x.data()[k * p + i] + z[i][k]
    })
}

#[test]
fn nonlocal_matches_brute_force_over_50_seeds() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nl = NonLocal::new("nl", 4, &mut rng);
        for conv in [&mut nl.theta, &mut nl.phi, &mut nl.g, &mut nl.out] {
            for v in conv.weight.value.iter_mut().chain(conv.bias.as_mut().unwrap().value.iter_mut()) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        // (T, H, W, C) = (2, 2, 2, 4)
        let x = Tensor::from_fn([1, 4, 2, 2, 2], |_| rng.random_range(-2.0..2.0));
        let got = nl.forward(&x, false).unwrap();
        let want = brute_force_nonlocal(&nl, &x);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn logits_shape_softmax_and_eval_determinism() {
    let cfg = small();
    let mut m = build_slowfast(&cfg, 3).unwrap();
    m.set_mode(Mode::Eval);
    let batch: Vec<FramePair> = (0..3).map(|i| pair(i, &cfg, 32)).collect();
    let a = m.forward(&batch).unwrap();
    assert_eq!((a.len(), a.num_classes()), (3, 2));
    for row in a.softmax() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(a, m.forward(&batch).unwrap());
}

#[test]
fn batch_permutation_permutes_logits() {
    let cfg = small();
    let mut m = build_slowfast(&cfg, 4).unwrap();
    m.set_mode(Mode::Eval);
    let batch: Vec<FramePair> = (0..4).map(|i| pair(10 + i, &cfg, 32)).collect();
    let perm = [2, 0, 3, 1];
    let shuffled: Vec<FramePair> = perm.iter().map(|&i| batch[i].clone()).collect();
    let a = m.forward(&batch).unwrap();
    let b = m.forward(&shuffled).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        for (x, y) in a.rows()[i].iter().zip(&b.rows()[k]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn train_mode_dropout_changes_logits() {
    let cfg = small();
    let mut m = build_slowfast(&cfg, 5).unwrap();
    randomize_zero_inits(&mut m, 1);
    m.set_mode(Mode::Train);
    let batch = vec![pair(1, &cfg, 32), pair(2, &cfg, 32)];
    let a = m.forward(&batch).unwrap();
    let b = m.forward(&batch).unwrap();
    assert_ne!(a, b);
}

#[test]
fn channel_and_temporal_laws_over_config_sweep() {
    for depth in [Depth::R18, Depth::R50] {
        for (alpha, slow_frames) in [(1, 4), (2, 2), (4, 2), (8, 1)] {
            for beta_inv in [2, 4, 8] {
                let cfg = PathwayConfig {
                    alpha,
                    beta_inv,
                    slow_frames,
                    backbone_depth: depth,
                    base_width: 16,
                    nonlocal_stages: vec![],
                    ..PathwayConfig::default()
                };
                let m = build_slowfast(&cfg, 0).unwrap();
                for (s, f) in m.stage_shapes(64, 64).unwrap() {
                    assert_eq!(f[1] * beta_inv, s[1], "{cfg:?}");
                    assert_eq!(f[2], alpha * s[2], "{cfg:?}");
                    assert_eq!((f[3], f[4]), (s[3], s[4]));
                }
            }
        }
    }
}

#[test]
fn indivisible_width_is_rejected() {
    let cfg = PathwayConfig {
        base_width: 12,
        ..small()
    };
    assert!(matches!(build_slowfast(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn shape_inventory_is_a_function_of_config() {
    let cfg = small();
    let a = build_slowfast(&cfg, 1).unwrap().shape_inventory();
    let b = build_slowfast(&cfg, 99).unwrap().shape_inventory();
    assert_eq!(a, b);
    let mut m1 = build_slowfast(&cfg, 7).unwrap();
    let mut m2 = build_slowfast(&cfg, 7).unwrap();
    let (mut v1, mut v2) = (Vec::new(), Vec::new());
    m1.visit_params(&mut |p| v1.push(p.value.clone()));
    m2.visit_params(&mut |p| v2.push(p.value.clone()));
    assert_eq!(v1, v2);
}

#[test]
fn depth_101_block_counts() {
    let mut m = build_slowfast(&PathwayConfig::default(), 0).unwrap();
    let inv = m.shape_inventory();
    for (stage, n) in ["res2", "res3", "res4", "res5"].iter().zip([3, 4, 23, 3]) {
        for pathway in ["slow", "fast"] {
            let prefix = format!("{pathway}.{stage}.block");
            let mut blocks: Vec<&str> = inv
                .iter()
                .filter_map(|(name, _)| name.strip_prefix(&prefix))
                .map(|rest| rest.split('.').next().unwrap())
                .collect();
            blocks.sort();
            blocks.dedup();
            assert_eq!(blocks.len(), n, "{prefix}");
        }
    }
    let stem = inv.iter().find(|(n, _)| n == "fast.stem.conv.weight").unwrap();
    assert_eq!(stem.1[0], 8);
}

#[test]
fn lateral_output_width_is_twice_fast_width() {
    let cfg = small();
    let m = build_slowfast(&cfg, 0).unwrap();
    let shapes = m.stage_shapes(32, 32).unwrap();
    let rows = m.layer_table(32, 32).unwrap();
    let lat0 = rows.iter().find(|r| r.name == "lateral0").unwrap();
    assert_eq!(lat0.output_shape[0], 2 * shapes[0].1[1]);
    assert_eq!(lat0.output_shape[1], shapes[0].0[2]);
}

#[test]
fn frame_count_and_channel_mismatches_are_rejected() {
    let cfg = small();
    let mut m = build_slowfast(&cfg, 0).unwrap();
    let other = PathwayConfig {
        slow_frames: 3,
        ..cfg.clone()
    };
    assert!(matches!(m.forward(&[pair(0, &other, 32)]), Err(Error::Shape(_))));
    let gray = FramePair::from_fast(FrameVolume::zeros(8, 32, 32, 1), 4).unwrap();
    assert!(matches!(m.forward(&[gray]), Err(Error::Shape(_))));
}

#[test]
fn non_finite_input_names_the_layer() {
    let cfg = small();
    let mut m = build_slowfast(&cfg, 0).unwrap();
    let mut xs = Tensor::zeros([1, 3, 2, 32, 32]);
    xs.data_mut()[5] = f64::NAN;
    let xf = Tensor::zeros([1, 3, 8, 32, 32]);
    match m.forward_tensors(&xs, &xf, false) {
        Err(Error::NonFinite { layer }) => assert_eq!(layer, "slow.stem"),
        other => panic!("expected a non-finite fault, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = small();
    let mut m = build_slowfast(&cfg, 8).unwrap();
    randomize_zero_inits(&mut m, 2);
    m.set_input_norm(InputNorm {
        mean: vec![0.1, 0.2, 0.3],
        std: vec![0.5, 0.6, 0.7],
    })
    .unwrap();
    save_checkpoint(&path, &mut m, &CheckpointMeta { epoch: 4, ..Default::default() }).unwrap();
    let mut back = load_checkpoint(&path, Some(&cfg)).unwrap();
    assert_eq!(back.meta.epoch, 4);
    assert_eq!(back.model.input_norm(), m.input_norm());
    m.set_mode(Mode::Eval);
    back.model.set_mode(Mode::Eval);
    let batch = [pair(3, &cfg, 32)];
    assert_eq!(m.forward(&batch).unwrap(), back.model.forward(&batch).unwrap());

    let other = PathwayConfig {
        base_width: 32,
        ..cfg.clone()
    };
    let err = load_checkpoint(&path, Some(&other)).err().unwrap().to_string();
    assert!(err.contains("mismatch"), "{err}");
    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path, None).is_err());
}

#[test]
fn flop_report_counts_both_pathways() {
    let mut m = build_slowfast(&PathwayConfig::default(), 0).unwrap();
    let s = ModelSummary::new(&mut m, 224, 224).unwrap();
    assert!(s.fast_macs > 0 && s.slow_macs > s.fast_macs);
    assert_eq!(s.total_macs, s.slow_macs + s.fast_macs + s.lateral_macs + s.head_macs);
    assert!(s.fast_share > 0.0 && s.fast_share < 0.5);
}

#[test]
fn sampled_gradient_check_on_tiny_model() {
    let cfg = tiny_config();
    let mut m = build_slowfast(&cfg, 1).unwrap();
    randomize_zero_inits(&mut m, 2);
    let (xs, xf) = random_inputs(&cfg, 2, 8, 3);
    let opts = GradCheckOptions {
        step: 1e-6,
        max_entries: Some(3),
        ..Default::default()
    };
    let r = gradcheck(&mut m, &xs, &xf, &[0, 1], &opts).unwrap();
    assert!(r.max_rel_error() < 1e-3, "{:?}", r.worst());
    assert!(r.entries_checked > 100);
}
