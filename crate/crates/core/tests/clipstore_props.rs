use std::collections::HashSet;

use nearmiss_core::clipstore::*;
use nearmiss_core::frames::FrameVolume;
use nearmiss_core::slowfast::PathwayConfig;
use proptest::prelude::*;

fn clip(id: &str, fps: f64, dur: f64) -> ClipRecord {
    ClipRecord::new(id, format!("clips/{id}"), fps, dur, Origin::Synthetic, Some(10.0)).unwrap()
}

fn clips(n: usize) -> Vec<ClipRecord> {
    (0..n).map(|i| clip(&format!("c{i:04}"), 30.0, 15.0)).collect()
}

fn cfg(alpha: usize, slow_frames: usize) -> PathwayConfig {
    PathwayConfig {
        alpha,
        slow_frames,
        ..PathwayConfig::default()
    }
}

#[test]
fn uniform_centre_indices_at_30_fps() {
    let c = clip("a", 30.0, 15.0);
    let segs = segment_clip(&c, &SegmentationPolicy::default()).unwrap();
    let safe = &segs[0];
    assert_eq!(safe.label, Label::SafeDriving);
    assert_eq!(safe.frame_indices.len(), 150);
    let idx = sample_indices(safe, &cfg(4, 2), 0.5).unwrap();
    assert_eq!(idx.fast, vec![9, 28, 46, 65, 84, 103, 121, 140]);
    assert_eq!(idx.slow, vec![9, 84]);
}

#[test]
fn unit_alpha_gives_identical_pathways() {
    let c = clip("a", 30.0, 15.0);
    let seg = &segment_clip(&c, &SegmentationPolicy::default()).unwrap()[1];
    let idx = sample_indices(seg, &cfg(1, 4), 0.5).unwrap();
    assert_eq!(idx.fast, idx.slow);
    assert_eq!(cfg(4, 2).fast_frames(), 8);
}

#[test]
fn short_segment_is_rejected_with_minimum() {
    let c = clip("a", 1.0, 15.0);
    let seg = &segment_clip(&c, &SegmentationPolicy::default()).unwrap()[0];
    let err = sample_indices(seg, &cfg(4, 2), 0.5).unwrap_err().to_string();
    assert!(err.contains("at least 8"), "{err}");
}

#[test]
fn default_policy_segments_and_exclusion() {
    let p = SegmentationPolicy::default();
    assert_eq!(p.region(12.0), Region::Excluded);
    assert_eq!(p.region(4.999), Region::Safe);
    assert_eq!(p.region(5.0), Region::NearMiss);
    assert_eq!(p.region(10.0), Region::NearMiss);
    let segs = segment_clip(&clip("a", 30.0, 15.0), &p).unwrap();
    assert_eq!(segs.len(), 2);
    assert_eq!(segs[0].window.to_string(), "[0, 5)");
    assert_eq!(segs[1].window.to_string(), "[5, 10]");
    let short = ClipRecord::new("b", "clips/b", 30.0, 8.0, Origin::Real, Some(6.0)).unwrap();
    assert!(segment_clip(&short, &p)
        .unwrap_err()
        .to_string()
        .contains("[5, 10]"));
}

#[test]
fn paper_split_sizes() {
    assert_eq!(make_splits(&clips(287), [6.0, 2.0, 2.0], 0).unwrap().sizes(), [172, 57, 58]);
    assert_eq!(make_splits(&clips(10), [6.0, 2.0, 2.0], 0).unwrap().sizes(), [6, 2, 2]);
    assert!(make_splits(&clips(2), [6.0, 2.0, 2.0], 0).is_err());
}

#[test]
fn group_integrity_over_1000_seeds() {
    let all = clips(287);
    let ids: HashSet<&str> = all.iter().map(|c| c.clip_id.as_str()).collect();
    for seed in 0..1000 {
        let s = make_splits(&all, [6.0, 2.0, 2.0], seed).unwrap();
        let mut seen = HashSet::new();
        for part in [SplitPart::Train, SplitPart::Validation, SplitPart::Test] {
            for id in s.part(part) {
                assert!(seen.insert(id.as_str()), "seed {seed}: {id} in two splits");
            }
        }
        assert_eq!(seen, ids);
    }
}

#[test]
fn split_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("split.json");
    let s = make_splits(&clips(20), [6.0, 2.0, 2.0], 7).unwrap();
    s.save(&p).unwrap();
    assert_eq!(DatasetSplit::load(&p).unwrap(), s);
}

#[test]
fn jitter_degenerate_range_is_pure_resize() {
    let v = FrameVolume::zeros(2, 240, 320, 3);
    let out = scale_jitter(
        &v,
        &JitterConfig {
            short_side: [224, 224],
            crop: 224,
        },
        3,
    )
    .unwrap();
    assert_eq!((out.height(), out.width()), (224, 224));
    let cfg = JitterConfig {
        short_side: [120, 160],
        crop: 130,
    };
    assert!(cfg.validate().is_err(), "crop larger than the low end");
}

#[test]
fn jitter_output_size_over_100_seeds() {
    let v = FrameVolume::new(
        1,
        60,
        80,
        3,
        (0..60 * 80 * 3).map(|i| (i % 97) as f32 / 97.0).collect(),
    )
    .unwrap();
    let cfg = JitterConfig {
        short_side: [64, 80],
        crop: 56,
    };
    for seed in 0..100 {
        let a = scale_jitter(&v, &cfg, seed).unwrap();
        assert_eq!((a.height(), a.width(), a.frames()), (56, 56, 1));
        assert_eq!(a, scale_jitter(&v, &cfg, seed).unwrap());
    }
}

proptest! {
    #[test]
    fn segmentation_is_total(t in 0.0f64..15.0) {
        let p = SegmentationPolicy::default();
        let r = p.region(t);
        let in_safe = p.safe_window.contains(t);
        let in_nm = p.nearmiss_window.contains(t);
        prop_assert!(!(in_safe && in_nm));
        prop_assert_eq!(r == Region::Safe, in_safe);
        prop_assert_eq!(r == Region::NearMiss, in_nm);
        prop_assert_eq!(r == Region::Excluded, !in_safe && !in_nm);
    }

    #[test]
    fn segment_frames_lie_inside_window(fps in 8.0f64..60.0, dur in 10.0f64..20.0) {
        let c = clip("x", fps, dur);
        for s in segment_clip(&c, &SegmentationPolicy::default()).unwrap() {
            for &i in &s.frame_indices {
                prop_assert!(s.window.contains(c.frame_time(i)), "{} at {}", i, c.frame_time(i));
            }
        }
    }

    #[test]
    fn splits_are_deterministic_partitions(n in 3usize..200, seed: u64, r0 in 1u32..10, r1 in 1u32..10, r2 in 1u32..10) {
        let mut all = clips(n);
        let ratio = [r0 as f64, r1 as f64, r2 as f64];
        let a = make_splits(&all, ratio, seed).unwrap();
        all.reverse();
        let b = make_splits(&all, ratio, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let total: usize = a.sizes().iter().sum();
        prop_assert_eq!(total, n);
        let u: HashSet<&String> = a.train.iter().chain(&a.validation).chain(&a.test).collect();
        prop_assert_eq!(u.len(), n);
    }

    #[test]
    fn frame_count_law(alpha in 1usize..6, slow in 1usize..5, offset in 0.0f64..1.0) {
        let c = clip("x", 30.0, 15.0);
        let cfg = cfg(alpha, slow);
        for s in segment_clip(&c, &SegmentationPolicy::default()).unwrap() {
            let idx = sample_indices(&s, &cfg, offset).unwrap();
            prop_assert_eq!(idx.fast.len(), alpha * idx.slow.len());
            let fast: HashSet<_> = idx.fast.iter().collect();
            prop_assert!(idx.slow.iter().all(|i| fast.contains(i)));
            prop_assert!(idx.fast.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.fast.iter().all(|i| s.frame_indices.contains(i)));
        }
    }
}
