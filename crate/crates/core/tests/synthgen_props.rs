use nearmiss_core::clipstore::{read_manifest, FrameDir, FrameSource, Label, SegmentationPolicy};
use nearmiss_core::synthgen::*;

fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn same_spec_renders_identical_frames() {
    let spec = SynthClipSpec::draw(11, Label::NearMiss, (48, 64), 8.0, 15.0);
    let (a, ga) = generate_clip(&spec).unwrap();
    let (b, gb) = generate_clip(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    assert_eq!(a.frames(), 120);
}

#[test]
fn bboxes_appear_only_after_onset() {
    let mut spec = SynthClipSpec::draw(5, Label::NearMiss, (64, 64), 8.0, 15.0);
    spec.intruder.as_mut().unwrap().onset_s = 6.0;
    spec.validate().unwrap();
    let (_, gt) = generate_clip(&spec).unwrap();
    assert!(!gt.intruder_bboxes.is_empty());
    for fb in &gt.intruder_bboxes {
        assert!(fb.frame as f64 / spec.fps >= 6.0, "box at frame {}", fb.frame);
        assert!(fb.bbox.x1 <= 64 && fb.bbox.y1 <= 64);
    }
}

#[test]
fn safe_clips_have_no_boxes_and_intruders_are_rejected() {
    let spec = SynthClipSpec::draw(9, Label::SafeDriving, (32, 32), 8.0, 15.0);
    assert!(spec.intruder.is_none());
    assert!(generate_clip(&spec).unwrap().1.intruder_bboxes.is_empty());

    let mut bad = SynthClipSpec::draw(9, Label::NearMiss, (32, 32), 8.0, 15.0);
    bad.intruder.as_mut().unwrap().onset_s = 11.0;
    assert!(bad.validate().is_err());
    let mut huge = SynthClipSpec::draw(9, Label::NearMiss, (32, 32), 8.0, 15.0);
    huge.intruder.as_mut().unwrap().bbox_size = (40, 40);
    assert!(huge.validate().is_err());
    let mut slow = SynthClipSpec::draw(9, Label::NearMiss, (32, 32), 8.0, 15.0);
    let drift = slow.background.drift_px_per_s.abs();
    slow.intruder.as_mut().unwrap().speed_px_per_s = 4.0 * drift;
    assert!(slow.validate().is_err());
}

#[test]
fn intruder_outpaces_drift() {
    for seed in 0..200 {
        let s = SynthClipSpec::draw(seed, Label::NearMiss, (112, 112), 8.0, 15.0);
        let i = s.intruder.as_ref().unwrap();
        assert!(i.speed_px_per_s >= MIN_SPEED_RATIO * s.background.drift_px_per_s.abs());
        assert!((5.5..=9.0).contains(&i.onset_s));
    }
}

#[test]
fn corpus_counts_and_determinism() {
    let opts = |n, seed| CorpusOptions {
        n,
        master_seed: seed,
        ..CorpusOptions::default()
    };
    let c = generate_corpus(&opts(300, 1)).unwrap();
    let nm = c.entries.iter().filter(|e| e.spec.label == Label::NearMiss).count();
    assert_eq!(nm, 150);
    let c287 = generate_corpus(&opts(287, 1)).unwrap();
    assert_eq!(c287.entries.iter().filter(|e| e.spec.label == Label::NearMiss).count(), 144);
    assert_eq!(generate_corpus(&opts(287, 1)).unwrap(), c287);
    assert_ne!(generate_corpus(&opts(287, 2)).unwrap(), c287);
    assert!(generate_corpus(&CorpusOptions {
        balance: 1.5,
        ..CorpusOptions::default()
    })
    .is_err());
}

#[test]
fn written_corpus_matches_in_memory_source() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusOptions {
        n: 3,
        resolution: (16, 24),
        ..CorpusOptions::default()
    })
    .unwrap();
    let manifest = write_corpus(dir.path(), &corpus).unwrap();
    let records = read_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 3);
    let mem = SynthSource::new(&corpus).unwrap();
    for r in &records {
        let idx = [0, 40, 119];
        let disk = FrameDir.load(r, &idx).unwrap();
        let gen = mem.load(r, &idx).unwrap();
        for (a, b) in disk.data().iter().zip(gen.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let truth = GroundTruth::load(&dir.path().join("truth").join(format!("{}.json", r.clip_id))).unwrap();
        assert_eq!(truth.label == Label::NearMiss, r.event_time_s.is_some());
    }
}

#[test]
fn motion_energy_separates_classes() {
    let corpus = generate_corpus(&CorpusOptions::default()).unwrap();
    let policy = SegmentationPolicy::default();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for e in &corpus.entries {
        let (frames, _) = generate_clip(&e.spec).unwrap();
        let s = motion_energy_score(&frames, e.spec.fps, &policy);
        match e.spec.label {
            Label::NearMiss => pos.push(s),
            Label::SafeDriving => neg.push(s),
        }
    }
    let a = auc(&pos, &neg);
    assert!(a > 0.95, "motion-energy AUC {a}");
}
