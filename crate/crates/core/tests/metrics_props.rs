use nearmiss_core::clipstore::Label;
use nearmiss_core::metrics::*;
use nearmiss_core::Error;
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 0.005
}

#[test]
fn fixture_matrix_scores() {
    let r = compute_metrics(&ConfusionMatrix::new(30, 24, 12, 42)).unwrap();
    let [a, rc, p, f] = r.rounded();
    assert!(close(a, 66.67), "{a}");
    assert!(close(rc, 55.56), "{rc}");
    assert!(close(p, 71.43), "{p}");
    assert!(close(f, 62.50), "{f}");
    assert!(r.flags.is_empty());
    let text = r.to_text();
    assert!(text.contains("66.67") && text.contains("62.50"));
}

#[test]
fn perfect_classifier() {
    let r = compute_metrics(&ConfusionMatrix::new(10, 0, 0, 10)).unwrap();
    assert_eq!(r.rounded(), [100.0; 4]);
    assert!(r.flags.is_empty());
}

#[test]
fn zero_denominators_are_flagged() {
    let r = compute_metrics(&ConfusionMatrix::new(0, 0, 5, 5)).unwrap();
    assert_eq!(r.precision, 0.0);
    assert_eq!(r.recall, 0.0);
    assert_eq!(r.f1, 0.0);
    assert_eq!(r.accuracy, 50.0);
    // tp + fp = 5 > 0, so precision is defined and zero here.
    assert!(!r.flags.contains(&MetricFlag::UndefinedPrecision));
    assert!(r.flags.contains(&MetricFlag::UndefinedRecall));
    assert!(r.flags.contains(&MetricFlag::UndefinedF1));

    let r = compute_metrics(&ConfusionMatrix::new(0, 5, 0, 5)).unwrap();
    assert!(r.flags.contains(&MetricFlag::UndefinedPrecision));
    assert!(r.flags.contains(&MetricFlag::UndefinedF1));
    assert!(r.to_text().contains("undefined_precision"));

    assert!(compute_metrics(&ConfusionMatrix::default()).is_err());
}

#[test]
fn confusion_examples() {
    use Label::*;
    let labels = [NearMiss, SafeDriving, NearMiss, NearMiss, SafeDriving, SafeDriving, NearMiss, SafeDriving, NearMiss, SafeDriving];
    let cm = confusion(&labels, &labels).unwrap();
    assert_eq!((cm.fn_, cm.fp), (0, 0));
    assert_eq!((cm.tp, cm.tn), (5, 5));

    let cm = confusion(&[NearMiss; 5], &[SafeDriving; 5]).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(0, 0, 5, 0));

    assert!(matches!(confusion(&[NearMiss; 3], &[NearMiss; 4]), Err(Error::Invalid(_))));
    assert!(confusion(&[], &[]).is_err());
}

#[test]
fn deltas_against_video_only_reference() {
    let ours = compute_metrics(&ConfusionMatrix::new(30, 24, 12, 42)).unwrap();
    let table = improvement_table(&ours, "SlowFast", &published_baselines(), "NTT (V)").unwrap();
    let row = table.rows.last().unwrap();
    assert!(!row.baseline);
    assert_eq!(row.deltas[0], Some(26.88));
    assert_eq!(row.deltas[1], Some(12.43));
    assert_eq!(row.deltas[2], Some(19.11));
    // The reference has no accuracy cell.
    assert_eq!(row.deltas[3], None);

    let text = table.to_text();
    assert!(text.contains("71.43 (26.88\u{2191})"), "{text}");
    assert!(text.contains("55.56 (12.43\u{2191})"));
    assert!(text.contains("62.50 (19.11\u{2191})"));
    let ntt = text.lines().find(|l| l.starts_with("NTT *1 (V")).unwrap();
    assert!(ntt.trim_end().ends_with('-'), "{ntt}");
}

#[test]
fn negative_deltas_point_down() {
    let ours = compute_metrics(&ConfusionMatrix::new(1, 9, 9, 1)).unwrap();
    let table = improvement_table(&ours, "ours", &published_baselines(), "SVM (VSO)").unwrap();
    let row = table.rows.last().unwrap();
    assert!(row.deltas.iter().all(|d| d.unwrap() < 0.0));
    assert!(table.to_text().contains('\u{2193}'));
}

#[test]
fn unknown_reference_is_rejected() {
    let ours = compute_metrics(&ConfusionMatrix::new(1, 1, 1, 1)).unwrap();
    let err = improvement_table(&ours, "ours", &published_baselines(), "NTT").unwrap_err();
    assert!(matches!(err, Error::NotFound(_)));
}

#[test]
fn half_up_rounding() {
    assert_eq!(round2(0.125), 0.13);
    assert_eq!(round2(66.666), 66.67);
    assert_eq!(round2(-1.005), -1.01);
}

fn counts() -> impl Strategy<Value = (u64, u64, u64, u64)> {
    (0u64..60, 0u64..60, 0u64..60, 0u64..60).prop_filter("non-empty", |c| c.0 + c.1 + c.2 + c.3 > 0)
}

proptest! {
    #[test]
    fn identities_hold((tp, fn_, fp, tn) in counts()) {
        let r = compute_metrics(&ConfusionMatrix::new(tp, fn_, fp, tn)).unwrap();
        let total = (tp + fn_ + fp + tn) as f64;
        prop_assert!((r.accuracy * total / 100.0 - (tp + tn) as f64).abs() < 1e-9);
        if tp + fp > 0 {
            prop_assert!((r.precision * (tp + fp) as f64 / 100.0 - tp as f64).abs() < 1e-9);
        }
        if tp + fn_ > 0 {
            prop_assert!((r.recall * (tp + fn_) as f64 / 100.0 - tp as f64).abs() < 1e-9);
        }
        if r.precision > 0.0 && r.recall > 0.0 {
            let (p, q) = (r.precision, r.recall);
            prop_assert!((r.f1 - 2.0 * p * q / (p + q)).abs() < 1e-9);
            prop_assert!(r.f1 >= p.min(q) - 1e-9 && r.f1 <= p.max(q) + 1e-9);
        }
    }

    #[test]
    fn scale_free((tp, fn_, fp, tn) in counts(), k in 1u64..20) {
        let a = compute_metrics(&ConfusionMatrix::new(tp, fn_, fp, tn)).unwrap();
        let b = compute_metrics(&ConfusionMatrix::new(k * tp, k * fn_, k * fp, k * tn)).unwrap();
        for (x, y) in [(a.accuracy, b.accuracy), (a.precision, b.precision), (a.recall, b.recall), (a.f1, b.f1)] {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(a.flags, b.flags);
    }

    #[test]
    fn swapping_the_positive_class((tp, fn_, fp, tn) in counts()) {
        let cm = ConfusionMatrix::new(tp, fn_, fp, tn);
        let s = cm.swap_positive();
        prop_assert_eq!(s, ConfusionMatrix::new(tn, fp, fn_, tp));
        prop_assert_eq!(s.swap_positive(), cm);
        let a = compute_metrics(&cm).unwrap();
        let b = compute_metrics(&s).unwrap();
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-9);
        // With safe driving positive, precision becomes the negative predictive
        // value and recall the specificity of the original matrix.
        if tn + fn_ > 0 {
            prop_assert!((b.precision - 100.0 * tn as f64 / (tn + fn_) as f64).abs() < 1e-9);
        }
        if tn + fp > 0 {
            prop_assert!((b.recall - 100.0 * tn as f64 / (tn + fp) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn exchanging_predictions_and_labels_swaps_precision_and_recall(
        pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..80)
    ) {
        let lab = |b: bool| if b { Label::NearMiss } else { Label::SafeDriving };
        let preds: Vec<Label> = pairs.iter().map(|p| lab(p.0)).collect();
        let labels: Vec<Label> = pairs.iter().map(|p| lab(p.1)).collect();
        let a = compute_metrics(&confusion(&preds, &labels).unwrap()).unwrap();
        let b = compute_metrics(&confusion(&labels, &preds).unwrap()).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn counts_partition_the_samples(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..80)) {
        let lab = |b: bool| if b { Label::NearMiss } else { Label::SafeDriving };
        let preds: Vec<Label> = pairs.iter().map(|p| lab(p.0)).collect();
        let labels: Vec<Label> = pairs.iter().map(|p| lab(p.1)).collect();
        let cm = confusion(&preds, &labels).unwrap();
        prop_assert_eq!(cm.total() as usize, pairs.len());
        prop_assert_eq!((cm.tp + cm.fn_) as usize, pairs.iter().filter(|p| p.1).count());
    }
}
