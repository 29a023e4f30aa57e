use serde::{Deserialize, Serialize};

use super::saliency::{resample, SaliencyMap};
use crate::slowfast::Pathway;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub pathway: Pathway,
    /// Pearson correlation over cells, 0 when undefined.
    pub pearson_cc: f64,
    /// False when either map has zero variance.
    pub cc_defined: bool,
    pub iou_at_threshold: f64,
    /// Fraction of cells forming each map's top region.
    pub threshold: f64,
}

/// Pearson correlation, or `None` when a map has zero variance (up to
/// rounding of the mean). Symmetric bit-for-bit in its arguments.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb, mut sa, mut sb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
        sa += x * x;
        sb += y * y;
    }
    if va <= 1e-20 * sa || vb <= 1e-20 * sb {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

fn top_cells(m: &[f64], q: f64) -> Vec<bool> {
    let k = ((q * m.len() as f64).ceil() as usize).clamp(1, m.len());
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&i, &j| m[j].total_cmp(&m[i]).then(i.cmp(&j)));
    let mut mask = vec![false; m.len()];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

/// IoU of the top-`q` fraction of cells of each map (ties by scan order).
pub fn top_fraction_iou(a: &[f64], b: &[f64], q: f64) -> f64 {
    let (ma, mb) = (top_cells(a, q), top_cells(b, q));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    inter as f64 / union as f64
}

/// Compare one heatmap frame (`h × w`) with a saliency map. Both are
/// resampled bilinearly to the larger of the two resolutions.
pub fn compare_maps(
    heat: &[f64],
    h: usize,
    w: usize,
    sal: &SaliencyMap,
    pathway: Pathway,
    threshold: f64,
) -> OverlapReport {
    let (oh, ow) = (h.max(sal.height), w.max(sal.width));
    let a = resample(heat, h, w, oh, ow);
    let b = sal.resampled(oh, ow);
    let cc = pearson(&a, &b);
    OverlapReport {
        pathway,
        pearson_cc: cc.unwrap_or(0.0),
        cc_defined: cc.is_some(),
        iou_at_threshold: top_fraction_iou(&a, &b, threshold),
        threshold,
    }
}

/// Shannon entropy (nats) of a non-negative map treated as a distribution;
/// an all-zero map counts as uniform.
pub fn spatial_entropy(m: &[f64]) -> f64 {
    let sum: f64 = m.iter().sum();
    if sum <= 0.0 {
        return (m.len() as f64).ln();
    }
    -m.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / sum;
            p * p.ln()
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::gaussian_gaze;

    #[test]
    fn identical_maps() {
        let g = gaussian_gaze(8, 8, (0.3, 0.7), 0.15);
        let r = compare_maps(&g.data, 8, 8, &g, Pathway::Fast, 0.2);
        assert_eq!(r.pearson_cc, 1.0);
        assert_eq!(r.iou_at_threshold, 1.0);
    }

    #[test]
    fn negation_is_perfectly_anticorrelated() {
        let g = gaussian_gaze(8, 8, (0.3, 0.7), 0.15);
        let max = g.data.iter().cloned().fold(0.0, f64::max);
        let neg: Vec<f64> = g.data.iter().map(|v| max - v).collect();
        assert!((pearson(&g.data, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_top_regions() {
        let mut a = vec![0.0; 10];
        let mut b = vec![0.0; 10];
        a[0] = 1.0;
        a[1] = 1.0;
        b[8] = 1.0;
        b[9] = 1.0;
        assert_eq!(top_fraction_iou(&a, &b, 0.2), 0.0);
    }

    #[test]
    fn flat_map_flags_cc() {
        let g = gaussian_gaze(4, 4, (0.5, 0.5), 0.2);
        let r = compare_maps(&[0.5; 16], 4, 4, &g, Pathway::Slow, 0.2);
        assert!(!r.cc_defined);
        assert_eq!(r.pearson_cc, 0.0);
        assert!((0.0..=1.0).contains(&r.iou_at_threshold));
    }

    #[test]
    fn entropy_is_lower_for_peaked_maps() {
        let mut delta = vec![0.0; 64];
        delta[5] = 1.0;
        assert_eq!(spatial_entropy(&delta), 0.0);
        assert!((spatial_entropy(&[1.0; 64]) - 64f64.ln()).abs() < 1e-12);
        assert_eq!(spatial_entropy(&[0.0; 64]), 64f64.ln());
    }
}
