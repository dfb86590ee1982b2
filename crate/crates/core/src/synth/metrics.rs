//! Overlap precision and area-under-curve scores.

use crate::error::{Error, Result};
use crate::geometry::TargetBox;

/// Number of thresholds in the AUC grid over `[0, 1]`.
pub const AUC_GRID_POINTS: usize = 51;

pub fn auc_thresholds() -> Vec<f64> {
    (0..AUC_GRID_POINTS)
        .map(|i| i as f64 / (AUC_GRID_POINTS - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub thresholds: Vec<f64>,
    /// Fraction of frames with IoU at or above each threshold.
    pub op: Vec<f64>,
    pub auc: f64,
    /// One IoU series per evaluated sequence.
    pub ious: Vec<Vec<f64>>,
}

impl MetricsReport {
    /// Overlap precision at an arbitrary threshold over all pooled frames.
    pub fn op_at(&self, threshold: f64) -> f64 {
        overlap_precision(self.ious.iter().flatten().copied(), threshold)
    }

    pub fn frame_count(&self) -> usize {
        self.ious.iter().map(Vec::len).sum()
    }
}

fn overlap_precision(ious: impl Iterator<Item = f64>, threshold: f64) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for v in ious {
        n += 1;
        if v >= threshold {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

pub fn iou_series(pred: &[TargetBox], gt: &[TargetBox]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} predicted boxes for {} ground-truth boxes",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| a.iou(b)).collect())
}

pub fn compute_metrics(pred: &[TargetBox], gt: &[TargetBox], thresholds: &[f64]) -> Result<MetricsReport> {
    compute_corpus_metrics(&[(pred, gt)], thresholds)
}

/// Pools the frames of several sequences.
pub fn compute_corpus_metrics(pairs: &[(&[TargetBox], &[TargetBox])], thresholds: &[f64]) -> Result<MetricsReport> {
    let ious = pairs
        .iter()
        .map(|(p, g)| iou_series(p, g))
        .collect::<Result<Vec<_>>>()?;
    let pooled = || ious.iter().flatten().copied();
    let op = thresholds.iter().map(|&t| overlap_precision(pooled(), t)).collect();
    let grid = auc_thresholds();
    let auc = grid.iter().map(|&t| overlap_precision(pooled(), t)).sum::<f64>() / grid.len() as f64;
    Ok(MetricsReport {
        thresholds: thresholds.to_vec(),
        op,
        auc,
        ious,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(cx: f64, cy: f64, side: f64) -> TargetBox {
        TargetBox::new(cx, cy, side, side)
    }

    #[test]
    fn perfect_tracking() {
        let gt: Vec<_> = (0..10).map(|i| square(10.0 * i as f64, 5.0, 8.0)).collect();
        let r = compute_metrics(&gt, &gt, &auc_thresholds()).unwrap();
        assert!(r.op.iter().all(|&v| v == 1.0));
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn disjoint_boxes_score_one_grid_point() {
        let gt: Vec<_> = (0..5).map(|_| square(0.0, 0.0, 4.0)).collect();
        let pred: Vec<_> = (0..5).map(|_| square(100.0, 0.0, 4.0)).collect();
        let r = compute_metrics(&pred, &gt, &[0.0, 0.5]).unwrap();
        assert_eq!(r.op, vec![1.0, 0.0]);
        assert!((r.auc - 1.0 / 51.0).abs() < 1e-15);
    }

    #[test]
    fn half_width_offset_gives_one_third() {
        let gt = [square(0.0, 0.0, 10.0)];
        let pred = [square(5.0, 0.0, 10.0)];
        let r = compute_metrics(&pred, &gt, &[0.3, 0.34]).unwrap();
        assert!((r.ious[0][0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.op, vec![1.0, 0.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = [square(0.0, 0.0, 1.0)];
        assert!(matches!(compute_metrics(&a, &[], &[0.5]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn op_monotone_and_auc_bounded(
            boxes in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0, 1.0f64..20.0, 0.0f64..50.0, 0.0f64..50.0, 1.0f64..20.0), 1..30)
        ) {
            let pred: Vec<_> = boxes.iter().map(|b| square(b.0, b.1, b.2)).collect();
            let gt: Vec<_> = boxes.iter().map(|b| square(b.3, b.4, b.5)).collect();
            let r = compute_metrics(&pred, &gt, &auc_thresholds()).unwrap();
            prop_assert!(r.ious[0].iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(r.op.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!((0.0..=1.0).contains(&r.auc));
        }
    }
}
