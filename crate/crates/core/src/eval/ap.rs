use serde::{Deserialize, Serialize};

use super::{DetectionEvalConfig, EvalError};
use crate::geometry::{Box3D, ObjectClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Recall points 1/40, 2/40, …, 1.
    R40,
    /// Recall points 0, 0.1, …, 1.
    R11,
}

impl Interpolation {
    fn recall_points(&self) -> Vec<f64> {
        match self {
            Interpolation::R40 => (1..=40).map(|j| j as f64 / 40.0).collect(),
            Interpolation::R11 => (0..=10).map(|j| j as f64 / 10.0).collect(),
        }
    }
}

/// `(precision, recall)` after each detection of `class`, in descending
/// score order (stable for equal scores).
///
/// Each detection is matched to the unmatched ground truth of the same
/// class and frame with the highest overlap; it is a true positive when
/// that overlap reaches the class threshold.
pub fn precision_recall_curve(
    detections: &[(usize, Box3D)],
    ground_truth: &[(usize, Box3D)],
    class: ObjectClass,
    cfg: &DetectionEvalConfig,
) -> Result<Vec<(f64, f64)>, EvalError> {
    cfg.validate()?;
    let gt: Vec<&(usize, Box3D)> = ground_truth.iter().filter(|(_, b)| b.class == class).collect();
    if gt.is_empty() {
        return Err(EvalError::NoGroundTruth(class));
    }
    let mut dets: Vec<&(usize, Box3D)> = detections.iter().filter(|(_, b)| b.class == class).collect();
    dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let threshold = cfg.threshold(class);
    let mut used = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(dets.len());
    for (k, (frame, det)) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, (gframe, gbox)) in gt.iter().enumerate() {
            if used[g] || gframe != frame {
                continue;
            }
            let o = cfg.metric.overlap(det, gbox);
            if best.is_none_or(|(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        if let Some((g, o)) = best {
            if o >= threshold {
                used[g] = true;
                tp += 1;
            }
        }
        curve.push((tp as f64 / (k + 1) as f64, tp as f64 / gt.len() as f64));
    }
    Ok(curve)
}

/// Mean over the recall points of the best precision at recall ≥ r.
pub fn interpolated_ap(curve: &[(f64, f64)], interpolation: Interpolation) -> f64 {
    let points = interpolation.recall_points();
    let total: f64 = points
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|(_, rec)| *rec >= r - 1e-12)
                .map(|(p, _)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    total / points.len() as f64
}

/// Average precision for one class.
pub fn compute_ap(
    detections: &[(usize, Box3D)],
    ground_truth: &[(usize, Box3D)],
    class: ObjectClass,
    cfg: &DetectionEvalConfig,
) -> Result<f64, EvalError> {
    let curve = precision_recall_curve(detections, ground_truth, class, cfg)?;
    Ok(interpolated_ap(&curve, cfg.interpolation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn car(x: f64, score: f64) -> Box3D {
        Box3D::new(Point3::new(x, 0.0, 0.8), [4.0, 2.0, 1.6], 0.0, ObjectClass::Car).with_score(score)
    }

    fn cfg() -> DetectionEvalConfig {
        DetectionEvalConfig::default()
    }

    #[test]
    fn single_good_detection() {
        // IoU of boxes shifted 0.4 m along a 4 m length: 3.6 / 4.4 ≈ 0.82.
        let ap = compute_ap(&[(0, car(0.4, 0.9))], &[(0, car(0.0, 1.0))], ObjectClass::Car, &cfg()).unwrap();
        assert!((ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_below_threshold() {
        let ap = compute_ap(&[(0, car(1.5, 0.9)), (0, car(-1.5, 0.8))], &[(0, car(0.0, 1.0))], ObjectClass::Car, &cfg()).unwrap();
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn mixed_ranking() {
        // Scores 0.9 TP, 0.8 FP, 0.7 TP over two ground-truth boxes:
        // precision/recall points (1, 0.5), (0.5, 0.5), (2/3, 1).
        let gt = [(0, car(0.0, 1.0)), (1, car(0.0, 1.0))];
        let dets = [(0, car(0.0, 0.9)), (0, car(20.0, 0.8)), (1, car(0.0, 0.7))];
        let curve = precision_recall_curve(&dets, &gt, ObjectClass::Car, &cfg()).unwrap();
        assert_eq!(curve, vec![(1.0, 0.5), (0.5, 0.5), (2.0 / 3.0, 1.0)]);
        let ap = compute_ap(&dets, &gt, ObjectClass::Car, &cfg()).unwrap();
        let expected = (20.0 * 1.0 + 20.0 * (2.0 / 3.0)) / 40.0;
        assert!((ap - expected).abs() < 1e-12);
        let ap11 = interpolated_ap(&curve, Interpolation::R11);
        assert!((ap11 - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    }

    #[test]
    fn other_class_ignored_and_missing_gt_errors() {
        let mut ped = car(0.0, 0.9);
        ped.class = ObjectClass::Pedestrian;
        let ap = compute_ap(&[(0, ped), (0, car(0.0, 0.5))], &[(0, car(0.0, 1.0))], ObjectClass::Car, &cfg()).unwrap();
        assert_eq!(ap, 1.0);
        assert_eq!(
            compute_ap(&[], &[(0, car(0.0, 1.0))], ObjectClass::Pedestrian, &cfg()),
            Err(EvalError::NoGroundTruth(ObjectClass::Pedestrian))
        );
    }

    #[test]
    fn detection_in_wrong_frame_is_false_positive() {
        let ap = compute_ap(&[(1, car(0.0, 0.9))], &[(0, car(0.0, 1.0))], ObjectClass::Car, &cfg()).unwrap();
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn removing_false_positive_never_lowers_ap() {
        let gt = [(0, car(0.0, 1.0)), (0, car(10.0, 1.0)), (1, car(0.0, 1.0))];
        let dets = vec![(0, car(0.1, 0.9)), (0, car(30.0, 0.85)), (0, car(10.2, 0.6)), (1, car(0.0, 0.3))];
        let with_fp = compute_ap(&dets, &gt, ObjectClass::Car, &cfg()).unwrap();
        let without: Vec<_> = dets.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, d)| *d).collect();
        assert!(compute_ap(&without, &gt, ObjectClass::Car, &cfg()).unwrap() >= with_fp);
    }
}
