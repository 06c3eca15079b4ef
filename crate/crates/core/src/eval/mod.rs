//! Detection average precision and CLEAR multi-object tracking metrics.

mod ap;
mod mot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_3d, iou_bev, Box3D, ObjectClass};

pub use ap::{compute_ap, precision_recall_curve, interpolated_ap, Interpolation};
pub use mot::{compute_clear_mot, MotReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground truth of class {0}")]
    NoGroundTruth(ObjectClass),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    Iou3d,
    IouBev,
}

impl OverlapMetric {
    pub fn overlap(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            OverlapMetric::Iou3d => iou_3d(a, b),
            OverlapMetric::IouBev => iou_bev(a, b),
        }
    }
}

/// Per-class IoU thresholds and interpolation for [`compute_ap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionEvalConfig {
    pub car_threshold: f64,
    pub cyclist_threshold: f64,
    pub pedestrian_threshold: f64,
    pub metric: OverlapMetric,
    pub interpolation: Interpolation,
}

impl Default for DetectionEvalConfig {
    fn default() -> Self {
        Self {
            car_threshold: 0.7,
            cyclist_threshold: 0.5,
            pedestrian_threshold: 0.5,
            metric: OverlapMetric::Iou3d,
            interpolation: Interpolation::R40,
        }
    }
}

impl DetectionEvalConfig {
    /// Same threshold for every class (AP_25 / AP_50 / AP_70 style).
    pub fn uniform(threshold: f64) -> Self {
        Self {
            car_threshold: threshold,
            cyclist_threshold: threshold,
            pedestrian_threshold: threshold,
            ..Self::default()
        }
    }

    pub fn threshold(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.car_threshold,
            ObjectClass::Cyclist => self.cyclist_threshold,
            ObjectClass::Pedestrian => self.pedestrian_threshold,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for class in ObjectClass::ALL {
            let t = self.threshold(class);
            if !(t > 0.0 && t <= 1.0) {
                return Err(EvalError::InvalidConfig(format!("{class} threshold {t} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotMetric {
    Iou3d,
    IouBev,
    /// Ground-plane center distance in meters; MOTP is then a mean distance.
    CenterDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotEvalConfig {
    pub metric: MotMetric,
    /// Minimum IoU, or maximum distance for [`MotMetric::CenterDistance`].
    pub threshold: f64,
    /// Keep last frame's correspondences while they stay valid.
    pub prefer_previous: bool,
}

impl Default for MotEvalConfig {
    fn default() -> Self {
        Self { metric: MotMetric::Iou3d, threshold: 0.25, prefer_previous: true }
    }
}

impl MotEvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = match self.metric {
            MotMetric::CenterDistance => self.threshold > 0.0 && self.threshold.is_finite(),
            _ => self.threshold > 0.0 && self.threshold <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(EvalError::InvalidConfig(format!("threshold {} invalid for {:?}", self.threshold, self.metric)))
        }
    }

    /// Similarity of a pair if it counts as a match: IoU, or distance for
    /// the distance metric. Different classes never match.
    pub fn similarity(&self, gt: &Box3D, hyp: &Box3D) -> Option<f64> {
        if gt.class != hyp.class {
            return None;
        }
        match self.metric {
            MotMetric::Iou3d | MotMetric::IouBev => {
                let iou = if self.metric == MotMetric::Iou3d { iou_3d(gt, hyp) } else { iou_bev(gt, hyp) };
                (iou >= self.threshold).then_some(iou)
            }
            MotMetric::CenterDistance => {
                let d = (gt.center.xy() - hyp.center.xy()).norm();
                (d <= self.threshold).then_some(d)
            }
        }
    }

    /// Quality of a valid pair in [0, 1]: the IoU, or `1 - d / threshold`
    /// for the distance metric.
    pub(crate) fn match_quality(&self, similarity: f64) -> f64 {
        match self.metric {
            MotMetric::CenterDistance => 1.0 - similarity / self.threshold,
            _ => similarity,
        }
    }
}
