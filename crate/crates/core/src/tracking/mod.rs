//! Tracking-by-detection in 3D: a constant-velocity Kalman filter per
//! track, Hungarian association on box affinity, and a hits/age lifecycle.

mod kalman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_matching;
use crate::geometry::{iou_3d, iou_bev, Box3D};

pub use kalman::{kalman_predict, kalman_update, TrackState, STATE_DIM};

/// Per track id, the `(frame, box)` samples in increasing frame order.
pub type TrajectorySet = BTreeMap<u64, Vec<(usize, Box3D)>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMetric {
    Iou3d,
    IouBev,
    /// Ground-plane center distance; the threshold is in meters.
    CenterDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub metric: AssociationMetric,
    /// Minimum IoU, or maximum distance for [`AssociationMetric::CenterDistance`].
    pub threshold: f64,
    pub min_hits: u32,
    pub max_age: u32,
    pub initial_variance: f64,
    pub initial_velocity_variance: f64,
    pub process_noise: f64,
    pub process_velocity_noise: f64,
    pub measurement_noise: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            metric: AssociationMetric::Iou3d,
            threshold: 0.01,
            min_hits: 3,
            max_age: 2,
            initial_variance: 10.0,
            initial_velocity_variance: 10_000.0,
            process_noise: 1.0,
            process_velocity_noise: 0.01,
            measurement_noise: 1.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_hits < 1 {
            return Err("min_hits must be at least 1".into());
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err("association threshold must be positive".into());
        }
        for (name, v) in [
            ("initial_variance", self.initial_variance),
            ("initial_velocity_variance", self.initial_velocity_variance),
            ("process_noise", self.process_noise),
            ("process_velocity_noise", self.process_velocity_noise),
            ("measurement_noise", self.measurement_noise),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Affinity used for association; `None` when the pair may not match.
    pub fn affinity(&self, a: &Box3D, b: &Box3D) -> Option<f64> {
        if a.class != b.class {
            return None;
        }
        let value = match self.metric {
            AssociationMetric::Iou3d => iou_3d(a, b),
            AssociationMetric::IouBev => iou_bev(a, b),
            AssociationMetric::CenterDistance => self.threshold - (a.center.xy() - b.center.xy()).norm(),
        };
        Some(value)
    }

    fn passes(&self, affinity: f64) -> bool {
        match self.metric {
            AssociationMetric::CenterDistance => affinity >= 0.0,
            _ => affinity >= self.threshold,
        }
    }
}

/// Result of [`associate`]: index pairs `(track, detection)` and leftovers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Optimal one-to-one assignment of detections to predicted tracks.
///
/// Maximizes the total affinity over same-class pairs, then drops pairs
/// that fail the threshold. For the distance metric the affinity is
/// `threshold − distance`.
pub fn associate(tracks: &[TrackState], detections: &[Box3D], cfg: &TrackerConfig) -> Association {
    let boxes: Vec<Box3D> = tracks.iter().map(TrackState::to_box).collect();
    let weights: Vec<Vec<Option<f64>>> = boxes
        .iter()
        .map(|t| detections.iter().map(|d| cfg.affinity(t, d)).collect())
        .collect();
    let matches: Vec<(usize, usize)> = max_weight_matching(&weights)
        .into_iter()
        .filter(|&(i, j)| weights[i][j].is_some_and(|w| cfg.passes(w)))
        .collect();
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    for &(i, j) in &matches {
        track_used[i] = true;
        det_used[j] = true;
    }
    Association {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&j| !det_used[j]).collect(),
    }
}

/// Online multi-object tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    frame_dt: f64,
    frame: usize,
    next_id: u64,
    tracks: Vec<TrackState>,
    /// Boxes of live or finished tracks at the frames they were updated.
    history: BTreeMap<u64, Vec<(usize, Box3D)>>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, frame_dt: f64) -> Result<Self, String> {
        cfg.validate()?;
        if !(frame_dt > 0.0) {
            return Err("frame_dt must be positive".into());
        }
        Ok(Self { cfg, frame_dt, frame: 0, next_id: 0, tracks: Vec::new(), history: BTreeMap::new() })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Processes one frame of detections; returns the confirmed tracks
    /// updated in this frame.
    pub fn step(&mut self, detections: &[Box3D]) -> Vec<Box3D> {
        if self.frame > 0 {
            for t in &mut self.tracks {
                *t = kalman_predict(t, self.frame_dt, &self.cfg);
            }
        }
        let assoc = associate(&self.tracks, detections, &self.cfg);
        let mut touched = Vec::new();
        for &(i, j) in &assoc.matches {
            self.tracks[i] = kalman_update(&self.tracks[i], &detections[j], &self.cfg);
            self.tracks[i].score = detections[j].score;
            touched.push(i);
        }
        for &j in &assoc.unmatched_detections {
            self.tracks.push(TrackState::from_detection(&detections[j], self.next_id, &self.cfg));
            self.next_id += 1;
            touched.push(self.tracks.len() - 1);
        }
        let mut confirmed = Vec::new();
        for &i in &touched {
            let t = &self.tracks[i];
            let b = t.to_box().with_track_id(t.track_id);
            self.history.entry(t.track_id).or_default().push((self.frame, b));
            if t.hits >= self.cfg.min_hits {
                confirmed.push(b);
            }
        }
        let max_age = self.cfg.max_age;
        self.tracks.retain(|t| t.age_since_update <= max_age);
        self.frame += 1;
        confirmed.sort_by_key(|b| b.track_id);
        confirmed
    }

    /// Trajectories of every track that reached `min_hits`, including the
    /// frames before it was confirmed.
    pub fn finish(self) -> TrajectorySet {
        let min_hits = self.cfg.min_hits as usize;
        self.history.into_iter().filter(|(_, samples)| samples.len() >= min_hits).collect()
    }
}

/// Runs a [`Tracker`] over a whole sequence.
pub fn track_sequence(detections_per_frame: &[Vec<Box3D>], cfg: &TrackerConfig, frame_dt: f64) -> Result<TrajectorySet, String> {
    let mut tracker = Tracker::new(cfg.clone(), frame_dt)?;
    for dets in detections_per_frame {
        tracker.step(dets);
    }
    Ok(tracker.finish())
}
