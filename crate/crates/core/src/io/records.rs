//! JSON-lines record types and their conversions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{Box3D, ObjectClass, Point3, RigidTransform};
use crate::tracking::TrajectorySet;

fn one() -> f64 {
    1.0
}

fn finite(line: usize, values: &[f64]) -> Result<(), IoError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(IoError::Record { line, message: "non-finite number".into() })
    }
}

fn make_box(line: usize, class: ObjectClass, center: [f64; 3], size: [f64; 3], yaw: f64, score: f64) -> Result<Box3D, IoError> {
    finite(line, &center)?;
    finite(line, &size)?;
    finite(line, &[yaw, score])?;
    let b = Box3D::new(Point3::from(center), size, yaw, class).with_score(score);
    b.validate().map_err(|e| IoError::Record { line, message: e.to_string() })?;
    Ok(b)
}

/// Detection record; with `track_id` set it doubles as an annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub frame: usize,
    pub class: ObjectClass,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    #[serde(default = "one")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

impl BoxRecord {
    pub fn new(frame: usize, b: &Box3D) -> Self {
        Self { frame, class: b.class, center: b.center.coords.into(), size: b.size(), yaw: b.yaw, score: b.score, track_id: b.track_id }
    }

    /// `line` is only used in error messages (1-based record index).
    pub fn to_box(&self, line: usize) -> Result<Box3D, IoError> {
        let b = make_box(line, self.class, self.center, self.size, self.yaw, self.score)?;
        Ok(Box3D { track_id: self.track_id, ..b })
    }
}

/// One record per `(frame, track)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frame: usize,
    pub track_id: u64,
    pub class: ObjectClass,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

/// Node → world transform of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub node_id: u16,
    /// Row-major 3×3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_rmse: Option<f64>,
}

impl CalibrationRecord {
    pub fn new(node_id: u16, t: &RigidTransform) -> Self {
        Self { node_id, rotation: t.rotation_row_major(), translation: (*t.translation()).into(), fitness: None, inlier_rmse: None }
    }
}

/// Per-frame timestamp error of the synchronization simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeErrorRecord {
    pub node: usize,
    pub frame: usize,
    pub true_capture_time_s: f64,
    pub reported_timestamp_ns: u64,
    pub error_s: f64,
}

pub fn boxes_to_records(boxes: &[(usize, Box3D)]) -> Vec<BoxRecord> {
    boxes.iter().map(|(f, b)| BoxRecord::new(*f, b)).collect()
}

pub fn boxes_from_records(records: &[BoxRecord]) -> Result<Vec<(usize, Box3D)>, IoError> {
    records.iter().enumerate().map(|(i, r)| Ok((r.frame, r.to_box(i + 1)?))).collect()
}

/// Records sorted by frame, then track id.
pub fn trajectories_to_records(set: &TrajectorySet) -> Vec<TrajectoryRecord> {
    let mut out: Vec<TrajectoryRecord> = set
        .iter()
        .flat_map(|(&track_id, samples)| {
            samples.iter().map(move |(frame, b)| TrajectoryRecord {
                frame: *frame,
                track_id,
                class: b.class,
                center: b.center.coords.into(),
                size: b.size(),
                yaw: b.yaw,
            })
        })
        .collect();
    out.sort_by_key(|r| (r.frame, r.track_id));
    out
}

/// Groups records by track. A track may appear at most once per frame.
pub fn trajectories_from_records(records: &[TrajectoryRecord]) -> Result<TrajectorySet, IoError> {
    let mut set = TrajectorySet::new();
    for (i, r) in records.iter().enumerate() {
        let b = make_box(i + 1, r.class, r.center, r.size, r.yaw, 1.0)?.with_track_id(r.track_id);
        let samples = set.entry(r.track_id).or_default();
        if samples.iter().any(|(f, _)| *f == r.frame) {
            return Err(IoError::Record { line: i + 1, message: format!("track {} appears twice in frame {}", r.track_id, r.frame) });
        }
        samples.push((r.frame, b));
    }
    for samples in set.values_mut() {
        samples.sort_by_key(|(f, _)| *f);
    }
    Ok(set)
}

pub fn calibration_to_records(extrinsics: &BTreeMap<u16, RigidTransform>) -> Vec<CalibrationRecord> {
    extrinsics.iter().map(|(n, t)| CalibrationRecord::new(*n, t)).collect()
}

pub fn calibration_from_records(records: &[CalibrationRecord]) -> Result<BTreeMap<u16, RigidTransform>, IoError> {
    let mut out = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        finite(i + 1, &r.rotation)?;
        finite(i + 1, &r.translation)?;
        let t = RigidTransform::from_row_major(r.rotation, r.translation).map_err(|e| IoError::Record { line: i + 1, message: e.to_string() })?;
        if out.insert(r.node_id, t).is_some() {
            return Err(IoError::Record { line: i + 1, message: format!("node {} listed twice", r.node_id) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::parse_jsonl;
    use super::*;

    fn car(x: f64) -> Box3D {
        Box3D::new(Point3::new(x, 1.0, 0.8), [4.2, 1.8, 1.6], 0.3, ObjectClass::Car).with_score(0.75)
    }

    #[test]
    fn detection_round_trip() {
        let boxes = vec![(0, car(1.0)), (3, car(-2.5).with_track_id(9))];
        let text = super::super::to_jsonl(&boxes_to_records(&boxes)).unwrap();
        let back = boxes_from_records(&parse_jsonl(text.as_bytes()).unwrap()).unwrap();
        assert_eq!(back, boxes);
    }

    #[test]
    fn unknown_keys_and_defaults() {
        let line = r#"{"frame": 2, "class": "Pedestrian", "center": [0,0,0.9], "size": [0.6,0.6,1.8], "yaw": 0, "extra": "x"}"#;
        let recs: Vec<BoxRecord> = parse_jsonl(line.as_bytes()).unwrap();
        assert_eq!(recs[0].score, 1.0);
        assert_eq!(recs[0].track_id, None);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        let r = BoxRecord { size: [0.0, 1.0, 1.0], ..BoxRecord::new(0, &car(0.0)) };
        assert!(matches!(r.to_box(5), Err(IoError::Record { line: 5, .. })));
    }

    #[test]
    fn trajectory_round_trip_sorted() {
        let mut set = TrajectorySet::new();
        set.insert(2, vec![(0, car(0.0).with_score(1.0).with_track_id(2)), (1, car(1.0).with_score(1.0).with_track_id(2))]);
        set.insert(1, vec![(1, car(5.0).with_score(1.0).with_track_id(1))]);
        let recs = trajectories_to_records(&set);
        let keys: Vec<_> = recs.iter().map(|r| (r.frame, r.track_id)).collect();
        assert_eq!(keys, vec![(0, 2), (1, 1), (1, 2)]);
        assert_eq!(trajectories_from_records(&recs).unwrap(), set);
    }

    #[test]
    fn duplicate_track_frame_is_rejected() {
        let r = TrajectoryRecord { frame: 0, track_id: 1, class: ObjectClass::Car, center: [0.0; 3], size: [1.0; 3], yaw: 0.0 };
        assert!(trajectories_from_records(&[r.clone(), r]).is_err());
    }

    #[test]
    fn calibration_round_trip() {
        let t = RigidTransform::from_euler(0.01, -0.02, 1.2, [3.0, -4.0, 5.0].into());
        let map: BTreeMap<u16, RigidTransform> = [(0, RigidTransform::identity()), (3, t)].into();
        let back = calibration_from_records(&calibration_to_records(&map)).unwrap();
        assert_eq!(back, map);
    }
}
