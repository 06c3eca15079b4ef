//! Early fusion of synchronized views, temporal integration, and late
//! fusion of per-view detections.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::OverlapMetric;
use crate::geometry::{apply_transform, wrap_angle, Box3D, Point3, PointCloud, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("node {0} has no extrinsic")]
    MissingExtrinsic(u16),
    #[error("frame timestamps span {span_ns} ns, beyond the {window_ns} ns sync window")]
    TimestampSkew { span_ns: u64, window_ns: u64 },
    #[error("mean heading of cluster {0} is degenerate")]
    DegenerateYaw(usize),
    #[error("overlap threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
}

pub const DEFAULT_SYNC_WINDOW_NS: u64 = 5_000_000;

/// One synchronized frame per node, with node-to-world extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFrameSet {
    pub frames: BTreeMap<u16, PointCloud>,
    pub extrinsics: BTreeMap<u16, RigidTransform>,
    pub sync_window_ns: u64,
}

impl ViewFrameSet {
    pub fn new(frames: BTreeMap<u16, PointCloud>, extrinsics: BTreeMap<u16, RigidTransform>) -> Self {
        Self { frames, extrinsics, sync_window_ns: DEFAULT_SYNC_WINDOW_NS }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if let Some(node) = self.frames.keys().find(|n| !self.extrinsics.contains_key(n)) {
            return Err(FusionError::MissingExtrinsic(*node));
        }
        let stamps = self.frames.values().map(|f| f.timestamp_ns);
        if let (Some(lo), Some(hi)) = (stamps.clone().min(), stamps.max()) {
            if hi - lo > self.sync_window_ns {
                return Err(FusionError::TimestampSkew { span_ns: hi - lo, window_ns: self.sync_window_ns });
            }
        }
        Ok(())
    }
}

/// Merges all views into the world frame. Points are ordered by node id
/// and then by index, and `point_source` records the node of each point.
/// The result carries the earliest frame timestamp.
pub fn early_fuse(set: &ViewFrameSet) -> Result<PointCloud, FusionError> {
    set.validate()?;
    let mut out = PointCloud::default();
    for (node, frame) in &set.frames {
        let mut world = apply_transform(&set.extrinsics[node], frame);
        world.point_source = vec![*node; world.len()];
        out.extend_from(&world);
    }
    out.timestamp_ns = set.frames.values().map(|f| f.timestamp_ns).min().unwrap_or(0);
    Ok(out)
}

/// Concatenates time-ordered frames, tagging each point with the position
/// of its frame (0 = oldest). Carries the newest timestamp.
pub fn temporal_integrate(frames: &[PointCloud]) -> PointCloud {
    let mut out = PointCloud::default();
    for (k, frame) in frames.iter().enumerate() {
        let mut tagged = frame.clone();
        tagged.time_index = vec![k as u16; frame.len()];
        out.extend_from(&tagged);
    }
    if let Some(last) = frames.last() {
        out.timestamp_ns = last.timestamp_ns;
        if frames.iter().all(|f| f.source_node == last.source_node) {
            out.source_node = last.source_node;
        }
    }
    out
}

/// Integrates the most recent frames (the tail of `history`) until the
/// point count reaches `budget`, or history runs out.
pub fn integrate_to_budget(history: &[PointCloud], budget: usize) -> PointCloud {
    let mut total = 0;
    let mut start = history.len();
    while start > 0 && total < budget {
        start -= 1;
        total += history[start].len();
    }
    temporal_integrate(&history[start..])
}

/// Boxes judged to be the same object, with the index of the view that
/// produced each, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxCluster {
    pub members: Vec<(Box3D, u16)>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups same-class boxes connected by 3D IoU ≥ `overlap_threshold`.
pub fn cluster_boxes(views: &[(u16, Vec<Box3D>)], overlap_threshold: f64) -> Result<Vec<BoxCluster>, FusionError> {
    cluster_boxes_with(views, overlap_threshold, OverlapMetric::Iou3d)
}

/// [`cluster_boxes`] with a choice of overlap measure. Clusters are the
/// connected components of the overlap graph, listed by their first member.
pub fn cluster_boxes_with(
    views: &[(u16, Vec<Box3D>)],
    overlap_threshold: f64,
    metric: OverlapMetric,
) -> Result<Vec<BoxCluster>, FusionError> {
    if !(overlap_threshold > 0.0 && overlap_threshold < 1.0) {
        return Err(FusionError::InvalidThreshold(overlap_threshold));
    }
    let flat: Vec<(Box3D, u16)> = views.iter().flat_map(|(v, boxes)| boxes.iter().map(move |b| (*b, *v))).collect();
    let mut sets = DisjointSet::new(flat.len());
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            let (a, b) = (&flat[i].0, &flat[j].0);
            if a.class == b.class && metric.overlap(a, b) >= overlap_threshold {
                sets.union(i, j);
            }
        }
    }
    let mut by_root: BTreeMap<usize, Vec<(Box3D, u16)>> = BTreeMap::new();
    for (i, member) in flat.into_iter().enumerate() {
        by_root.entry(sets.find(i)).or_default().push(member);
    }
    Ok(by_root.into_values().map(|members| BoxCluster { members }).collect())
}

/// Keeps the highest-scoring member of each cluster; ties go to the lower
/// view id, then to the earlier member.
pub fn nms_fuse(clusters: &[BoxCluster]) -> Vec<Box3D> {
    clusters
        .iter()
        .map(|c| {
            let mut best = &c.members[0];
            for m in &c.members[1..] {
                if m.0.score > best.0.score || (m.0.score == best.0.score && m.1 < best.1) {
                    best = m;
                }
            }
            best.0
        })
        .collect()
}

/// Unweighted mean box per cluster; see [`average_fuse_with`].
pub fn average_fuse(clusters: &[BoxCluster]) -> Result<Vec<Box3D>, FusionError> {
    average_fuse_with(clusters, false)
}

/// Mean center, size and heading per cluster, optionally weighted by
/// score. Yaws are flipped by π when more than 90° away from the first
/// member's yaw before their unit vectors are averaged. The fused score
/// is the best member score.
pub fn average_fuse_with(clusters: &[BoxCluster], score_weighted: bool) -> Result<Vec<Box3D>, FusionError> {
    clusters
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let first = c.members[0].0;
            let weights: Vec<f64> = c.members.iter().map(|(b, _)| if score_weighted { b.score } else { 1.0 }).collect();
            let mut total: f64 = weights.iter().sum();
            let uniform = total <= 0.0;
            if uniform {
                total = c.members.len() as f64;
            }
            let mut center = Point3::origin().coords;
            let mut size = [0.0; 3];
            let (mut hx, mut hy) = (0.0, 0.0);
            for ((b, _), &w) in c.members.iter().zip(&weights) {
                let w = if uniform { 1.0 } else { w } / total;
                center += b.center.coords * w;
                for (s, v) in size.iter_mut().zip(b.size()) {
                    *s += v * w;
                }
                let mut yaw = b.yaw;
                if wrap_angle(yaw - first.yaw).abs() > FRAC_PI_2 {
                    yaw += std::f64::consts::PI;
                }
                hx += w * yaw.cos();
                hy += w * yaw.sin();
            }
            if hx.hypot(hy) < 1e-9 {
                return Err(FusionError::DegenerateYaw(ci));
            }
            let score = c.members.iter().map(|(b, _)| b.score).fold(f64::NEG_INFINITY, f64::max);
            Ok(Box3D::new(Point3::from(center), size, hy.atan2(hx), first.class).with_score(score))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateFusionMethod {
    Nms,
    Average,
}

/// Clusters per-view detections and fuses each cluster.
pub fn late_fuse(
    views: &[(u16, Vec<Box3D>)],
    overlap_threshold: f64,
    method: LateFusionMethod,
) -> Result<Vec<Box3D>, FusionError> {
    let clusters = cluster_boxes(views, overlap_threshold)?;
    match method {
        LateFusionMethod::Nms => Ok(nms_fuse(&clusters)),
        LateFusionMethod::Average => average_fuse(&clusters),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_3d, ObjectClass, Vec3};
    use proptest::prelude::*;

    fn car(x: f64, y: f64, yaw: f64, score: f64) -> Box3D {
        Box3D::new(Point3::new(x, y, 0.8), [4.0, 2.0, 1.6], yaw, ObjectClass::Car).with_score(score)
    }

    fn cloud(n: usize, ts: u64) -> PointCloud {
        PointCloud {
            points: (0..n).map(|i| Point3::new(i as f64, 1.0, 0.0)).collect(),
            timestamp_ns: ts,
            ..PointCloud::default()
        }
    }

    fn set(frames: Vec<PointCloud>) -> ViewFrameSet {
        let ext = (0..frames.len() as u16).map(|n| (n, RigidTransform::identity())).collect();
        ViewFrameSet::new(frames.into_iter().enumerate().map(|(n, f)| (n as u16, f)).collect(), ext)
    }

    #[test]
    fn single_identity_view_is_unchanged() {
        let c = cloud(10, 7);
        let fused = early_fuse(&set(vec![c.clone()])).unwrap();
        assert_eq!(fused.points, c.points);
        assert_eq!(fused.point_source, vec![0; 10]);
        assert_eq!(fused.timestamp_ns, 7);
    }

    #[test]
    fn two_views_add_counts() {
        let mut s = set(vec![cloud(1000, 0), cloud(1000, 1_000_000)]);
        s.extrinsics.insert(1, RigidTransform::from_translation(Vec3::new(0.0, 0.0, 2.0)));
        let fused = early_fuse(&s).unwrap();
        assert_eq!(fused.len(), 2000);
        assert!(fused.point_source[..1000].iter().all(|&s| s == 0));
        assert!(fused.point_source[1000..].iter().all(|&s| s == 1));
        assert_eq!(fused.points[1000].z, 2.0);
    }

    #[test]
    fn skew_and_missing_extrinsic_rejected() {
        let s = set(vec![cloud(3, 0), cloud(3, 6_000_000)]);
        assert_eq!(early_fuse(&s), Err(FusionError::TimestampSkew { span_ns: 6_000_000, window_ns: 5_000_000 }));
        let mut s = set(vec![cloud(3, 0)]);
        s.extrinsics.clear();
        assert_eq!(early_fuse(&s), Err(FusionError::MissingExtrinsic(0)));
    }

    #[test]
    fn temporal_indices_partition_frames() {
        let single = temporal_integrate(&[cloud(5, 0)]);
        assert_eq!(single.time_index, vec![0; 5]);
        let frames: Vec<_> = (0..4).map(|k| cloud(3 + k, k as u64 * 100)).collect();
        let out = temporal_integrate(&frames);
        assert_eq!(out.len(), 3 + 4 + 5 + 6);
        for k in 0..4u16 {
            assert_eq!(out.time_index.iter().filter(|&&t| t == k).count(), 3 + k as usize);
        }
        assert_eq!(out.timestamp_ns, 300);
    }

    #[test]
    fn budget_integration_within_one_frame() {
        let history: Vec<_> = (0..20).map(|k| cloud(900 + 10 * k, k as u64)).collect();
        let budget = 4 * 1000;
        let out = integrate_to_budget(&history, budget);
        let last = history.last().unwrap().len();
        assert!(out.len() >= budget && out.len() < budget + last);
        assert_eq!(*out.time_index.last().unwrap() as usize, out.time_index.iter().map(|&t| t as usize).max().unwrap());
    }

    #[test]
    fn clustering_examples() {
        let disjoint = vec![(0, vec![car(0.0, 0.0, 0.0, 0.9)]), (1, vec![car(10.0, 0.0, 0.0, 0.9)])];
        assert_eq!(cluster_boxes(&disjoint, 0.1).unwrap().len(), 2);

        let same: Vec<_> = (0..4u16).map(|v| (v, vec![car(0.05 * v as f64, 0.0, 0.0, 0.5)])).collect();
        let c = cluster_boxes(&same, 0.1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members.len(), 4);

        // Shifts of 2.9 m along a 4 m car: IoU 1.1 / 6.9 ≈ 0.16 for
        // neighbors and zero between the ends.
        let (a, b, cc) = (car(0.0, 0.0, 0.0, 0.5), car(2.9, 0.0, 0.0, 0.5), car(5.8, 0.0, 0.0, 0.5));
        assert!(iou_3d(&a, &b) >= 0.15 && iou_3d(&a, &cc) == 0.0);
        let chain = vec![(0, vec![a]), (1, vec![cc]), (2, vec![b])];
        let c = cluster_boxes(&chain, 0.1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members.len(), 3);
    }

    #[test]
    fn classes_never_merge() {
        let mut ped = car(0.0, 0.0, 0.0, 0.5);
        ped.class = ObjectClass::Pedestrian;
        let c = cluster_boxes(&[(0, vec![car(0.0, 0.0, 0.0, 0.5)]), (1, vec![ped])], 0.1).unwrap();
        assert_eq!(c.len(), 2);
        assert!(cluster_boxes(&[], 1.0).is_err());
    }

    #[test]
    fn nms_examples() {
        let single = BoxCluster { members: vec![(car(1.0, 2.0, 0.3, 0.4), 3)] };
        assert_eq!(nms_fuse(&[single.clone()]), vec![single.members[0].0]);
        let c = BoxCluster {
            members: vec![(car(0.0, 0.0, 0.0, 0.7), 0), (car(0.1, 0.0, 0.0, 0.9), 1), (car(0.2, 0.0, 0.0, 0.5), 2)],
        };
        assert_eq!(nms_fuse(&[c.clone()])[0], c.members[1].0);
        let tie = BoxCluster { members: vec![(car(0.3, 0.0, 0.0, 0.8), 2), (car(0.0, 0.0, 0.0, 0.8), 0)] };
        assert_eq!(nms_fuse(&[tie.clone()])[0], tie.members[1].0);
    }

    #[test]
    fn average_examples() {
        let b = car(1.0, 2.0, 0.3, 0.4);
        let single = BoxCluster { members: vec![(b, 0)] };
        let fused = average_fuse(&[single]).unwrap()[0];
        assert!((fused.center - b.center).norm() < 1e-12 && (fused.yaw - b.yaw).abs() < 1e-12);
        assert_eq!(fused.score, 0.4);

        let pair = BoxCluster { members: vec![(b, 0), (b, 1)] };
        let fused = average_fuse(&[pair]).unwrap()[0];
        assert!((fused.center - b.center).norm() < 1e-12 && fused.score == 0.4);

        let mid = BoxCluster { members: vec![(car(0.0, 0.0, 0.0, 0.5), 0), (car(1.0, 0.0, 0.0, 0.6), 1)] };
        let fused = average_fuse(&[mid]).unwrap()[0];
        assert!((fused.center.x - 0.5).abs() < 1e-12 && fused.center.y == 0.0);
        assert_eq!(fused.score, 0.6);
    }

    #[test]
    fn average_yaw_handles_wraparound_and_flips() {
        let near_pi = BoxCluster { members: vec![(car(0.0, 0.0, 3.1, 0.5), 0), (car(0.0, 0.0, -3.1, 0.5), 1)] };
        let yaw = average_fuse(&[near_pi]).unwrap()[0].yaw;
        assert!(wrap_angle(yaw - std::f64::consts::PI).abs() < 1e-9);
        let flipped = BoxCluster { members: vec![(car(0.0, 0.0, 0.1, 0.5), 0), (car(0.0, 0.0, 0.1 + std::f64::consts::PI, 0.5), 1)] };
        assert!((average_fuse(&[flipped]).unwrap()[0].yaw - 0.1).abs() < 1e-9);
        // Headings opposed at ±90° cancel once the first member carries no weight.
        let opposed = BoxCluster {
            members: vec![
                (car(0.0, 0.0, 0.0, 0.0), 0),
                (car(0.0, 0.0, FRAC_PI_2, 0.5), 1),
                (car(0.0, 0.0, -FRAC_PI_2, 0.5), 2),
            ],
        };
        assert!(average_fuse(&[opposed.clone()]).is_ok());
        assert_eq!(average_fuse_with(&[opposed], true), Err(FusionError::DegenerateYaw(0)));
    }

    #[test]
    fn late_fuse_counts() {
        let views = vec![
            (0, vec![car(0.0, 0.0, 0.0, 0.9), car(20.0, 0.0, 0.0, 0.5)]),
            (1, vec![car(0.2, 0.1, 0.05, 0.8)]),
        ];
        assert_eq!(late_fuse(&views, 0.1, LateFusionMethod::Nms).unwrap().len(), 2);
        assert_eq!(late_fuse(&views, 0.1, LateFusionMethod::Average).unwrap().len(), 2);
    }

    fn arb_views() -> impl Strategy<Value = Vec<(u16, Vec<Box3D>)>> {
        proptest::collection::vec(
            proptest::collection::vec((-6.0f64..6.0, -6.0f64..6.0, -1.5f64..1.5, 0.05f64..1.0, 0usize..2), 0..5),
            1..5,
        )
        .prop_map(|views| {
            views
                .into_iter()
                .enumerate()
                .map(|(v, boxes)| {
                    let boxes = boxes
                        .into_iter()
                        .map(|(x, y, yaw, s, cls)| {
                            let mut b = car(x, y, yaw, s);
                            if cls == 1 {
                                b.class = ObjectClass::Cyclist;
                            }
                            b
                        })
                        .collect();
                    (v as u16, boxes)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn clusters_partition_inputs(views in arb_views()) {
            let clusters = cluster_boxes(&views, 0.1).unwrap();
            let total: usize = views.iter().map(|(_, b)| b.len()).sum();
            prop_assert_eq!(clusters.iter().map(|c| c.members.len()).sum::<usize>(), total);
            for c in &clusters {
                prop_assert!(c.members.iter().all(|(b, _)| b.class == c.members[0].0.class));
            }
            // Members of different clusters never overlap above threshold.
            for (i, a) in clusters.iter().enumerate() {
                for b in &clusters[i + 1..] {
                    for (x, _) in &a.members {
                        for (y, _) in &b.members {
                            prop_assert!(x.class != y.class || iou_3d(x, y) < 0.1);
                        }
                    }
                }
            }
            let nms = nms_fuse(&clusters);
            prop_assert!(nms.len() <= total);
            for b in &nms {
                prop_assert!(views.iter().any(|(_, boxes)| boxes.contains(b)));
            }
        }

        #[test]
        fn cluster_order_independent(views in arb_views()) {
            let sizes = |v: &[(u16, Vec<Box3D>)]| {
                let mut s: Vec<usize> = cluster_boxes(v, 0.1).unwrap().iter().map(|c| c.members.len()).collect();
                s.sort();
                s
            };
            let mut reversed = views.clone();
            reversed.reverse();
            prop_assert_eq!(sizes(&views), sizes(&reversed));
        }

        #[test]
        fn average_within_envelope(views in arb_views()) {
            let clusters = cluster_boxes(&views, 0.1).unwrap();
            if let Ok(fused) = average_fuse(&clusters) {
                for (c, f) in clusters.iter().zip(&fused) {
                    for k in 0..3 {
                        let lo = c.members.iter().map(|(b, _)| b.center[k]).fold(f64::INFINITY, f64::min);
                        let hi = c.members.iter().map(|(b, _)| b.center[k]).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(f.center[k] >= lo - 1e-9 && f.center[k] <= hi + 1e-9);
                    }
                    prop_assert!(f.validate().is_ok());
                }
            }
        }
    }
}
