//! View-group, fusion and tracking studies on synthetic scenes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{detect_frame, DetectorConfig, DetectorError};
use crate::eval::{compute_ap, compute_clear_mot, precision_recall_curve, DetectionEvalConfig, EvalError, MotEvalConfig, MotReport};
use crate::fusion::{average_fuse, cluster_boxes, early_fuse, integrate_to_budget, nms_fuse, FusionError, ViewFrameSet};
use crate::geometry::{apply_transform, Box3D, ObjectClass, PointCloud, RigidTransform};
use crate::scene::{ObjectSpec, SceneSpec, SurfaceLabel, SyntheticScene};
use crate::tracking::{track_sequence, TrackerConfig, TrajectorySet};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("tracking failed: {0}")]
    Tracking(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Node frame moved into world coordinates, tagged with its node.
pub fn world_frame(scene: &SyntheticScene, extrinsics: &[RigidTransform], node: usize, frame: usize) -> PointCloud {
    let mut world = apply_transform(&extrinsics[node], &scene.frames[node][frame]);
    world.point_source = vec![node as u16; world.len()];
    world
}

/// Early-fused world cloud of the chosen nodes at one frame.
pub fn fuse_views(
    scene: &SyntheticScene,
    extrinsics: &[RigidTransform],
    nodes: &[usize],
    frame: usize,
) -> Result<PointCloud, FusionError> {
    let set = ViewFrameSet::new(
        nodes.iter().map(|&n| (n as u16, scene.frames[n][frame].clone())).collect(),
        nodes.iter().map(|&n| (n as u16, extrinsics[n])).collect(),
    );
    early_fuse(&set)
}

fn detect(cloud: &PointCloud, cfg: &DetectorConfig) -> Result<Vec<Box3D>, DetectorError> {
    Ok(detect_frame(cloud, cfg)?.boxes)
}

/// True positives and ground-truth count pooled over classes, using the
/// same greedy matching as average precision.
pub fn detection_recall(
    detections: &[(usize, Box3D)],
    ground_truth: &[(usize, Box3D)],
    cfg: &DetectionEvalConfig,
) -> Result<(usize, usize), EvalError> {
    let mut tp = 0;
    let mut total = 0;
    for class in ObjectClass::ALL {
        let n_gt = ground_truth.iter().filter(|(_, b)| b.class == class).count();
        if n_gt == 0 {
            continue;
        }
        let curve = precision_recall_curve(detections, ground_truth, class, cfg)?;
        let recall = curve.last().map_or(0.0, |&(_, r)| r);
        tp += (recall * n_gt as f64).round() as usize;
        total += n_gt;
    }
    Ok((tp, total))
}

/// Mean AP over the classes that have ground truth.
pub fn mean_ap(
    detections: &[(usize, Box3D)],
    ground_truth: &[(usize, Box3D)],
    cfg: &DetectionEvalConfig,
) -> Result<BTreeMap<ObjectClass, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for class in ObjectClass::ALL {
        if ground_truth.iter().any(|(_, b)| b.class == class) {
            out.insert(class, compute_ap(detections, ground_truth, class, cfg)?);
        }
    }
    Ok(out)
}

fn average(values: &BTreeMap<ObjectClass, f64>) -> f64 {
    if values.is_empty() { 0.0 } else { values.values().sum::<f64>() / values.len() as f64 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub detector: DetectorConfig,
    pub eval: DetectionEvalConfig,
    pub fusion_overlap: f64,
    /// Frames to evaluate; empty means every frame.
    pub frames: Vec<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { detector: DetectorConfig::default(), eval: DetectionEvalConfig::default(), fusion_overlap: 0.1, frames: Vec::new() }
    }
}

impl StudyConfig {
    fn frames(&self, scene: &SyntheticScene) -> Vec<usize> {
        if self.frames.is_empty() { (0..scene.gt_boxes.len()).collect() } else { self.frames.clone() }
    }
}

/// Detection quality of one view group (or one fusion method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub label: String,
    pub views: Vec<usize>,
    pub recall: f64,
    pub true_positives: usize,
    pub ground_truth: usize,
    pub ap: BTreeMap<ObjectClass, f64>,
    pub mean_ap: f64,
    pub mean_points: f64,
}

/// Frames of several scenes share one key space: `scene * FRAME_STRIDE + frame`.
pub const FRAME_STRIDE: usize = 1_000_000;

/// Detections of every requested view group on every evaluated frame of
/// a set of scenes, computed once and shared by the studies.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteDetections {
    pub groups: Vec<Vec<usize>>,
    pub ground_truth: Vec<(usize, Box3D)>,
    /// `detections[g]`: keyed detections of `groups[g]`.
    pub detections: Vec<Vec<(usize, Box3D)>>,
    /// Mean fused point count per frame, per group.
    pub mean_points: Vec<f64>,
}

impl SuiteDetections {
    /// Early-fuses each group and runs the detector on it.
    pub fn compute(scenes: &[SyntheticScene], groups: &[Vec<usize>], cfg: &StudyConfig) -> Result<Self, ExperimentError> {
        let mut jobs = Vec::new();
        for (s, scene) in scenes.iter().enumerate() {
            for f in cfg.frames(scene) {
                if f >= scene.gt_boxes.len() {
                    return Err(ExperimentError::Invalid(format!("frame {f} beyond scene {s}")));
                }
                jobs.push((s, f));
            }
        }
        let ground_truth = jobs
            .iter()
            .flat_map(|&(s, f)| scenes[s].gt_boxes[f].iter().map(move |b| (s * FRAME_STRIDE + f, *b)))
            .collect();
        let per_job: Vec<Vec<(Vec<Box3D>, usize)>> = jobs
            .par_iter()
            .map(|&(s, f)| -> Result<_, ExperimentError> {
                groups
                    .iter()
                    .map(|g| {
                        let cloud = fuse_views(&scenes[s], &scenes[s].extrinsics, g, f)?;
                        Ok((detect(&cloud, &cfg.detector)?, cloud.len()))
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let n = jobs.len().max(1) as f64;
        let detections = (0..groups.len())
            .map(|g| {
                jobs.iter()
                    .zip(&per_job)
                    .flat_map(|(&(s, f), out)| out[g].0.iter().map(move |b| (s * FRAME_STRIDE + f, *b)))
                    .collect()
            })
            .collect();
        let mean_points = (0..groups.len()).map(|g| per_job.iter().map(|o| o[g].1 as f64).sum::<f64>() / n).collect();
        Ok(Self { groups: groups.to_vec(), ground_truth, detections, mean_points })
    }

    fn index(&self, group: &[usize]) -> Result<usize, ExperimentError> {
        self.groups
            .iter()
            .position(|g| g == group)
            .ok_or_else(|| ExperimentError::Invalid(format!("group {group:?} was not detected")))
    }

    pub fn result(&self, label: String, group: &[usize], cfg: &StudyConfig) -> Result<GroupResult, ExperimentError> {
        let g = self.index(group)?;
        summarize(label, group.to_vec(), &self.detections[g], &self.ground_truth, self.mean_points[g], cfg)
    }

    /// Late fusion of the single-view detections of `nodes`.
    pub fn late_fused(&self, nodes: &[usize], overlap: f64) -> Result<(Vec<(usize, Box3D)>, Vec<(usize, Box3D)>), ExperimentError> {
        let singles: Vec<usize> = nodes.iter().map(|&n| self.index(&[n])).collect::<Result<_, _>>()?;
        let keys = self.ground_truth.iter().map(|(k, _)| *k).chain(singles.iter().flat_map(|&g| self.detections[g].iter().map(|(k, _)| *k)));
        let mut by_frame: BTreeMap<usize, Vec<(u16, Vec<Box3D>)>> =
            keys.map(|k| (k, nodes.iter().map(|&n| (n as u16, Vec::new())).collect())).collect();
        for (k, &g) in singles.iter().enumerate() {
            for (key, b) in &self.detections[g] {
                by_frame.get_mut(key).expect("key registered")[k].1.push(*b);
            }
        }
        let mut nms = Vec::new();
        let mut avg = Vec::new();
        for (key, views) in &by_frame {
            let clusters = cluster_boxes(views, overlap)?;
            nms.extend(nms_fuse(&clusters).into_iter().map(|b| (*key, b)));
            avg.extend(average_fuse(&clusters)?.into_iter().map(|b| (*key, b)));
        }
        Ok((nms, avg))
    }
}

fn summarize(
    label: String,
    views: Vec<usize>,
    dets: &[(usize, Box3D)],
    gt: &[(usize, Box3D)],
    points: f64,
    cfg: &StudyConfig,
) -> Result<GroupResult, ExperimentError> {
    let (tp, total) = detection_recall(dets, gt, &cfg.eval)?;
    let ap = mean_ap(dets, gt, &cfg.eval)?;
    Ok(GroupResult {
        label,
        views,
        recall: if total > 0 { tp as f64 / total as f64 } else { 0.0 },
        true_positives: tp,
        ground_truth: total,
        mean_ap: average(&ap),
        ap,
        mean_points: points,
    })
}

pub fn group_label(group: &[usize]) -> String {
    format!("views {}", group.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("+"))
}

/// Detects on the early fusion of each view group; returns one result per
/// group, in input order.
pub fn view_group_study(
    scenes: &[SyntheticScene],
    groups: &[Vec<usize>],
    cfg: &StudyConfig,
) -> Result<Vec<GroupResult>, ExperimentError> {
    let suite = SuiteDetections::compute(scenes, groups, cfg)?;
    groups.iter().map(|g| suite.result(group_label(g), g, cfg)).collect()
}

/// Mean result over all groups of each size (1 view, 2 views, …).
pub fn recall_by_view_count(results: &[GroupResult]) -> BTreeMap<usize, f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = sums.entry(r.views.len()).or_default();
        e.0 += r.recall;
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Single view with enough past frames integrated to match `budget`
/// points per evaluated frame.
pub fn temporal_budget_study(
    scene: &SyntheticScene,
    node: usize,
    budget: usize,
    cfg: &StudyConfig,
) -> Result<GroupResult, ExperimentError> {
    let frames = cfg.frames(scene);
    let gt: Vec<(usize, Box3D)> = frames.iter().flat_map(|&f| scene.gt_boxes[f].iter().map(move |b| (f, *b))).collect();
    let history: Vec<PointCloud> = (0..scene.frames[node].len()).map(|f| world_frame(scene, &scene.extrinsics, node, f)).collect();
    let per_frame: Vec<(Vec<(usize, Box3D)>, usize)> = frames
        .par_iter()
        .map(|&f| -> Result<_, ExperimentError> {
            let cloud = integrate_to_budget(&history[..=f], budget);
            let boxes = detect(&cloud, &cfg.detector)?;
            Ok((boxes.into_iter().map(|b| (f, b)).collect(), cloud.len()))
        })
        .collect::<Result<_, _>>()?;
    let points = per_frame.iter().map(|(_, n)| *n as f64).sum::<f64>() / frames.len().max(1) as f64;
    let dets: Vec<_> = per_frame.into_iter().flat_map(|(d, _)| d).collect();
    summarize(format!("view {node} temporal"), vec![node], &dets, &gt, points, cfg)
}

/// Results of single-view detection, early fusion and both late fusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionStudy {
    pub single_views: Vec<GroupResult>,
    pub early: GroupResult,
    pub average: GroupResult,
    pub nms: GroupResult,
}

impl FusionStudy {
    pub fn best_single_view_ap(&self) -> f64 {
        self.single_views.iter().map(|r| r.mean_ap).fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<GroupResult> {
        let mut rows = self.single_views.clone();
        rows.extend([self.nms.clone(), self.average.clone(), self.early.clone()]);
        rows
    }
}

/// Compares single views, early fusion and both late fusions of `nodes`.
/// `suite` must contain every single view and the full group.
pub fn fusion_study(suite: &SuiteDetections, nodes: &[usize], cfg: &StudyConfig) -> Result<FusionStudy, ExperimentError> {
    let single_views = nodes.iter().map(|&n| suite.result(format!("view {n}"), &[n], cfg)).collect::<Result<_, _>>()?;
    let full = suite.index(nodes)?;
    let points = suite.mean_points[full];
    let (nms, avg) = suite.late_fused(nodes, cfg.fusion_overlap)?;
    Ok(FusionStudy {
        early: suite.result("early fusion".into(), nodes, cfg)?,
        average: summarize("average fusion".into(), nodes.to_vec(), &avg, &suite.ground_truth, points, cfg)?,
        nms: summarize("NMS fusion".into(), nodes.to_vec(), &nms, &suite.ground_truth, points, cfg)?,
        single_views,
    })
}

/// Text table with one row per view group.
pub fn format_group_table(rows: &[GroupResult]) -> String {
    let mut out = format!("{:<18} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "input", "points", "recall", "Car", "Cyclist", "Ped", "mAP");
    for r in rows {
        let ap = |c| r.ap.get(&c).map_or("-".to_string(), |v| format!("{:.4}", v));
        out.push_str(&format!(
            "{:<18} {:>10.0} {:>8.4} {:>8} {:>8} {:>8} {:>8.4}\n",
            r.label,
            r.mean_points,
            r.recall,
            ap(ObjectClass::Car),
            ap(ObjectClass::Cyclist),
            ap(ObjectClass::Pedestrian),
            r.mean_ap
        ));
    }
    out
}

/// Per-view detections derived from visibility: an object is detected in
/// a view when it received at least `min_points` returns there, unless a
/// random dropout removes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityDetections {
    pub min_points: usize,
    pub dropout: f64,
    /// Standard deviation of center noise added to detected boxes, meters.
    pub center_noise: f64,
    pub seed: u64,
}

impl Default for VisibilityDetections {
    fn default() -> Self {
        Self { min_points: 10, dropout: 0.1, center_noise: 0.05, seed: 0 }
    }
}

/// `per_view[k][frame]` detections for each node in `nodes`.
pub fn visibility_detections(scene: &SyntheticScene, nodes: &[usize], cfg: &VisibilityDetections) -> Vec<Vec<Vec<Box3D>>> {
    nodes
        .iter()
        .map(|&node| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(node as u64 + 1);
            scene.labels[node]
                .iter()
                .enumerate()
                .map(|(frame, labels)| {
                    let mut counts = vec![0usize; scene.gt_boxes[frame].len()];
                    for l in labels {
                        if let SurfaceLabel::Object(i) = l {
                            counts[*i] += 1;
                        }
                    }
                    scene.gt_boxes[frame]
                        .iter()
                        .zip(&counts)
                        .filter_map(|(b, &c)| {
                            let drop = rng.random::<f64>() < cfg.dropout;
                            let (dx, dy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                            if c < cfg.min_points || drop {
                                return None;
                            }
                            let mut d = *b;
                            d.track_id = None;
                            d.center.x += dx * cfg.center_noise;
                            d.center.y += dy * cfg.center_noise;
                            d.score = (c as f64 / 200.0).clamp(0.05, 1.0);
                            Some(d)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Late-fuses several views' per-frame detections with NMS fusion.
pub fn fuse_detection_streams(streams: &[Vec<Vec<Box3D>>], overlap: f64) -> Result<Vec<Vec<Box3D>>, FusionError> {
    let frames = streams.first().map_or(0, Vec::len);
    (0..frames)
        .map(|f| {
            let views: Vec<(u16, Vec<Box3D>)> = streams.iter().enumerate().map(|(k, s)| (k as u16, s[f].clone())).collect();
            Ok(nms_fuse(&cluster_boxes(&views, overlap)?))
        })
        .collect()
}

/// Tracks a detection stream over the scene's frames.
pub fn track_stream(scene: &SyntheticScene, detections: &[Vec<Box3D>], cfg: &TrackerConfig) -> Result<TrajectorySet, ExperimentError> {
    track_sequence(detections, cfg, scene.layout.frame_dt()).map_err(ExperimentError::Tracking)
}

/// Four pedestrians walking on separate lanes 3 m apart, alternating
/// direction, for `frames` frames.
pub fn walkers_spec(frames: usize) -> SceneSpec {
    let objects = (0..4)
        .map(|k| {
            let dir = if k % 2 == 0 { 1.0 } else { -1.0 };
            ObjectSpec {
                class: ObjectClass::Pedestrian,
                center: [-6.0 * dir, -4.5 + 3.0 * k as f64],
                size: [0.6, 0.6, 1.75],
                yaw: if dir > 0.0 { 0.0 } else { std::f64::consts::PI },
                velocity: [1.0 * dir, 0.0],
            }
        })
        .collect();
    SceneSpec { objects, frame_count: frames, ..SceneSpec::default() }
}

/// CLEAR metrics of tracking perfect detections, each single view, and
/// the late fusion of all views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingStudy {
    pub perfect: MotReport,
    pub single_views: Vec<MotReport>,
    pub fused: MotReport,
}

pub fn tracking_study(
    scene: &SyntheticScene,
    visibility: &VisibilityDetections,
    tracker: &TrackerConfig,
    mot: &MotEvalConfig,
    fusion_overlap: f64,
) -> Result<TrackingStudy, ExperimentError> {
    let perfect_dets: Vec<Vec<Box3D>> = scene
        .gt_boxes
        .iter()
        .map(|boxes| boxes.iter().map(|b| Box3D { track_id: None, ..*b }).collect())
        .collect();
    let perfect = compute_clear_mot(&track_stream(scene, &perfect_dets, tracker)?, &scene.trajectories, mot)?;
    let nodes: Vec<usize> = (0..scene.frames.len()).collect();
    let streams = visibility_detections(scene, &nodes, visibility);
    let single_views = streams
        .iter()
        .map(|s| Ok(compute_clear_mot(&track_stream(scene, s, tracker)?, &scene.trajectories, mot)?))
        .collect::<Result<_, ExperimentError>>()?;
    let fused_stream = fuse_detection_streams(&streams, fusion_overlap)?;
    let fused = compute_clear_mot(&track_stream(scene, &fused_stream, tracker)?, &scene.trajectories, mot)?;
    Ok(TrackingStudy { perfect, single_views, fused })
}

/// Text table comparing the fusion strategies.
pub fn format_mot_table(rows: &[(String, MotReport)]) -> String {
    let mut out = format!("{:<14} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}\n", "input", "MOTA", "MOTP", "IDS", "FRAG", "FN", "FP");
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<14} {:>8.4} {:>8.4} {:>6} {:>6} {:>6} {:>6}\n",
            label, r.mota, r.motp, r.ids, r.frag, r.fn_count, r.fp
        ));
    }
    out
}

/// All non-empty subsets of `nodes` with exactly `size` members.
pub fn view_groups(nodes: &[usize], size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, nodes: &[usize], size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..nodes.len() {
            cur.push(nodes[i]);
            rec(i + 1, nodes, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size > 0 && size <= nodes.len() {
        rec(0, nodes, size, &mut Vec::new(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_enumerate_subsets() {
        assert_eq!(view_groups(&[0, 1, 2, 3], 2).len(), 6);
        assert_eq!(view_groups(&[0, 1, 2, 3], 4), vec![vec![0, 1, 2, 3]]);
        assert!(view_groups(&[0, 1], 3).is_empty());
    }

    #[test]
    fn recall_pools_classes() {
        let car = Box3D::new(crate::geometry::Point3::new(0.0, 0.0, 0.8), [4.0, 2.0, 1.6], 0.0, ObjectClass::Car);
        let mut ped = Box3D::new(crate::geometry::Point3::new(5.0, 0.0, 0.9), [0.6, 0.6, 1.8], 0.0, ObjectClass::Pedestrian);
        ped.score = 0.5;
        let gt = vec![(0, car), (0, ped)];
        assert_eq!(detection_recall(&[(0, car)], &gt, &DetectionEvalConfig::default()).unwrap(), (1, 2));
        assert_eq!(detection_recall(&gt, &gt, &DetectionEvalConfig::default()).unwrap(), (2, 2));
    }
}
