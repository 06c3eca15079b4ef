use log::debug;

use super::ransac::ransac_hypotheses;
use super::{
    compute_fpfh, estimate_normals_toward, icp_refine_with_tree, FpfhDescriptor, HierarchyConfig, RegistrationError,
    RegistrationResult,
};
use crate::geometry::{voxel_downsample, Point3, PointCloud, RigidTransform};
use crate::spatial::KdTree;

struct Level<'a> {
    source: PointCloud,
    target: &'a PointCloud,
    tree: &'a KdTree,
    max_dist: f64,
    max_iter: usize,
}

/// Registration target downsampled at every level, with coarse-level
/// descriptors, ready to be shared by many source clouds.
pub struct PreparedTarget {
    levels: Vec<(PointCloud, KdTree)>,
    coarse_fpfh: Vec<FpfhDescriptor>,
}

impl PreparedTarget {
    pub fn new(target: &PointCloud, cfg: &HierarchyConfig) -> Result<Self, RegistrationError> {
        cfg.validate()?;
        if target.is_empty() {
            return Err(RegistrationError::EmptyInput("target cloud is empty".into()));
        }
        let mut levels = Vec::with_capacity(cfg.levels.len());
        for level in &cfg.levels {
            let cloud = voxel_downsample(target, level.voxel_size)?;
            let tree = KdTree::new(&cloud.points);
            levels.push((cloud, tree));
        }
        let coarse = &levels[0].0;
        let normals = estimate_normals_toward(coarse, cfg.normal_radius, cfg.min_normal_neighbors, &Point3::from(cfg.target_viewpoint));
        let coarse_fpfh = compute_fpfh(coarse, &normals, cfg.fpfh_radius);
        Ok(Self { levels, coarse_fpfh })
    }
}

fn refine(levels: &[Level<'_>], init: RigidTransform, eps: f64) -> Result<RegistrationResult, RegistrationError> {
    let mut pose = init;
    let mut last = None;
    for level in levels {
        let result = icp_refine_with_tree(&level.source, level.target, level.tree, &pose, level.max_dist, level.max_iter, eps)?;
        debug!(
            "icp @ {} pts: fitness {:.3} rmse {:.4} after {} iterations",
            level.source.len(),
            result.fitness,
            result.inlier_rmse,
            result.iterations_used
        );
        pose = result.transform;
        last = Some(result);
    }
    last.ok_or_else(|| RegistrationError::InvalidConfig("no ICP levels".into()))
}

/// Registers `source` (node frame) onto `target` (world frame).
///
/// Coarsest level: voxel downsampling, normals, FPFH and RANSAC. The best
/// `cfg.verification_candidates` distinct RANSAC poses are each refined
/// through every level but the finest, and the one with the highest
/// fitness there is carried on through the finest level. Each ICP level is
/// warm-started from the previous pose. A final fitness below
/// `cfg.min_fitness` is reported as [`RegistrationError::CalibrationFailed`].
pub fn hierarchical_register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &HierarchyConfig,
    seed: u64,
) -> Result<RegistrationResult, RegistrationError> {
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyInput("source or target cloud is empty".into()));
    }
    let prepared = PreparedTarget::new(target, cfg)?;
    register_to_prepared(source, &prepared, cfg, seed)
}

/// [`hierarchical_register`] against a [`PreparedTarget`] built with the
/// same configuration.
pub fn register_to_prepared(
    source: &PointCloud,
    target: &PreparedTarget,
    cfg: &HierarchyConfig,
    seed: u64,
) -> Result<RegistrationResult, RegistrationError> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(RegistrationError::EmptyInput("source cloud is empty".into()));
    }
    if target.levels.len() != cfg.levels.len() {
        return Err(RegistrationError::InvalidConfig("target was prepared with a different level schedule".into()));
    }
    let mut levels = Vec::with_capacity(cfg.levels.len());
    for (level, (tgt, tree)) in cfg.levels.iter().zip(&target.levels) {
        levels.push(Level {
            source: voxel_downsample(source, level.voxel_size)?,
            target: tgt,
            tree,
            max_dist: level.max_correspondence_distance,
            max_iter: level.max_iterations,
        });
    }
    let coarse = &levels[0];
    let src_normals = estimate_normals_toward(&coarse.source, cfg.normal_radius, cfg.min_normal_neighbors, &Point3::from(cfg.source_viewpoint));
    let src_fpfh = compute_fpfh(&coarse.source, &src_normals, cfg.fpfh_radius);
    let candidates = ransac_hypotheses(
        &coarse.source,
        coarse.target,
        &src_fpfh,
        &target.coarse_fpfh,
        cfg,
        seed,
        cfg.verification_candidates,
    )?;

    let split = levels.len().saturating_sub(1).max(1);
    let (verify, finish) = levels.split_at(split);
    let mut best: Option<RegistrationResult> = None;
    let mut last_error = None;
    for (k, candidate) in candidates.iter().enumerate() {
        debug!("candidate {k}: ransac fitness {:.3}", candidate.fitness);
        match refine(verify, candidate.transform, cfg.convergence_epsilon) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.fitness > b.fitness) {
                    best = Some(r);
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    let Some(mut result) = best else {
        return Err(last_error.unwrap_or(RegistrationError::NoConsensus { inliers: 0 }));
    };
    if !finish.is_empty() {
        result = refine(finish, result.transform, cfg.convergence_epsilon)?;
    }
    if result.fitness < cfg.min_fitness {
        return Err(RegistrationError::CalibrationFailed { fitness: result.fitness, threshold: cfg.min_fitness });
    }
    Ok(result)
}

/// Concatenates the frames whose timestamps fall in
/// `[t₀, t₀ + duration_s)`, where `t₀` is the first frame's timestamp.
/// The result stays in the node frame and keeps the first frame's metadata.
pub fn accumulate_frames(frames: &[PointCloud], duration_s: f64) -> PointCloud {
    let Some(first) = frames.first() else {
        return PointCloud::default();
    };
    let window_ns = (duration_s * 1e9).max(0.0);
    let mut out = PointCloud {
        timestamp_ns: first.timestamp_ns,
        source_node: first.source_node,
        ..PointCloud::default()
    };
    for frame in frames {
        let dt = frame.timestamp_ns.saturating_sub(first.timestamp_ns) as f64;
        if frame.timestamp_ns < first.timestamp_ns || dt >= window_ns {
            continue;
        }
        out.extend_from(frame);
    }
    out
}
