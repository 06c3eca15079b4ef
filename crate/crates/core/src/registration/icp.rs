use rayon::prelude::*;

use super::ransac::evaluate_alignment;
use super::{solve_rigid_arun, RegistrationError, RegistrationResult};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::spatial::KdTree;

struct Matching {
    source: Vec<Point3>,
    target: Vec<Point3>,
    /// Mean over all source points of min(d², max_dist²).
    truncated_mse: f64,
}

fn correspond(source: &PointCloud, tree: &KdTree, target: &PointCloud, pose: &RigidTransform, max_dist: f64) -> Matching {
    let cap = max_dist * max_dist;
    let found: Vec<Option<(usize, usize, f64)>> = source
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| tree.nearest_within(&pose.apply(p), max_dist).map(|(j, d2)| (i, j, d2)))
        .collect();
    let mut m = Matching { source: Vec::new(), target: Vec::new(), truncated_mse: 0.0 };
    let mut total = 0.0;
    for f in &found {
        match f {
            Some((i, j, d2)) => {
                m.source.push(source.points[*i]);
                m.target.push(target.points[*j]);
                total += d2;
            }
            None => total += cap,
        }
    }
    m.truncated_mse = total / source.len().max(1) as f64;
    m
}

/// Point-to-point ICP from `init`.
///
/// Each iteration pairs every moved source point with its nearest target
/// point within `max_dist` and re-solves the pose in closed form. The
/// monitored cost is the truncated RMSE over all source points, which the
/// iteration can only decrease; a step that would increase it is rejected
/// and ends the loop. Stops when the relative cost change drops below `eps`
/// or after `max_iter` iterations.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    max_dist: f64,
    max_iter: usize,
    eps: f64,
) -> Result<RegistrationResult, RegistrationError> {
    let tree = KdTree::new(&target.points);
    icp_refine_with_tree(source, target, &tree, init, max_dist, max_iter, eps)
}

/// [`icp_refine`] against a prebuilt index of `target`.
pub fn icp_refine_with_tree(
    source: &PointCloud,
    target: &PointCloud,
    tree: &KdTree,
    init: &RigidTransform,
    max_dist: f64,
    max_iter: usize,
    eps: f64,
) -> Result<RegistrationResult, RegistrationError> {
    if !(max_dist > 0.0) {
        return Err(RegistrationError::InvalidConfig(format!("max_dist must be positive, got {max_dist}")));
    }
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyInput("source or target cloud is empty".into()));
    }
    let mut pose = *init;
    let mut matching = correspond(source, tree, target, &pose, max_dist);
    if matching.source.is_empty() {
        return Err(RegistrationError::NoCorrespondences { max_dist });
    }
    let mut trace = vec![matching.truncated_mse.sqrt()];
    let mut iterations = 0;
    for it in 1..=max_iter {
        let Ok(candidate) = solve_rigid_arun(&matching.source, &matching.target) else {
            break;
        };
        let next = correspond(source, tree, target, &candidate, max_dist);
        if next.truncated_mse > matching.truncated_mse || next.source.len() < 3 {
            break;
        }
        let before = matching.truncated_mse.sqrt();
        let after = next.truncated_mse.sqrt();
        pose = candidate;
        matching = next;
        iterations = it;
        trace.push(after);
        if after == 0.0 || (before - after).abs() / before < eps {
            break;
        }
    }
    let (fitness, inlier_rmse) = evaluate_alignment(source, tree, &pose, max_dist);
    Ok(RegistrationResult {
        transform: pose,
        fitness,
        inlier_rmse,
        iterations_used: iterations,
        rmse_trace: trace,
    })
}
