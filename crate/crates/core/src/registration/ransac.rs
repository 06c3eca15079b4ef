use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{solve_rigid_arun, FpfhDescriptor, HierarchyConfig, RegistrationError, RegistrationResult};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::spatial::KdTree;

fn nearest_descriptor(query: &FpfhDescriptor, pool: &[FpfhDescriptor]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, d) in pool.iter().enumerate() {
        if d.is_zero() {
            continue;
        }
        let dist = query.distance_squared(d);
        if best.is_none_or(|(_, bd)| dist < bd) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j)
}

/// Pairs `(source index, target index)` whose descriptors are each other's
/// nearest neighbour in feature space. Zero descriptors never match.
pub fn mutual_feature_matches(source: &[FpfhDescriptor], target: &[FpfhDescriptor]) -> Vec<(usize, usize)> {
    let forward: Vec<Option<usize>> = source
        .par_iter()
        .map(|d| if d.is_zero() { None } else { nearest_descriptor(d, target) })
        .collect();
    let backward: Vec<Option<usize>> = target
        .par_iter()
        .map(|d| if d.is_zero() { None } else { nearest_descriptor(d, source) })
        .collect();
    forward
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let j = (*f)?;
            (backward[j] == Some(i)).then_some((i, j))
        })
        .collect()
}

fn edge_lengths_consistent(src: [&Point3; 3], dst: [&Point3; 3], ratio: f64) -> bool {
    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
        let ds = (src[a] - src[b]).norm();
        let dt = (dst[a] - dst[b]).norm();
        let (lo, hi) = if ds < dt { (ds, dt) } else { (dt, ds) };
        if !(hi > 0.0) || lo / hi <= ratio {
            return false;
        }
    }
    true
}

/// Global alignment from feature correspondences.
///
/// Draws `cfg.ransac_iterations` triples of mutual feature matches (all
/// drawn up front from `seed`), rejects triples whose edge lengths
/// disagree, fits each survivor in closed form and counts correspondences
/// within `cfg.ransac_inlier_threshold`. The winning hypothesis (most
/// inliers, ties to the earliest trial) is refit on its inliers; fitness
/// and RMSE are then measured against the full target cloud.
pub fn coarse_align_ransac(
    source: &PointCloud,
    target: &PointCloud,
    source_fpfh: &[FpfhDescriptor],
    target_fpfh: &[FpfhDescriptor],
    cfg: &HierarchyConfig,
    seed: u64,
) -> Result<RegistrationResult, RegistrationError> {
    let mut best = ransac_hypotheses(source, target, source_fpfh, target_fpfh, cfg, seed, 1)?;
    Ok(best.swap_remove(0))
}

/// Up to `count` mutually distinct RANSAC hypotheses, best first.
///
/// Trials are ranked by correspondence inlier count (ties to the earliest
/// trial); a trial within 10° and two inlier thresholds of a better one is
/// skipped. The leading distinct poses (at least 32, refit on their
/// inliers) are then re-ranked by fitness over the whole source cloud,
/// which is far less sensitive to repetitive structure than the
/// correspondence count.
pub fn ransac_hypotheses(
    source: &PointCloud,
    target: &PointCloud,
    source_fpfh: &[FpfhDescriptor],
    target_fpfh: &[FpfhDescriptor],
    cfg: &HierarchyConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<RegistrationResult>, RegistrationError> {
    if source.is_empty() || target.is_empty() {
        return Err(RegistrationError::EmptyInput("source or target cloud is empty".into()));
    }
    if source_fpfh.len() != source.len() || target_fpfh.len() != target.len() {
        return Err(RegistrationError::InvalidConfig("one descriptor per point is required".into()));
    }
    let matches = mutual_feature_matches(source_fpfh, target_fpfh);
    if matches.len() < 3 {
        return Err(RegistrationError::NoConsensus { inliers: matches.len() });
    }
    let src: Vec<Point3> = matches.iter().map(|&(i, _)| source.points[i]).collect();
    let dst: Vec<Point3> = matches.iter().map(|&(_, j)| target.points[j]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = matches.len();
    let triples: Vec<[usize; 3]> = (0..cfg.ransac_iterations)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for lower in [a.min(b), a.max(b)] {
                if c >= lower {
                    c += 1;
                }
            }
            [a, b, c]
        })
        .collect();

    let threshold2 = cfg.ransac_inlier_threshold * cfg.ransac_inlier_threshold;
    let count_inliers = |t: &RigidTransform| -> usize {
        src.iter()
            .zip(&dst)
            .filter(|(s, d)| (t.apply(s) - *d).norm_squared() <= threshold2)
            .count()
    };

    let mut scored: Vec<(usize, usize, RigidTransform)> = triples
        .par_iter()
        .enumerate()
        .filter_map(|(trial, tri)| {
            let s = [&src[tri[0]], &src[tri[1]], &src[tri[2]]];
            let d = [&dst[tri[0]], &dst[tri[1]], &dst[tri[2]]];
            if !edge_lengths_consistent(s, d, cfg.edge_length_ratio) {
                return None;
            }
            let t = solve_rigid_arun(&[*s[0], *s[1], *s[2]], &[*d[0], *d[1], *d[2]]).ok()?;
            let inliers = count_inliers(&t);
            (inliers >= 3).then_some((inliers, trial, t))
        })
        .collect();
    if scored.is_empty() {
        return Err(RegistrationError::NoConsensus { inliers: 0 });
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let tree = KdTree::new(&target.points);
    let pool = (8 * count).max(32);
    let mut out: Vec<RegistrationResult> = Vec::new();
    for (inliers, _, hypothesis) in scored {
        if out.len() == pool {
            break;
        }
        let (in_src, in_dst): (Vec<Point3>, Vec<Point3>) = src
            .iter()
            .zip(&dst)
            .filter(|(s, d)| (hypothesis.apply(s) - *d).norm_squared() <= threshold2)
            .map(|(s, d)| (*s, *d))
            .unzip();
        let refined = solve_rigid_arun(&in_src, &in_dst).unwrap_or(hypothesis);
        let transform = if count_inliers(&refined) >= inliers { refined } else { hypothesis };
        let duplicate = out.iter().any(|r| {
            r.transform.rotation_error_deg(&transform) < 10.0
                && r.transform.translation_error(&transform) < 2.0 * cfg.ransac_inlier_threshold
        });
        if duplicate {
            continue;
        }
        let (fitness, inlier_rmse) = evaluate_alignment(source, &tree, &transform, cfg.ransac_inlier_threshold);
        out.push(RegistrationResult {
            transform,
            fitness,
            inlier_rmse,
            iterations_used: cfg.ransac_iterations,
            rmse_trace: Vec::new(),
        });
    }
    // Stable sort keeps the inlier ranking among equal fitness values.
    out.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
    out.truncate(count.max(1));
    Ok(out)
}

/// Fitness and inlier RMSE of `source` moved by `t` against a target tree.
pub(crate) fn evaluate_alignment(source: &PointCloud, tree: &KdTree, t: &RigidTransform, max_dist: f64) -> (f64, f64) {
    if source.is_empty() {
        return (0.0, 0.0);
    }
    let (count, sum) = source
        .points
        .par_iter()
        .filter_map(|p| tree.nearest_within(&t.apply(p), max_dist).map(|(_, d2)| d2))
        .fold(|| (0usize, 0.0f64), |(c, s), d2| (c + 1, s + d2))
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let fitness = count as f64 / source.len() as f64;
    let rmse = if count > 0 { (sum / count as f64).sqrt() } else { 0.0 };
    (fitness, rmse)
}
