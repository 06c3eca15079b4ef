//! Geometric baseline detector: RANSAC ground removal, Euclidean
//! clustering and minimum-area oriented boxes classified by size.

use std::collections::VecDeque;

use log::warn;
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3D, ObjectClass, Point3, PointCloud, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("no near-horizontal ground plane ({inliers} supporting points)")]
    NoPlane { inliers: usize },
    #[error("cluster is degenerate: {0}")]
    Degenerate(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("empty input cloud")]
    EmptyInput,
}

/// Inclusive `(min, max)` bounds on length, width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
}

impl SizePrior {
    pub fn matches(&self, size: [f64; 3]) -> bool {
        [self.length, self.width, self.height]
            .iter()
            .zip(size)
            .all(|(&(lo, hi), v)| v >= lo && v <= hi)
    }

    fn footprint_range(&self) -> (f64, f64) {
        (self.length.0 * self.width.0, self.length.1 * self.width.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub ground_distance_threshold: f64,
    pub ransac_ground_iterations: usize,
    /// Maximum tilt of the ground normal from +z, degrees.
    pub ground_max_tilt_deg: f64,
    /// Minimum share of points that must support the ground plane.
    pub min_ground_fraction: f64,
    pub cluster_distance: f64,
    pub min_cluster_points: usize,
    /// Clusters longer or taller than this are background structure.
    pub max_box_length: f64,
    pub max_box_height: f64,
    pub car_prior: SizePrior,
    pub cyclist_prior: SizePrior,
    pub pedestrian_prior: SizePrior,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            ground_distance_threshold: 0.15,
            ransac_ground_iterations: 200,
            ground_max_tilt_deg: 15.0,
            min_ground_fraction: 0.05,
            cluster_distance: 0.5,
            min_cluster_points: 15,
            max_box_length: 8.0,
            max_box_height: 3.5,
            car_prior: SizePrior { length: (3.0, 6.0), width: (1.4, 2.4), height: (1.2, 2.2) },
            cyclist_prior: SizePrior { length: (1.4, 2.2), width: (0.5, 0.9), height: (1.0, 2.0) },
            pedestrian_prior: SizePrior { length: (0.3, 0.9), width: (0.3, 0.75), height: (1.0, 2.1) },
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let positive = [
            self.ground_distance_threshold,
            self.ground_max_tilt_deg,
            self.min_ground_fraction,
            self.cluster_distance,
            self.max_box_length,
            self.max_box_height,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.ransac_ground_iterations == 0 {
            return Err(DetectorError::InvalidConfig("thresholds must be positive".into()));
        }
        let priors = [self.pedestrian_prior, self.cyclist_prior, self.car_prior];
        for p in &priors {
            if [p.length, p.width, p.height].iter().any(|(lo, hi)| !(lo <= hi && *lo > 0.0)) {
                return Err(DetectorError::InvalidConfig(format!("empty size range {p:?}")));
            }
        }
        let mut areas: Vec<(f64, f64)> = priors.iter().map(SizePrior::footprint_range).collect();
        areas.sort_by(|a, b| a.0.total_cmp(&b.0));
        if areas.windows(2).any(|w| w[0].1 >= w[1].0) {
            return Err(DetectorError::InvalidConfig("class footprint ranges overlap".into()));
        }
        Ok(())
    }

    /// Class from the size priors, falling back on footprint area.
    pub fn classify(&self, size: [f64; 3]) -> ObjectClass {
        for (class, prior) in [
            (ObjectClass::Car, &self.car_prior),
            (ObjectClass::Cyclist, &self.cyclist_prior),
            (ObjectClass::Pedestrian, &self.pedestrian_prior),
        ] {
            if prior.matches(size) {
                return class;
            }
        }
        if size[0] * size[1] < 1.0 {
            ObjectClass::Pedestrian
        } else {
            ObjectClass::Car
        }
    }
}

/// Plane `n · p = d` with unit normal `n` pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub offset: f64,
}

impl GroundPlane {
    pub fn distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    /// Height of the plane below the ground-plane position `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        (self.offset - self.normal.x * x - self.normal.y * y) / self.normal.z
    }
}

fn plane_through(a: &Point3, b: &Point3, c: &Point3) -> Option<GroundPlane> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len < 1e-12 {
        return None;
    }
    let mut n = n / len;
    if n.z < 0.0 {
        n = -n;
    }
    Some(GroundPlane { normal: n, offset: n.dot(&a.coords) })
}

fn least_squares_plane(points: &[Point3]) -> Option<GroundPlane> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords) / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let mut normal: Vec3 = eig.eigenvectors.column(k).into_owned();
    if normal.z < 0.0 {
        normal = -normal;
    }
    normal.normalize_mut();
    normal.iter().all(|v| v.is_finite()).then(|| GroundPlane { normal, offset: normal.dot(&mean) })
}

/// Fits the ground plane and splits the cloud into `(ground, non_ground)`.
pub fn remove_ground(cloud: &PointCloud, cfg: &DetectorConfig) -> Result<(PointCloud, PointCloud), DetectorError> {
    let (_, ground_mask) = fit_ground(cloud, cfg)?;
    let (ground, rest): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&i| ground_mask[i]);
    Ok((cloud.select(&ground), cloud.select(&rest)))
}

/// Ground plane and per-point ground flags.
pub fn fit_ground(cloud: &PointCloud, cfg: &DetectorConfig) -> Result<(GroundPlane, Vec<bool>), DetectorError> {
    cfg.validate()?;
    let pts = &cloud.points;
    if pts.is_empty() {
        return Err(DetectorError::EmptyInput);
    }
    let min_cos = cfg.ground_max_tilt_deg.to_radians().cos();
    let thr = cfg.ground_distance_threshold;
    let needed = ((cfg.min_ground_fraction * pts.len() as f64).ceil() as usize).max(3);
    // Hypotheses are scored on a fixed stride subsample of large clouds.
    let stride = (pts.len() / 20_000).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, GroundPlane)> = None;
    if pts.len() >= 3 {
        for _ in 0..cfg.ransac_ground_iterations {
            let i = rng.random_range(0..pts.len());
            let j = rng.random_range(0..pts.len());
            let k = rng.random_range(0..pts.len());
            let Some(plane) = plane_through(&pts[i], &pts[j], &pts[k]) else { continue };
            if plane.normal.z < min_cos {
                continue;
            }
            let score = pts.iter().step_by(stride).filter(|p| plane.distance(p).abs() <= thr).count();
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, plane));
            }
        }
    }
    let Some((_, coarse)) = best else {
        return Err(DetectorError::NoPlane { inliers: 0 });
    };
    let inliers: Vec<Point3> = pts.iter().filter(|p| coarse.distance(p).abs() <= thr).copied().collect();
    if inliers.len() < needed {
        return Err(DetectorError::NoPlane { inliers: inliers.len() });
    }
    let plane = least_squares_plane(&inliers).filter(|p| p.normal.z >= min_cos).unwrap_or(coarse);
    let mask: Vec<bool> = pts.iter().map(|p| plane.distance(p).abs() <= thr).collect();
    let count = mask.iter().filter(|m| **m).count();
    if count < needed {
        return Err(DetectorError::NoPlane { inliers: count });
    }
    Ok((plane, mask))
}

fn lexicographic(a: &Point3, b: &Point3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Connected components under point distance ≤ `cluster_distance`, keeping
/// those with at least `min_cluster_points`. Points inside each cluster are
/// sorted lexicographically; clusters come largest first, ties by first point.
pub fn cluster_euclidean(cloud: &PointCloud, cfg: &DetectorConfig) -> Vec<PointCloud> {
    let n = cloud.len();
    if n == 0 {
        return Vec::new();
    }
    let tree = KdTree::new(&cloud.points);
    let mut label = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if label[seed] != usize::MAX {
            continue;
        }
        let id = components.len();
        label[seed] = id;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for (j, _) in tree.within_radius(&cloud.points[i], cfg.cluster_distance) {
                if label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        components.push(members);
    }
    let mut clusters: Vec<PointCloud> = components
        .into_iter()
        .filter(|c| c.len() >= cfg.min_cluster_points)
        .map(|mut c| {
            c.sort_by(|&a, &b| lexicographic(&cloud.points[a], &cloud.points[b]).then(a.cmp(&b)));
            cloud.select(&c)
        })
        .collect();
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(lexicographic(&a.points[0], &b.points[0])));
    clusters
}

fn cross2(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain), without collinear points.
pub fn convex_hull_2d(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross2(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle of a convex hull:
/// `(center, length, width, yaw)` with `length ≥ width`.
fn min_area_rectangle(hull: &[Vector2<f64>]) -> (Vector2<f64>, f64, f64, f64) {
    let mut best: Option<(f64, Vector2<f64>, f64, f64, f64)> = None;
    for k in 0..hull.len() {
        let edge = hull[(k + 1) % hull.len()] - hull[k];
        let theta = edge.y.atan2(edge.x);
        let (s, c) = theta.sin_cos();
        let (axis_u, axis_v) = (Vector2::new(c, s), Vector2::new(-s, c));
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in hull {
            let (u, v) = (p.dot(&axis_u), p.dot(&axis_v));
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.is_none_or(|b| area < b.0 - 1e-12) {
            let center = axis_u * (umin + umax) / 2.0 + axis_v * (vmin + vmax) / 2.0;
            best = Some((area, center, umax - umin, vmax - vmin, theta));
        }
    }
    let (_, center, du, dv, theta) = best.expect("hull is nonempty");
    if du >= dv {
        (center, du, dv, theta)
    } else {
        (center, dv, du, theta + std::f64::consts::FRAC_PI_2)
    }
}

/// Oriented box around a cluster with default class priors.
pub fn fit_oriented_box(cluster: &PointCloud) -> Result<Box3D, DetectorError> {
    fit_oriented_box_with(cluster, &DetectorConfig::default())
}

/// Minimum-area BEV rectangle × vertical extent, classified by size; the
/// score grows with the point count.
pub fn fit_oriented_box_with(cluster: &PointCloud, cfg: &DetectorConfig) -> Result<Box3D, DetectorError> {
    if cluster.len() < 3 {
        return Err(DetectorError::Degenerate(format!("{} points", cluster.len())));
    }
    let bev: Vec<Vector2<f64>> = cluster.points.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let hull = convex_hull_2d(&bev);
    if hull.len() < 3 {
        return Err(DetectorError::Degenerate("points are collinear in the ground plane".into()));
    }
    let (center, length, width, yaw) = min_area_rectangle(&hull);
    if width < 1e-9 {
        return Err(DetectorError::Degenerate("zero-width footprint".into()));
    }
    let (zmin, zmax) = cluster
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let height = (zmax - zmin).max(1e-3);
    let size = [length, width, height];
    let score = (cluster.len() as f64 / 200.0).clamp(0.05, 1.0);
    Ok(Box3D::new(Point3::new(center.x, center.y, (zmin + zmax) / 2.0), size, yaw, cfg.classify(size)).with_score(score))
}

/// Detections of one frame, plus whether ground fitting failed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub boxes: Vec<Box3D>,
    pub no_ground: bool,
}

/// Ground removal, clustering and box fitting. Boxes are extended down to
/// the ground plane (occluded lower parts are common) and then classified;
/// clusters larger than the configured limits are dropped.
pub fn detect_frame(cloud: &PointCloud, cfg: &DetectorConfig) -> Result<FrameDetections, DetectorError> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Ok(FrameDetections { boxes: Vec::new(), no_ground: false });
    }
    let (plane, mask) = match fit_ground(cloud, cfg) {
        Ok(found) => found,
        Err(DetectorError::NoPlane { inliers }) => {
            warn!("no ground plane found ({inliers} supporting points); frame yields no detections");
            return Ok(FrameDetections { boxes: Vec::new(), no_ground: true });
        }
        Err(e) => return Err(e),
    };
    let rest: Vec<usize> = (0..cloud.len()).filter(|&i| !mask[i]).collect();
    let non_ground = cloud.select(&rest);
    let mut boxes = Vec::new();
    for cluster in cluster_euclidean(&non_ground, cfg) {
        let Ok(mut b) = fit_oriented_box_with(&cluster, cfg) else { continue };
        let ground_z = plane.height_at(b.center.x, b.center.y);
        let top = b.z_max();
        if b.z_min() - ground_z > cfg.max_box_height / 2.0 {
            continue;
        }
        b.height = top - ground_z;
        b.center.z = (top + ground_z) / 2.0;
        if b.height <= 0.0 || b.length > cfg.max_box_length || b.height > cfg.max_box_height {
            continue;
        }
        b.class = cfg.classify(b.size());
        boxes.push(b);
    }
    Ok(FrameDetections { boxes, no_ground: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{wrap_half_turn, RigidTransform};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use std::f64::consts::FRAC_PI_2;

    fn plane_grid(half: f64, step: f64, z: f64) -> Vec<Point3> {
        let n = (2.0 * half / step) as i64;
        let mut out = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                out.push(Point3::new(-half + i as f64 * step, -half + j as f64 * step, z));
            }
        }
        out
    }

    /// Points on the surface of an axis-aligned box centered at the origin
    /// (bottom face omitted), moved by `pose`.
    fn box_surface(size: [f64; 3], step: f64, pose: &RigidTransform) -> Vec<Point3> {
        let [l, w, h] = size;
        let mut pts = Vec::new();
        let steps = |len: f64| ((len / step).round() as usize).max(1);
        for i in 0..=steps(l) {
            for k in 0..=steps(h) {
                let x = -l / 2.0 + l * i as f64 / steps(l) as f64;
                let z = h * k as f64 / steps(h) as f64;
                pts.push(Point3::new(x, -w / 2.0, z));
                pts.push(Point3::new(x, w / 2.0, z));
            }
            for j in 0..=steps(w) {
                let y = -w / 2.0 + w * j as f64 / steps(w) as f64;
                pts.push(Point3::new(x_at(l, i, steps(l)), y, h));
            }
        }
        for j in 0..=steps(w) {
            for k in 0..=steps(h) {
                let y = -w / 2.0 + w * j as f64 / steps(w) as f64;
                let z = h * k as f64 / steps(h) as f64;
                pts.push(Point3::new(-l / 2.0, y, z));
                pts.push(Point3::new(l / 2.0, y, z));
            }
        }
        pts.iter().map(|p| pose.apply(p)).collect()
    }

    fn x_at(l: f64, i: usize, n: usize) -> f64 {
        -l / 2.0 + l * i as f64 / n as f64
    }

    #[test]
    fn pure_plane_is_all_ground() {
        let cloud = PointCloud::from_points(plane_grid(10.0, 0.5, 0.0));
        let (g, rest) = remove_ground(&cloud, &DetectorConfig::default()).unwrap();
        assert_eq!(g.len(), cloud.len());
        assert!(rest.is_empty());
    }

    #[test]
    fn raised_box_is_not_ground() {
        let mut pts = plane_grid(10.0, 0.25, 0.0);
        let n_ground = pts.len();
        let lifted = RigidTransform::from_translation(Vec3::new(2.0, 3.0, 1.0));
        pts.extend(box_surface([1.0, 1.0, 1.0], 0.1, &lifted));
        let cloud = PointCloud::from_points(pts);
        let (g, rest) = remove_ground(&cloud, &DetectorConfig::default()).unwrap();
        assert_eq!(g.len(), n_ground);
        assert_eq!(g.len() + rest.len(), cloud.len());
        assert!(rest.points.iter().all(|p| p.z >= 1.0));
    }

    #[test]
    fn vertical_wall_has_no_plane() {
        let wall: Vec<Point3> = plane_grid(5.0, 0.25, 0.0).iter().map(|p| Point3::new(p.x, 0.0, p.y)).collect();
        let err = remove_ground(&PointCloud::from_points(wall), &DetectorConfig::default()).unwrap_err();
        assert!(matches!(err, DetectorError::NoPlane { .. }));
    }

    fn blob(center: Point3, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..n)
            .map(|_| center + Vec3::new(rand::Rng::random_range(rng, -0.3..0.3), rand::Rng::random_range(rng, -0.3..0.3), rand::Rng::random_range(rng, -0.3..0.3)))
            .collect()
    }

    #[test]
    fn two_blobs_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(Point3::new(0.0, 0.0, 1.0), 50, &mut rng);
        pts.extend(blob(Point3::new(5.0, 0.0, 1.0), 30, &mut rng));
        let clusters = cluster_euclidean(&PointCloud::from_points(pts), &DetectorConfig::default());
        assert_eq!(clusters.iter().map(PointCloud::len).collect::<Vec<_>>(), vec![50, 30]);
    }

    #[test]
    fn chain_is_one_cluster() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64 * 0.4, 0.0, 0.0)).collect();
        assert_eq!(cluster_euclidean(&PointCloud::from_points(pts), &DetectorConfig::default()).len(), 1);
    }

    #[test]
    fn small_components_are_dropped() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        assert!(cluster_euclidean(&PointCloud::from_points(pts), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn ten_blobs_match_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for b in 0..10 {
            let c = Point3::new((b % 5) as f64 * 3.0, (b / 5) as f64 * 3.0, 1.0);
            let n = 20 + b * 3;
            pts.extend(blob(c, n, &mut rng));
            labels.extend(std::iter::repeat_n(b, n));
        }
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut rng);
        let shuffled = PointCloud::from_points(order.iter().map(|&i| pts[i]).collect());
        let clusters = cluster_euclidean(&shuffled, &DetectorConfig::default());
        assert_eq!(clusters.len(), 10);
        for c in &clusters {
            let lab = |p: &Point3| labels[pts.iter().position(|q| q == p).unwrap()];
            let first = lab(&c.points[0]);
            assert!(c.points.iter().all(|p| lab(p) == first));
            assert_eq!(c.len(), 20 + first * 3);
        }
        let direct = cluster_euclidean(&PointCloud::from_points(pts.clone()), &DetectorConfig::default());
        assert_eq!(direct, clusters);
    }

    #[test]
    fn axis_aligned_car_box() {
        let pts = box_surface([4.0, 2.0, 1.5], 0.1, &RigidTransform::from_translation(Vec3::new(5.0, -2.0, 0.0)));
        let b = fit_oriented_box(&PointCloud::from_points(pts)).unwrap();
        assert!(wrap_half_turn(2.0 * b.yaw).abs() < 1e-6);
        for (got, want) in b.size().iter().zip([4.0, 2.0, 1.5]) {
            assert!((got - want).abs() <= 0.05 * want);
        }
        assert!((b.center - Point3::new(5.0, -2.0, 0.75)).norm() < 1e-6);
        assert_eq!(b.class, ObjectClass::Car);
    }

    #[test]
    fn rotated_box_recovers_yaw() {
        let yaw = 30f64.to_radians();
        let pose = RigidTransform::from_euler(0.0, 0.0, yaw, Vec3::new(-3.0, 4.0, 0.0));
        let b = fit_oriented_box(&PointCloud::from_points(box_surface([4.0, 2.0, 1.5], 0.1, &pose))).unwrap();
        let err = wrap_half_turn(2.0 * (b.yaw - yaw)) / 2.0;
        assert!(err.abs().to_degrees() < 2.0);
        assert!((b.length - 4.0).abs() < 0.2 && (b.width - 2.0).abs() < 0.1);
    }

    #[test]
    fn vertical_line_is_degenerate() {
        let pts: Vec<Point3> = (0..20).map(|i| Point3::new(1.0, 1.0, i as f64 * 0.1)).collect();
        assert!(matches!(fit_oriented_box(&PointCloud::from_points(pts)), Err(DetectorError::Degenerate(_))));
    }

    #[test]
    fn classification_by_priors() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.classify([4.2, 1.8, 1.5]), ObjectClass::Car);
        assert_eq!(cfg.classify([1.8, 0.6, 1.7]), ObjectClass::Cyclist);
        assert_eq!(cfg.classify([0.6, 0.5, 1.7]), ObjectClass::Pedestrian);
        assert_eq!(cfg.classify([0.8, 0.8, 0.5]), ObjectClass::Pedestrian);
        assert_eq!(cfg.classify([2.5, 2.5, 0.5]), ObjectClass::Car);
        assert!(cfg.validate().is_ok());
        let overlapping = DetectorConfig {
            cyclist_prior: SizePrior { length: (0.3, 2.2), width: (0.3, 0.9), height: (1.0, 2.0) },
            ..DetectorConfig::default()
        };
        assert!(overlapping.validate().is_err());
    }

    #[test]
    fn ground_only_scene_has_no_detections() {
        let cloud = PointCloud::from_points(plane_grid(10.0, 0.2, 0.0));
        assert!(detect_frame(&cloud, &DetectorConfig::default()).unwrap().boxes.is_empty());
    }

    #[test]
    fn three_cars_detected() {
        let mut pts = plane_grid(20.0, 0.2, 0.0);
        let centers = [(-8.0, 0.0, 0.0), (0.0, 6.0, 0.7), (9.0, -5.0, 1.4)];
        for &(x, y, yaw) in &centers {
            pts.extend(box_surface([4.4, 1.8, 1.5], 0.1, &RigidTransform::from_euler(0.0, 0.0, yaw, Vec3::new(x, y, 0.0))));
        }
        let found = detect_frame(&PointCloud::from_points(pts), &DetectorConfig::default()).unwrap();
        assert!(!found.no_ground);
        assert_eq!(found.boxes.len(), 3);
        for &(x, y, _) in &centers {
            let hit = found.boxes.iter().find(|b| (b.center.xy().coords - Vector2::new(x, y)).norm() < 0.3).unwrap();
            assert_eq!(hit.class, ObjectClass::Car);
            assert!((hit.center.z - 0.75).abs() < 0.1);
        }
    }

    #[test]
    fn no_plane_yields_flagged_empty_result() {
        let wall: Vec<Point3> = plane_grid(5.0, 0.25, 0.0).iter().map(|p| Point3::new(p.x, 0.0, p.y)).collect();
        let found = detect_frame(&PointCloud::from_points(wall), &DetectorConfig::default()).unwrap();
        assert!(found.no_ground && found.boxes.is_empty());
    }

    proptest! {
        #[test]
        fn rectangle_contains_cluster(raw in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..2.0), 3..60)) {
            let cloud = PointCloud::from_points(raw.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            if let Ok(b) = fit_oriented_box(&cloud) {
                for p in &cloud.points {
                    prop_assert!(b.contains(p, 1e-6));
                }
                prop_assert!(b.length >= b.width);
                prop_assert!(b.validate().is_ok());
            }
        }

        #[test]
        fn hull_rotation_keeps_area(raw in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..40), angle in 0.0f64..FRAC_PI_2) {
            let pts: Vec<Vector2<f64>> = raw.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
            let hull = convex_hull_2d(&pts);
            prop_assume!(hull.len() >= 3);
            let (s, c) = angle.sin_cos();
            let rotated: Vec<_> = pts.iter().map(|p| Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y)).collect();
            let (_, l1, w1, _) = min_area_rectangle(&hull);
            let (_, l2, w2, _) = min_area_rectangle(&convex_hull_2d(&rotated));
            prop_assert!((l1 * w1 - l2 * w2).abs() < 1e-6);
        }
    }
}
