//! Value types shared by every stage (points, clouds, rigid transforms,
//! oriented boxes) and the geometric kernels built on them.

mod camera;
mod iou;
mod voxel;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{project_pinhole, PinholeCamera};
pub use iou::{bev_intersection_area, clip_convex_polygon, iou_3d, iou_bev, polygon_area};
pub use voxel::{voxel_downsample, voxel_key};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Orthonormality / determinant tolerance for [`RigidTransform`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Wraps an angle into (-π/2, π/2], treating headings that differ by π as
/// the same orientation (boxes are symmetric under a half turn).
pub fn wrap_half_turn(angle: f64) -> f64 {
    let mut a = wrap_angle(angle);
    if a > PI / 2.0 {
        a -= PI;
    } else if a <= -PI / 2.0 {
        a += PI;
    }
    a
}

/// One LiDAR frame (or an accumulation / fusion of frames).
///
/// The optional per-point lists are either empty or exactly as long as
/// `points`. `source_node` identifies the node that produced the whole
/// cloud, while `point_source` tags each point after multi-view fusion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Vec<f32>,
    pub timestamp_ns: u64,
    pub time_index: Vec<u16>,
    pub point_source: Vec<u16>,
    pub source_node: Option<u16>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_intensity(&self) -> bool {
        !self.intensity.is_empty()
    }

    pub fn has_time_index(&self) -> bool {
        !self.time_index.is_empty()
    }

    pub fn has_point_source(&self) -> bool {
        !self.point_source.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.points.len();
        for (name, len) in [
            ("intensity", self.intensity.len()),
            ("time_index", self.time_index.len()),
            ("point_source", self.point_source.len()),
        ] {
            if len != 0 && len != n {
                return Err(GeometryError::InvalidCloud(format!(
                    "{name} has {len} entries for {n} points"
                )));
            }
        }
        if let Some(i) = self.points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidCloud(format!("point {i} is not finite")));
        }
        Ok(())
    }

    /// Copies the points at `indices` (and their per-point attributes).
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: pick(&self.intensity, indices),
            timestamp_ns: self.timestamp_ns,
            time_index: pick(&self.time_index, indices),
            point_source: pick(&self.point_source, indices),
            source_node: self.source_node,
        }
    }

    /// Appends `other`. Optional attributes survive only when both sides
    /// carry them (or `self` is still empty).
    pub fn extend_from(&mut self, other: &PointCloud) {
        if other.points.is_empty() {
            return;
        }
        if self.points.is_empty() {
            self.intensity = other.intensity.clone();
            self.time_index = other.time_index.clone();
            self.point_source = other.point_source.clone();
        } else {
            merge_attr(&mut self.intensity, &other.intensity);
            merge_attr(&mut self.time_index, &other.time_index);
            merge_attr(&mut self.point_source, &other.point_source);
        }
        self.points.extend_from_slice(&other.points);
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }
}

fn pick<T: Copy>(values: &[T], indices: &[usize]) -> Vec<T> {
    if values.is_empty() {
        Vec::new()
    } else {
        indices.iter().map(|&i| values[i]).collect()
    }
}

fn merge_attr<T: Copy>(dst: &mut Vec<T>, src: &[T]) {
    if !dst.is_empty() && !src.is_empty() {
        dst.extend_from_slice(src);
    } else {
        dst.clear();
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validating constructor: the rotation must be orthonormal with
    /// determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform(format!("det(R) = {det}")));
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a transform from a matrix that is only approximately a
    /// rotation, projecting it onto SO(3).
    pub fn from_approximate(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: project_to_rotation(&rotation),
            translation,
        }
    }

    /// Trusted constructor for rotations produced by an orthogonal
    /// factorization (no projection, no checks).
    pub(crate) fn from_rotation_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self { rotation, translation }
    }

    /// Roll about x, then pitch about y, then yaw about z (`R = Rz·Ry·Rx`).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vec3) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Angle in degrees of the relative rotation between `self` and `other`.
    pub fn rotation_error_deg(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos().to_degrees()
    }

    pub fn translation_error(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Largest absolute entry difference of the rotation and translation.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major rotation entries, the layout used by calibration records.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&rotation), Vec3::from(translation))
    }
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Applies `t` to every point; all other fields are copied unchanged.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        ..cloud.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Cyclist,
    Pedestrian,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Cyclist, ObjectClass::Pedestrian];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Pedestrian => "Pedestrian",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ObjectClass::Car),
            "cyclist" => Ok(ObjectClass::Cyclist),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            other => Err(GeometryError::InvalidArgument(format!("unknown class {other:?}"))),
        }
    }
}

/// Yaw-oriented 3D box. `center` is the geometric center (not the bottom
/// face); `length` runs along the heading `yaw`, `width` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Point3,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
    pub track_id: Option<u64>,
}

impl Box3D {
    pub fn new(center: Point3, size: [f64; 3], yaw: f64, class: ObjectClass) -> Self {
        Self {
            center,
            length: size[0],
            width: size[1],
            height: size[2],
            yaw: wrap_angle(yaw),
            class,
            score: 1.0,
            track_id: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_track_id(mut self, id: u64) -> Self {
        self.track_id = Some(id);
        self
    }

    pub fn size(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn footprint_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - self.height / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + self.height / 2.0
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = self.center.coords.iter().all(|c| c.is_finite())
            && [self.length, self.width, self.height, self.yaw, self.score]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidBox("non-finite field".into()));
        }
        if self.length <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "non-positive size {:?}",
                self.size()
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(GeometryError::InvalidBox(format!("yaw {} outside (-π, π]", self.yaw)));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidBox(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    /// Counter-clockwise ground-plane corners.
    pub fn bev_corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let along = Vector2::new(c, s);
        let across = Vector2::new(-s, c);
        let center = Vector2::new(self.center.x, self.center.y);
        [
            center + along * hl + across * hw,
            center - along * hl + across * hw,
            center - along * hl - across * hw,
            center + along * hl - across * hw,
        ]
    }

    /// Whether `p` lies inside the box, with `slack` meters of tolerance.
    pub fn contains(&self, p: &Point3, slack: f64) -> bool {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        let along = d.x * c + d.y * s;
        let across = -d.x * s + d.y * c;
        along.abs() <= self.length / 2.0 + slack
            && across.abs() <= self.width / 2.0 + slack
            && d.z.abs() <= self.height / 2.0 + slack
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_transform(rx: f64, ry: f64, rz: f64, t: [f64; 3]) -> RigidTransform {
        RigidTransform::from_euler(rx, ry, rz, Vec3::from(t))
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let mut cloud = PointCloud::from_points(vec![Point3::new(1.0, -2.0, 3.5), Point3::new(0.0, 0.0, 0.0)]);
        cloud.intensity = vec![0.5, 0.25];
        cloud.timestamp_ns = 42;
        assert_eq!(apply_transform(&RigidTransform::identity(), &cloud), cloud);
    }

    #[test]
    fn pure_translation() {
        let t = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let cloud = PointCloud::from_points(vec![Point3::origin()]);
        assert_eq!(apply_transform(&t, &cloud).points[0], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(Vec3::z(), PI / 2.0, Vec3::zeros());
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = random_transform(0.3, -0.2, 1.1, [4.0, -1.0, 2.0]);
        assert_eq!(RigidTransform::identity().compose(&t), t);
        let id = t.compose(&t.inverse());
        assert!(id.max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn compose_z_rotations() {
        let a = RigidTransform::from_axis_angle(Vec3::z(), 30f64.to_radians(), Vec3::zeros());
        let b = RigidTransform::from_axis_angle(Vec3::z(), 60f64.to_radians(), Vec3::zeros());
        let c = RigidTransform::from_axis_angle(Vec3::z(), 90f64.to_radians(), Vec3::zeros());
        assert!(a.compose(&b).max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn new_rejects_reflection_and_skew() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
        m[(2, 2)] = 1.01;
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_half_turn(PI), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_half_turn(0.75 * PI), -0.25 * PI, epsilon = 1e-12);
    }

    #[test]
    fn cloud_validation_catches_length_mismatch() {
        let mut cloud = PointCloud::from_points(vec![Point3::origin(); 3]);
        cloud.intensity = vec![1.0];
        assert!(cloud.validate().is_err());
    }

    #[test]
    fn extend_drops_attributes_missing_on_one_side() {
        let mut a = PointCloud::from_points(vec![Point3::origin()]);
        a.intensity = vec![1.0];
        a.time_index = vec![0];
        let mut b = PointCloud::from_points(vec![Point3::new(1.0, 0.0, 0.0)]);
        b.time_index = vec![1];
        a.extend_from(&b);
        assert_eq!(a.len(), 2);
        assert!(a.intensity.is_empty());
        assert_eq!(a.time_index, vec![0, 1]);
        a.validate().unwrap();
    }

    proptest! {
        #[test]
        fn transforms_preserve_distances(
            rx in -3.0..3.0f64, ry in -3.0..3.0f64, rz in -3.0..3.0f64,
            tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -50.0..50.0f64,
            p in prop::array::uniform3(-100.0..100.0f64),
            q in prop::array::uniform3(-100.0..100.0f64),
        ) {
            let t = random_transform(rx, ry, rz, [tx, ty, tz]);
            let (p, q) = (Point3::from(p), Point3::from(q));
            let before = (p - q).norm();
            let after = (t.apply(&p) - t.apply(&q)).norm();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(
            a in prop::array::uniform3(-3.0..3.0f64),
            b in prop::array::uniform3(-3.0..3.0f64),
            c in prop::array::uniform3(-3.0..3.0f64),
            ta in prop::array::uniform3(-20.0..20.0f64),
            tb in prop::array::uniform3(-20.0..20.0f64),
            tc in prop::array::uniform3(-20.0..20.0f64),
        ) {
            let a = random_transform(a[0], a[1], a[2], ta);
            let b = random_transform(b[0], b[1], b[2], tb);
            let c = random_transform(c[0], c[1], c[2], tc);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
            let id = a.inverse().compose(&a);
            prop_assert!(id.max_abs_diff(&RigidTransform::identity()) < 1e-9);
        }
    }
}
