//! Synthetic crossroad scenes.
//!
//! A layout holds static structure (corner buildings, street furniture,
//! parked vehicles), moving objects and LiDAR node poses. Frames are
//! rendered per node by first-hit ray casting over a 100°×40° field of
//! view, so occlusion and range falloff come out naturally. The same
//! layout also renders a dense 360° reference scan of the static
//! structure, standing in for a survey-grade scan of the site.

mod raycast;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3D, ObjectClass, Point3, PointCloud, RigidTransform, Vec3};
use crate::tracking::TrajectorySet;

pub use raycast::SurfaceLabel;
use raycast::{Solid, World};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {0} without overlaps")]
    Placement(String),
}

/// Scanning pattern of a node sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub h_samples: usize,
    pub v_samples: usize,
    pub max_range: f64,
    pub frame_rate_hz: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self { h_fov_deg: 100.0, v_fov_deg: 40.0, h_samples: 320, v_samples: 110, max_range: 120.0, frame_rate_hz: 10.0 }
    }
}

/// Static box standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticBox {
    pub center: [f64; 2],
    pub size: [f64; 3],
    pub yaw: f64,
}

/// A moving (or parked) road user with constant ground velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    pub center: [f64; 2],
    pub size: [f64; 3],
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
}

/// Node pose as position plus roll/pitch/yaw in degrees (node → world).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePose {
    pub position: [f64; 3],
    pub rpy_deg: [f64; 3],
}

impl NodePose {
    pub fn to_transform(&self) -> RigidTransform {
        let [r, p, y] = self.rpy_deg.map(f64::to_radians);
        RigidTransform::from_euler(r, p, y, Vec3::from(self.position))
    }

    /// Node at `position` looking horizontally-ish at `(x, y)` with the
    /// given downward pitch.
    pub fn looking_at(position: [f64; 3], target: [f64; 2], pitch_deg: f64) -> Self {
        let yaw = (target[1] - position[1]).atan2(target[0] - position[0]);
        Self { position, rpy_deg: [0.0, pitch_deg, yaw.to_degrees()] }
    }
}

/// Scene description. Random elements are drawn from the seed passed to
/// [`SceneLayout::sample`]; explicit lists are appended as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Buildings reach out to this distance from the crossing (m).
    pub half_extent: f64,
    pub road_half_width: f64,
    pub ground_half_extent: f64,
    pub buildings: bool,
    pub furniture: usize,
    pub parked_vehicles: usize,
    pub statics: Vec<StaticBox>,
    /// Random node count, used when `nodes` is empty.
    pub node_count: usize,
    pub nodes: Vec<NodePose>,
    pub cars: usize,
    pub cyclists: usize,
    pub pedestrians: usize,
    pub objects: Vec<ObjectSpec>,
    pub noise_sigma: f64,
    pub lidar: LidarModel,
    pub frame_count: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            half_extent: 25.0,
            road_half_width: 7.0,
            ground_half_extent: 45.0,
            buildings: true,
            furniture: 10,
            parked_vehicles: 0,
            statics: Vec::new(),
            node_count: 4,
            nodes: Vec::new(),
            cars: 0,
            cyclists: 0,
            pedestrians: 0,
            objects: Vec::new(),
            noise_sigma: 0.02,
            lidar: LidarModel::default(),
            frame_count: 1,
        }
    }
}

impl SceneSpec {
    /// Crossroad with buildings, furniture, parked vans that occlude parts
    /// of the crossing, and a mix of road users.
    pub fn standard_crossroad() -> Self {
        Self { parked_vehicles: 3, cars: 6, cyclists: 4, pedestrians: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidSpec(m.to_string()));
        if !(self.half_extent > 0.0) || !(self.road_half_width > 0.0) || self.road_half_width >= self.half_extent {
            return bad("need 0 < road_half_width < half_extent");
        }
        if !(self.ground_half_extent > 0.0) {
            return bad("ground_half_extent must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative");
        }
        let l = &self.lidar;
        if !(l.h_fov_deg > 0.0 && l.h_fov_deg <= 360.0 && l.v_fov_deg > 0.0 && l.v_fov_deg < 180.0) {
            return bad("lidar field of view out of range");
        }
        if l.h_samples == 0 || l.v_samples == 0 || !(l.max_range > 0.0) || !(l.frame_rate_hz > 0.0) {
            return bad("lidar sampling must be positive");
        }
        if self.nodes.is_empty() && self.node_count == 0 {
            return bad("at least one node is required");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive");
        }
        let positive = |s: &[f64; 3]| s.iter().all(|v| *v > 0.0 && v.is_finite());
        if !self.objects.iter().all(|o| positive(&o.size)) || !self.statics.iter().all(|s| positive(&s.size)) {
            return bad("box sizes must be positive");
        }
        Ok(())
    }
}

/// Dense 360° scan of the static structure, in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceScan {
    pub position: [f64; 3],
    pub az_step_deg: f64,
    pub el_min_deg: f64,
    pub el_max_deg: f64,
    pub el_step_deg: f64,
    pub noise_sigma: f64,
    pub max_range: f64,
}

impl Default for ReferenceScan {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, 1.5],
            az_step_deg: 0.2,
            el_min_deg: -60.0,
            el_max_deg: 40.0,
            el_step_deg: 0.2,
            noise_sigma: 0.003,
            max_range: 120.0,
        }
    }
}

/// A sampled scene: geometry plus node poses, rendered on demand.
#[derive(Debug, Clone)]
pub struct SceneLayout {
    pub spec: SceneSpec,
    pub seed: u64,
    /// Node → world.
    pub extrinsics: Vec<RigidTransform>,
    pub objects: Vec<ObjectSpec>,
    pub statics: Vec<StaticBox>,
    solids: Vec<Solid>,
}

fn solid_of(s: &StaticBox) -> Solid {
    Solid::new(Point3::new(s.center[0], s.center[1], s.size[2] / 2.0), s.size, s.yaw)
}

fn half_diagonal(size: &[f64; 3]) -> f64 {
    0.5 * (size[0] * size[0] + size[1] * size[1]).sqrt()
}

struct Placer<'a> {
    statics: &'a [StaticBox],
    nodes: Vec<[f64; 2]>,
    placed: Vec<([f64; 2], f64)>,
}

impl Placer<'_> {
    fn free(&self, c: [f64; 2], size: &[f64; 3], margin: f64) -> bool {
        let r = half_diagonal(size);
        let clear_static = self.statics.iter().all(|s| solid_of(s).footprint_distance(c[0], c[1]) > r + margin);
        let clear_nodes = self.nodes.iter().all(|n| ((n[0] - c[0]).powi(2) + (n[1] - c[1]).powi(2)).sqrt() > r + 1.5);
        let clear_objects = self
            .placed
            .iter()
            .all(|(p, pr)| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() > r + pr + margin);
        clear_static && clear_nodes && clear_objects
    }
}

/// Unit vector and its left normal for crossroad arm `a` (0..4).
fn arm_axes(a: usize) -> ([f64; 2], [f64; 2]) {
    let th = a as f64 * PI / 2.0;
    ([th.cos(), th.sin()], [-th.sin(), th.cos()])
}

fn on_arm(a: usize, along: f64, lateral: f64) -> [f64; 2] {
    let (u, n) = arm_axes(a);
    [u[0] * along + n[0] * lateral, u[1] * along + n[1] * lateral]
}

impl SceneLayout {
    pub fn sample(spec: &SceneSpec, seed: u64) -> Result<Self, SceneError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rw = spec.road_half_width;
        let ext = spec.half_extent;
        let mut statics: Vec<StaticBox> = Vec::new();

        if spec.buildings {
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                let inner_x = rw + rng.random_range(2.0..4.0);
                let inner_y = rw + rng.random_range(2.0..4.0);
                let outer = ext + rng.random_range(0.0..5.0);
                let parts = rng.random_range(1..=3usize);
                let along_x = rng.random_bool(0.5);
                let span = outer - if along_x { inner_x } else { inner_y };
                let depth_lo = if along_x { inner_y } else { inner_x };
                for k in 0..parts {
                    let a0 = k as f64 * span / parts as f64;
                    let a1 = (k + 1) as f64 * span / parts as f64;
                    let height = rng.random_range(6.0..18.0);
                    let (x0, x1, y0, y1) = if along_x {
                        (inner_x + a0, inner_x + a1, depth_lo, outer)
                    } else {
                        (inner_x, outer, inner_y + a0, inner_y + a1)
                    };
                    statics.push(StaticBox {
                        center: [sx * (x0 + x1) / 2.0, sy * (y0 + y1) / 2.0],
                        size: [x1 - x0, y1 - y0, height],
                        yaw: 0.0,
                    });
                }
            }
        }

        let mut placed_furniture = 0;
        let mut attempts = 0;
        while placed_furniture < spec.furniture {
            attempts += 1;
            if attempts > 1000 * (spec.furniture + 1) {
                return Err(SceneError::Placement("street furniture".into()));
            }
            let size = match rng.random_range(0..4) {
                0 => [0.3, 0.3, rng.random_range(3.0..6.0)],
                1 => [2.0, 1.4, rng.random_range(2.2..2.8)],
                2 => [rng.random_range(2.5..4.0), 0.2, 2.2],
                _ => [1.4, 1.4, rng.random_range(0.6..1.0)],
            };
            let arm = rng.random_range(0..4);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let along = rng.random_range(rw + 2.0..ext);
            let lateral = side * (rw + 0.2 + size[1] / 2.0 + rng.random_range(0.0..0.6));
            let center = on_arm(arm, along, lateral);
            let yaw = arm as f64 * PI / 2.0;
            let candidate = StaticBox { center, size, yaw };
            let r = half_diagonal(&size);
            if statics.iter().all(|s| solid_of(s).footprint_distance(center[0], center[1]) > r + 0.3) {
                statics.push(candidate);
                placed_furniture += 1;
            }
        }

        for _ in 0..spec.parked_vehicles {
            let mut ok = false;
            for _ in 0..1000 {
                let size = [rng.random_range(5.5..7.0), 2.4, rng.random_range(2.6..3.2)];
                let arm = rng.random_range(0..4);
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let along = rng.random_range(rw + 3.0..16.0);
                let center = on_arm(arm, along, side * (rw - 1.6));
                let r = half_diagonal(&size);
                if statics.iter().all(|s| solid_of(s).footprint_distance(center[0], center[1]) > r + 0.5) {
                    statics.push(StaticBox { center, size, yaw: arm as f64 * PI / 2.0 });
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(SceneError::Placement("parked vehicle".into()));
            }
        }
        statics.extend(spec.statics.iter().copied());

        let poses: Vec<NodePose> = if spec.nodes.is_empty() {
            (0..spec.node_count)
                .map(|k| {
                    let theta = 2.0 * PI * k as f64 / spec.node_count as f64 + rng.random_range(-0.15..0.15);
                    let dist: f64 = rng.random_range(15.0..28.0);
                    let lateral = rng.random_range(-3.0..3.0);
                    let x = dist * theta.cos() - lateral * theta.sin();
                    let y = dist * theta.sin() + lateral * theta.cos();
                    let z = rng.random_range(2.0..5.0);
                    let facing = (-y).atan2(-x) + rng.random_range(-30f64..30.0).to_radians();
                    NodePose {
                        position: [x, y, z],
                        rpy_deg: [rng.random_range(-5.0..5.0), rng.random_range(0.0..10.0), facing.to_degrees()],
                    }
                })
                .collect()
        } else {
            spec.nodes.clone()
        };
        let extrinsics: Vec<RigidTransform> = poses.iter().map(NodePose::to_transform).collect();

        let mut placer = Placer {
            statics: &statics,
            nodes: poses.iter().map(|p| [p.position[0], p.position[1]]).collect(),
            placed: Vec::new(),
        };
        let mut objects = Vec::new();
        let kinds = [
            (ObjectClass::Car, spec.cars),
            (ObjectClass::Cyclist, spec.cyclists),
            (ObjectClass::Pedestrian, spec.pedestrians),
        ];
        for (class, count) in kinds {
            for _ in 0..count {
                let mut done = false;
                for _ in 0..2000 {
                    let o = random_object(&mut rng, class, rw, ext);
                    if placer.free(o.center, &o.size, 0.6) {
                        placer.placed.push((o.center, half_diagonal(&o.size)));
                        objects.push(o);
                        done = true;
                        break;
                    }
                }
                if !done {
                    return Err(SceneError::Placement(format!("{class}")));
                }
            }
        }
        objects.extend(spec.objects.iter().copied());

        let solids = statics.iter().map(solid_of).collect();
        Ok(Self { spec: spec.clone(), seed, extrinsics, objects, statics, solids })
    }

    pub fn frame_dt(&self) -> f64 {
        1.0 / self.spec.lidar.frame_rate_hz
    }

    pub fn frame_timestamp_ns(&self, frame: usize) -> u64 {
        (frame as f64 * 1e9 / self.spec.lidar.frame_rate_hz).round() as u64
    }

    /// Ground-truth box of object `i` at `frame` (track id = `i`).
    pub fn object_box(&self, i: usize, frame: usize) -> Box3D {
        let o = &self.objects[i];
        let t = frame as f64 * self.frame_dt();
        let center = Point3::new(o.center[0] + o.velocity[0] * t, o.center[1] + o.velocity[1] * t, o.size[2] / 2.0);
        Box3D::new(center, o.size, o.yaw, o.class).with_track_id(i as u64)
    }

    pub fn gt_boxes(&self, frame: usize) -> Vec<Box3D> {
        (0..self.objects.len()).map(|i| self.object_box(i, frame)).collect()
    }

    fn object_solids(&self, frame: usize) -> Vec<Solid> {
        (0..self.objects.len())
            .map(|i| {
                let b = self.object_box(i, frame);
                Solid::new(b.center, b.size(), b.yaw)
            })
            .collect()
    }

    fn noise_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// One node frame in the node's own coordinates, with the surface
    /// label of every point.
    pub fn render(&self, node: usize, frame: usize) -> (PointCloud, Vec<SurfaceLabel>) {
        let lidar = &self.spec.lidar;
        let pose = &self.extrinsics[node];
        let objects = self.object_solids(frame);
        let world = World {
            ground_half_extent: self.spec.ground_half_extent,
            statics: &self.solids,
            objects: &objects,
            max_range: lidar.max_range,
        };
        let mut rng = self.noise_rng(((node as u64 + 1) << 32) | frame as u64);
        let (off_h, off_v): (f64, f64) = (rng.random(), rng.random());
        let h_step = lidar.h_fov_deg.to_radians() / lidar.h_samples as f64;
        let v_step = lidar.v_fov_deg.to_radians() / lidar.v_samples as f64;
        let h0 = -lidar.h_fov_deg.to_radians() / 2.0;
        let v0 = -lidar.v_fov_deg.to_radians() / 2.0;
        let origin = Point3::from(*pose.translation());
        let hits: Vec<(Vec3, f64, SurfaceLabel)> = (0..lidar.h_samples * lidar.v_samples)
            .into_par_iter()
            .filter_map(|k| {
                let az = h0 + (((k / lidar.v_samples) as f64) + off_h) * h_step;
                let el = v0 + (((k % lidar.v_samples) as f64) + off_v) * v_step;
                let d_local = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                let d = pose.apply_vector(&d_local);
                world.cast(&origin, &d).map(|(t, label)| (d_local, t, label))
            })
            .collect();
        let normal = Normal::new(0.0, self.spec.noise_sigma.max(0.0)).expect("valid sigma");
        let mut cloud = PointCloud {
            timestamp_ns: self.frame_timestamp_ns(frame),
            source_node: Some(node as u16),
            ..PointCloud::default()
        };
        let mut labels = Vec::with_capacity(hits.len());
        for (d, t, label) in hits {
            let mut p = Point3::from(d * t);
            if self.spec.noise_sigma > 0.0 {
                p += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            }
            cloud.points.push(p);
            cloud.intensity.push(reflectivity(label) / (1.0 + t as f32 / 50.0));
            labels.push(label);
        }
        (cloud, labels)
    }

    /// Dense scan of static structure only, in world coordinates.
    pub fn render_reference(&self, scan: &ReferenceScan) -> PointCloud {
        let world = World {
            ground_half_extent: self.spec.ground_half_extent,
            statics: &self.solids,
            objects: &[],
            max_range: scan.max_range,
        };
        let origin = Point3::from(scan.position);
        let n_az = (360.0 / scan.az_step_deg).round().max(1.0) as usize;
        let n_el = ((scan.el_max_deg - scan.el_min_deg) / scan.el_step_deg).round().max(1.0) as usize;
        let hits: Vec<(Point3, f64, SurfaceLabel)> = (0..n_az * n_el)
            .into_par_iter()
            .filter_map(|k| {
                let az = ((k / n_el) as f64 * scan.az_step_deg).to_radians();
                let el = (scan.el_min_deg + (k % n_el) as f64 * scan.el_step_deg).to_radians();
                let d = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                world.cast(&origin, &d).map(|(t, label)| (origin + d * t, t, label))
            })
            .collect();
        let mut rng = self.noise_rng(0);
        let normal = Normal::new(0.0, scan.noise_sigma.max(0.0)).expect("valid sigma");
        let mut cloud = PointCloud::default();
        for (mut p, t, label) in hits {
            if scan.noise_sigma > 0.0 {
                p += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            }
            cloud.points.push(p);
            cloud.intensity.push(reflectivity(label) / (1.0 + t as f32 / 50.0));
        }
        cloud
    }

    /// Top corners of static structure, sorted by distance from `around`.
    pub fn static_corners(&self, around: &Point3) -> Vec<Point3> {
        let mut corners: Vec<Point3> = self.solids.iter().flat_map(|s| s.corners()[4..].to_vec()).collect();
        corners.sort_by(|a, b| {
            let da = (a.xy() - around.xy()).norm();
            let db = (b.xy() - around.xy()).norm();
            da.total_cmp(&db)
        });
        corners
    }
}

fn reflectivity(label: SurfaceLabel) -> f32 {
    match label {
        SurfaceLabel::Ground => 0.15,
        SurfaceLabel::Static(_) => 0.4,
        SurfaceLabel::Object(_) => 0.7,
    }
}

fn random_object(rng: &mut ChaCha8Rng, class: ObjectClass, rw: f64, ext: f64) -> ObjectSpec {
    let arm = rng.random_range(0..4);
    let forward = rng.random_bool(0.5);
    let heading = arm as f64 * PI / 2.0 + if forward { 0.0 } else { PI };
    let (size, lateral, speed) = match class {
        ObjectClass::Car => (
            [rng.random_range(3.8..5.0), rng.random_range(1.7..2.0), rng.random_range(1.4..1.8)],
            if forward { -3.5 } else { 3.5 },
            rng.random_range(0.0..8.0),
        ),
        ObjectClass::Cyclist => (
            [rng.random_range(1.6..1.9), rng.random_range(0.6..0.8), rng.random_range(1.5..1.8)],
            if forward { -(rw - 1.2) } else { rw - 1.2 },
            rng.random_range(2.0..5.0),
        ),
        ObjectClass::Pedestrian => (
            [rng.random_range(0.5..0.7), rng.random_range(0.45..0.65), rng.random_range(1.6..1.85)],
            (if rng.random_bool(0.5) { 1.0 } else { -1.0 }) * rng.random_range(0.0..rw + 1.5),
            rng.random_range(0.0..1.5),
        ),
    };
    let along = rng.random_range(0.0..ext - 3.0);
    let jitter = if class == ObjectClass::Pedestrian { rng.random_range(-PI..PI) } else { rng.random_range(-0.05..0.05) };
    let yaw = crate::geometry::wrap_angle(heading + jitter);
    ObjectSpec {
        class,
        center: on_arm(arm, along, lateral),
        size,
        yaw,
        velocity: [speed * yaw.cos(), speed * yaw.sin()],
    }
}

/// Fully rendered scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub layout: SceneLayout,
    /// `frames[node][frame]`, node coordinates.
    pub frames: Vec<Vec<PointCloud>>,
    pub labels: Vec<Vec<Vec<SurfaceLabel>>>,
    /// `gt_boxes[frame]`, world coordinates.
    pub gt_boxes: Vec<Vec<Box3D>>,
    /// Node → world.
    pub extrinsics: Vec<RigidTransform>,
    pub trajectories: TrajectorySet,
}

/// Samples a layout and renders every node frame.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene, SceneError> {
    let layout = SceneLayout::sample(spec, seed)?;
    let nodes = layout.extrinsics.len();
    let mut frames = Vec::with_capacity(nodes);
    let mut labels = Vec::with_capacity(nodes);
    for node in 0..nodes {
        let (f, l): (Vec<_>, Vec<_>) = (0..spec.frame_count).map(|k| layout.render(node, k)).unzip();
        frames.push(f);
        labels.push(l);
    }
    let gt_boxes: Vec<Vec<Box3D>> = (0..spec.frame_count).map(|k| layout.gt_boxes(k)).collect();
    let mut trajectories = TrajectorySet::new();
    for (k, boxes) in gt_boxes.iter().enumerate() {
        for b in boxes {
            trajectories.entry(b.track_id.unwrap_or_default()).or_default().push((k, *b));
        }
    }
    Ok(SyntheticScene { extrinsics: layout.extrinsics.clone(), layout, frames, labels, gt_boxes, trajectories })
}

/// Small structured scene for registration tests: a ground patch, a few
/// walls and boxes, all surfaces sampled uniformly (about 20k points).
pub fn structured_test_scene(seed: u64, noise: f64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let spacing = 0.5;
    let n = (40.0 / spacing) as usize;
    for i in 0..n {
        for j in 0..n {
            let x = -20.0 + (i as f64 + rng.random::<f64>()) * spacing;
            let y = -20.0 + (j as f64 + rng.random::<f64>()) * spacing;
            points.push(Point3::new(x, y, 0.0));
        }
    }
    let mut solids = Vec::new();
    for _ in 0..3 {
        let c = Point3::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), 0.0);
        let size = [rng.random_range(10.0..20.0), 0.4, rng.random_range(3.0..6.0)];
        solids.push(Solid::new(Point3::new(c.x, c.y, size[2] / 2.0), size, rng.random_range(-PI..PI)));
    }
    for _ in 0..8 {
        let c = Point3::new(rng.random_range(-17.0..17.0), rng.random_range(-17.0..17.0), 0.0);
        let size = [rng.random_range(1.0..6.0), rng.random_range(1.0..6.0), rng.random_range(1.0..5.0)];
        solids.push(Solid::new(Point3::new(c.x, c.y, size[2] / 2.0), size, rng.random_range(-PI..PI)));
    }
    for s in &solids {
        sample_surface(s, 6.0, &mut rng, &mut points);
    }
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("valid sigma");
        for p in &mut points {
            *p += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    PointCloud::from_points(points)
}

/// Uniform samples on the four sides and top of a solid.
fn sample_surface(s: &Solid, density: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Point3>) {
    let c = s.corners();
    // Faces as (origin corner, edge a, edge b), corners indexed by bits (x, y, z).
    let faces = [(0, 1, 4), (2, 3, 6), (0, 2, 4), (1, 3, 5), (4, 5, 6)];
    for (o, a, b) in faces {
        let ea = c[a] - c[o];
        let eb = c[b] - c[o];
        let area = ea.cross(&eb).norm();
        let count = (area * density).round() as usize;
        for _ in 0..count {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            out.push(c[o] + ea * u + eb * v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_scene_is_deterministic() {
        let a = structured_test_scene(7, 0.01);
        assert_eq!(a, structured_test_scene(7, 0.01));
        assert!(a.len() > 10_000);
        assert_ne!(a, structured_test_scene(8, 0.01));
    }

    #[test]
    fn empty_scene_has_no_ground_truth() {
        let spec = SceneSpec { lidar: LidarModel { h_samples: 80, v_samples: 30, ..LidarModel::default() }, ..SceneSpec::default() };
        let scene = generate_synthetic_scene(&spec, 3).unwrap();
        assert!(scene.gt_boxes[0].is_empty());
        assert!(scene.trajectories.is_empty());
        for labels in scene.labels.iter().flatten() {
            assert!(labels.iter().all(|l| !matches!(l, SurfaceLabel::Object(_))));
        }
    }

    #[test]
    fn rendering_is_reproducible() {
        let spec = SceneSpec {
            cars: 2,
            pedestrians: 2,
            lidar: LidarModel { h_samples: 60, v_samples: 20, ..LidarModel::default() },
            ..SceneSpec::default()
        };
        let a = generate_synthetic_scene(&spec, 11).unwrap();
        let b = generate_synthetic_scene(&spec, 11).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.gt_boxes, b.gt_boxes);
        assert_eq!(a.extrinsics, b.extrinsics);
    }

    #[test]
    fn random_node_poses_stay_in_range() {
        for seed in 0..20 {
            let layout = SceneLayout::sample(&SceneSpec::standard_crossroad(), seed).unwrap();
            for t in &layout.extrinsics {
                assert!(t.translation().norm() <= 30.0);
            }
            assert_eq!(layout.objects.len(), 20);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SceneSpec { noise_sigma: -1.0, ..SceneSpec::default() };
        assert!(matches!(SceneLayout::sample(&spec, 0), Err(SceneError::InvalidSpec(_))));
        let spec = SceneSpec { frame_count: 0, ..SceneSpec::default() };
        assert!(SceneLayout::sample(&spec, 0).is_err());
    }

    #[test]
    fn points_are_in_node_frame() {
        let spec = SceneSpec { lidar: LidarModel { h_samples: 40, v_samples: 20, ..LidarModel::default() }, noise_sigma: 0.0, ..SceneSpec::default() };
        let layout = SceneLayout::sample(&spec, 5).unwrap();
        let (cloud, labels) = layout.render(0, 0);
        let pose = &layout.extrinsics[0];
        for (p, l) in cloud.points.iter().zip(&labels) {
            if *l == SurfaceLabel::Ground {
                assert!(pose.apply(p).z.abs() < 1e-9);
            }
        }
    }
}
