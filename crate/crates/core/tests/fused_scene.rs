//! Early fusion and detection on rendered scenes, with the generator's
//! ground truth as the oracle.

use mvlk::fusion::{early_fuse, ViewFrameSet};
use mvlk::geometry::{apply_transform, Point3, RigidTransform, Vec3};
use mvlk::scene::{generate_synthetic_scene, NodePose, SceneSpec, StaticBox, SurfaceLabel, SyntheticScene};
use nalgebra::Matrix3;

const SIGMA: f64 = 0.02;

/// A thin free-standing wall between two nodes that face it from
/// opposite sides.
fn wall_scene() -> SyntheticScene {
    let spec = SceneSpec {
        buildings: false,
        furniture: 0,
        statics: vec![StaticBox { center: [0.0, 0.0], size: [0.002, 12.0, 3.0], yaw: 0.0 }],
        nodes: vec![NodePose::looking_at([-12.0, 1.0, 2.5], [0.0, 0.0], 8.0), NodePose::looking_at([11.0, -2.0, 2.0], [0.0, 0.0], 8.0)],
        noise_sigma: SIGMA,
        ..SceneSpec::default()
    };
    generate_synthetic_scene(&spec, 3).unwrap()
}

fn plane_rms(points: &[Point3]) -> f64 {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - c;
        a + d * d.transpose()
    }) / n;
    let eig = cov.symmetric_eigen();
    eig.eigenvalues.min().max(0.0).sqrt()
}

fn wall_points(scene: &SyntheticScene, extrinsics: &[RigidTransform]) -> (Vec<Point3>, [usize; 2]) {
    let mut out = Vec::new();
    let mut counts = [0; 2];
    for node in 0..2 {
        let world = apply_transform(&extrinsics[node], &scene.frames[node][0]);
        for (p, label) in world.points.iter().zip(&scene.labels[node][0]) {
            if matches!(label, SurfaceLabel::Static(_)) {
                out.push(*p);
                counts[node] += 1;
            }
        }
    }
    (out, counts)
}

#[test]
fn wall_seen_from_both_sides_is_coplanar_after_fusion() {
    let scene = wall_scene();
    let (points, counts) = wall_points(&scene, &scene.extrinsics);
    assert!(counts.iter().all(|&c| c > 200), "each node must see the wall: {counts:?}");
    let rms = plane_rms(&points);
    assert!(rms <= 2.0 * SIGMA, "fused wall residual {rms}");

    // A 0.3 m extrinsic error on one node splits the wall in two.
    let mut wrong = scene.extrinsics.clone();
    wrong[1] = RigidTransform::from_translation(Vec3::new(0.3, 0.0, 0.0)).compose(&wrong[1]);
    let (points, _) = wall_points(&scene, &wrong);
    assert!(plane_rms(&points) > 2.0 * SIGMA);
}

#[test]
fn early_fuse_of_rendered_frames_adds_counts_and_tags_sources() {
    let scene = wall_scene();
    let set = ViewFrameSet::new(
        (0..2).map(|n| (n as u16, scene.frames[n][0].clone())).collect(),
        (0..2).map(|n| (n as u16, scene.extrinsics[n])).collect(),
    );
    let fused = early_fuse(&set).unwrap();
    assert_eq!(fused.len(), scene.frames[0][0].len() + scene.frames[1][0].len());
    let zeros = fused.point_source.iter().filter(|s| **s == 0).count();
    assert_eq!(zeros, scene.frames[0][0].len());
    assert!(fused.point_source.iter().all(|s| *s <= 1));
}

#[test]
fn fused_ground_lies_on_the_world_plane() {
    let scene = generate_synthetic_scene(&SceneSpec { pedestrians: 4, ..SceneSpec::default() }, 8).unwrap();
    let mut ground = Vec::new();
    for node in 0..scene.frames.len() {
        let world = apply_transform(&scene.extrinsics[node], &scene.frames[node][0]);
        ground.extend(world.points.iter().zip(&scene.labels[node][0]).filter(|(_, l)| **l == SurfaceLabel::Ground).map(|(p, _)| p.z));
    }
    let rms = (ground.iter().map(|z| z * z).sum::<f64>() / ground.len() as f64).sqrt();
    assert!(ground.len() > 10_000);
    assert!(rms <= 2.0 * SIGMA, "ground height rms {rms}");
}
