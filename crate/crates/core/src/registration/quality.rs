use super::RegistrationError;
use crate::geometry::{PinholeCamera, Point3, RigidTransform};

/// A corner annotated in the node cloud and its counterpart in the
/// reference (world) cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerPair {
    pub annotated: Point3,
    pub reference: Point3,
}

/// Mean distance between transformed annotated corners and their
/// reference positions, in meters.
pub fn evaluate_point_projection_error(pairs: &[CornerPair], t: &RigidTransform) -> Result<f64, RegistrationError> {
    if pairs.is_empty() {
        return Err(RegistrationError::EmptyInput("no corner pairs".into()));
    }
    let total: f64 = pairs.iter().map(|p| (t.apply(&p.annotated) - p.reference).norm()).sum();
    Ok(total / pairs.len() as f64)
}

/// Mean pixel distance between projected points and annotated pixels.
pub fn evaluate_reprojection_error(cam: &PinholeCamera, pairs: &[(Point3, (f64, f64))]) -> Result<f64, RegistrationError> {
    if pairs.is_empty() {
        return Err(RegistrationError::EmptyInput("no point/pixel pairs".into()));
    }
    let mut total = 0.0;
    for (p, (u, v)) in pairs {
        let (pu, pv) = cam.project(p)?;
        total += ((pu - u).powi(2) + (pv - v).powi(2)).sqrt();
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryError, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn truth() -> RigidTransform {
        RigidTransform::from_euler(0.05, -0.02, 1.3, Vec3::new(12.0, -7.0, 3.0))
    }

    fn corners(rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..20)
            .map(|_| Point3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(0.0..8.0)))
            .collect()
    }

    #[test]
    fn exact_pairs_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = truth();
        let pairs: Vec<CornerPair> = corners(&mut rng)
            .into_iter()
            .map(|p| CornerPair { annotated: p, reference: t.apply(&p) })
            .collect();
        assert!(evaluate_point_projection_error(&pairs, &t).unwrap() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = truth();
        let pairs: Vec<CornerPair> = corners(&mut rng)
            .into_iter()
            .map(|p| CornerPair { annotated: p, reference: t.apply(&p) + Vec3::new(0.0, 0.03, 0.04) })
            .collect();
        assert!((evaluate_point_projection_error(&pairs, &t).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn annotation_noise_matches_expected_norm() {
        // E‖N(0, σ²I₃)‖ = σ·2·sqrt(2/π) ≈ 1.596σ.
        let sigma = 0.02;
        let expected = sigma * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, sigma).unwrap();
        let t = truth();
        let pairs: Vec<CornerPair> = corners(&mut rng)
            .into_iter()
            .map(|p| {
                let n = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                CornerPair { annotated: p, reference: t.apply(&p) + n }
            })
            .collect();
        let err = evaluate_point_projection_error(&pairs, &t).unwrap();
        assert!((err - expected).abs() < 0.3 * expected, "err {err} expected {expected}");
    }

    #[test]
    fn ground_truth_beats_perturbed_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = truth();
        let pairs: Vec<CornerPair> = corners(&mut rng)
            .into_iter()
            .map(|p| CornerPair { annotated: p, reference: t.apply(&p) })
            .collect();
        let bad = RigidTransform::from_translation(Vec3::new(0.5, 0.0, 0.0)).compose(&t);
        assert!(
            evaluate_point_projection_error(&pairs, &t).unwrap() <= evaluate_point_projection_error(&pairs, &bad).unwrap()
        );
    }

    #[test]
    fn empty_pairs_error() {
        assert!(evaluate_point_projection_error(&[], &truth()).is_err());
        let cam = PinholeCamera::new(1.0, 1.0, 0.0, 0.0, RigidTransform::identity()).unwrap();
        assert!(evaluate_reprojection_error(&cam, &[]).is_err());
    }

    fn camera() -> PinholeCamera {
        PinholeCamera::new(1200.0, 1200.0, 960.0, 540.0, RigidTransform::identity()).unwrap()
    }

    fn visible_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0), rng.random_range(5.0..40.0)))
            .collect()
    }

    #[test]
    fn reprojection_exact_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = camera();
        let pts = visible_points(&mut rng, 20);
        let exact: Vec<_> = pts.iter().map(|p| (*p, cam.project(p).unwrap())).collect();
        assert!(evaluate_reprojection_error(&cam, &exact).unwrap() < 1e-9);
        let shifted: Vec<_> = exact.iter().map(|(p, (u, v))| (*p, (u + 3.0, v + 4.0))).collect();
        assert!((evaluate_reprojection_error(&cam, &shifted).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn reprojection_noise_matches_rayleigh_mean() {
        // Mean of a Rayleigh(σ) variable is σ·sqrt(π/2) ≈ 2.507 px for σ = 2.
        let sigma = 2.0;
        let expected = sigma * (std::f64::consts::PI / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cam = camera();
        let noise = Normal::new(0.0, sigma).unwrap();
        let pairs: Vec<_> = visible_points(&mut rng, 200)
            .into_iter()
            .map(|p| {
                let (u, v) = cam.project(&p).unwrap();
                (p, (u + noise.sample(&mut rng), v + noise.sample(&mut rng)))
            })
            .collect();
        let err = evaluate_reprojection_error(&cam, &pairs).unwrap();
        assert!((err - expected).abs() < 0.3 * expected, "err {err}");
    }

    #[test]
    fn reprojection_propagates_behind_camera() {
        let cam = camera();
        let err = evaluate_reprojection_error(&cam, &[(Point3::new(0.0, 0.0, -3.0), (0.0, 0.0))]).unwrap_err();
        assert_eq!(err, RegistrationError::Geometry(GeometryError::BehindCamera));
    }
}
