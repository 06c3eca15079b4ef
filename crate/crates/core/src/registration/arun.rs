use nalgebra::Matrix3;

use super::RegistrationError;
use crate::geometry::{Point3, RigidTransform, Vec3};

/// Relative singular-value floor below which the cross-covariance is
/// treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Closed-form least-squares rigid fit `target ≈ R·source + t`.
///
/// Centroids are removed, `H = Σ (sᵢ - s̄)(tᵢ - t̄)ᵀ` is decomposed as
/// `U Σ Vᵀ` and `R = V·diag(1, 1, det(V Uᵀ))·Uᵀ`, the sign correction
/// going to the smallest singular direction so the result is always a
/// proper rotation.
pub fn solve_rigid_arun(source: &[Point3], target: &[Point3]) -> Result<RigidTransform, RegistrationError> {
    if source.len() != target.len() {
        return Err(RegistrationError::DegenerateConfiguration(format!(
            "{} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(RegistrationError::DegenerateConfiguration(format!(
            "need at least 3 pairs, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let sc = source.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let tc = target.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s.coords - sc) * (t.coords - tc).transpose();
    }

    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= RANK_TOLERANCE * sorted[0] {
        return Err(RegistrationError::DegenerateConfiguration(
            "cross-covariance has rank < 2 (coincident or collinear points)".into(),
        ));
    }
    let u = svd.u.expect("svd requested u");
    let v = svd.v_t.expect("svd requested v_t").transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let weakest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(2);
        d[(weakest, weakest)] = -1.0;
    }
    let r = v * d * u.transpose();
    let t = tc - r * sc;
    Ok(RigidTransform::from_rotation_unchecked(r, t))
}
