use super::{GeometryError, Point3, RigidTransform};

/// Pinhole camera without lens distortion. `extrinsic` maps world
/// coordinates into the camera frame (z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: RigidTransform,
}

/// Depth below which a point counts as behind the image plane.
const MIN_DEPTH: f64 = 1e-9;

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, extrinsic: RigidTransform) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::InvalidArgument(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy, extrinsic })
    }

    /// Pixel coordinates `(u, v)` of a world point.
    pub fn project(&self, p: &Point3) -> Result<(f64, f64), GeometryError> {
        let q = self.extrinsic.apply(p);
        if q.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera);
        }
        Ok((self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy))
    }
}

/// Free-function form of [`PinholeCamera::project`].
pub fn project_pinhole(cam: &PinholeCamera, p: &Point3) -> Result<(f64, f64), GeometryError> {
    cam.project(p)
}
