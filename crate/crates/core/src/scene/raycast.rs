use crate::geometry::{Point3, Vec3};

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceLabel {
    Ground,
    /// Index into the layout's static solids.
    Static(usize),
    /// Index into the layout's objects.
    Object(usize),
}

/// Yaw-rotated box standing on (or above) the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Solid {
    pub center: Point3,
    pub half: Vec3,
    cos: f64,
    sin: f64,
}

impl Solid {
    pub fn new(center: Point3, size: [f64; 3], yaw: f64) -> Self {
        Self {
            center,
            half: Vec3::new(size[0] / 2.0, size[1] / 2.0, size[2] / 2.0),
            cos: yaw.cos(),
            sin: yaw.sin(),
        }
    }

    fn to_local(&self, v: &Vec3) -> Vec3 {
        Vec3::new(self.cos * v.x + self.sin * v.y, -self.sin * v.x + self.cos * v.y, v.z)
    }

    /// World-frame corners, bottom face first.
    pub fn corners(&self) -> [Point3; 8] {
        let mut out = [Point3::origin(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            let sx = if k & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if k & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if k & 4 == 0 { -1.0 } else { 1.0 };
            let lx = sx * self.half.x;
            let ly = sy * self.half.y;
            *c = self.center
                + Vec3::new(self.cos * lx - self.sin * ly, self.sin * lx + self.cos * ly, sz * self.half.z);
        }
        out
    }

    /// Entry distance of the ray `o + t·d`, if it enters the box at t > 0.
    /// Rays starting inside never hit.
    pub fn intersect(&self, o: &Point3, d: &Vec3) -> Option<f64> {
        let lo = self.to_local(&(o - self.center));
        let ld = self.to_local(d);
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for axis in 0..3 {
            let (p, v, h) = (lo[axis], ld[axis], self.half[axis]);
            if v.abs() < 1e-15 {
                if p.abs() > h {
                    return None;
                }
                continue;
            }
            let a = (-h - p) / v;
            let b = (h - p) / v;
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t_near = t_near.max(a);
            t_far = t_far.min(b);
            if t_near > t_far {
                return None;
            }
        }
        (t_near > 1e-9).then_some(t_near)
    }

    /// Squared horizontal distance from the box footprint to `(x, y)`.
    pub fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let l = self.to_local(&Vec3::new(x - self.center.x, y - self.center.y, 0.0));
        let dx = (l.x.abs() - self.half.x).max(0.0);
        let dy = (l.y.abs() - self.half.y).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Ground plane z = 0 over a square, plus solids.
pub(crate) struct World<'a> {
    pub ground_half_extent: f64,
    pub statics: &'a [Solid],
    pub objects: &'a [Solid],
    pub max_range: f64,
}

impl World<'_> {
    /// First hit along a unit-direction ray.
    pub fn cast(&self, o: &Point3, d: &Vec3) -> Option<(f64, SurfaceLabel)> {
        let mut best: Option<(f64, SurfaceLabel)> = None;
        let mut consider = |t: f64, label: SurfaceLabel| {
            if t <= self.max_range && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, label));
            }
        };
        if d.z < -1e-12 && o.z > 0.0 {
            let t = -o.z / d.z;
            let x = o.x + t * d.x;
            let y = o.y + t * d.y;
            if x.abs() <= self.ground_half_extent && y.abs() <= self.ground_half_extent {
                consider(t, SurfaceLabel::Ground);
            }
        }
        for (i, s) in self.statics.iter().enumerate() {
            if let Some(t) = s.intersect(o, d) {
                consider(t, SurfaceLabel::Static(i));
            }
        }
        for (i, s) in self.objects.iter().enumerate() {
            if let Some(t) = s.intersect(o, d) {
                consider(t, SurfaceLabel::Object(i));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_front_face() {
        let s = Solid::new(Point3::new(10.0, 0.0, 1.0), [2.0, 2.0, 2.0], 0.0);
        let t = s.intersect(&Point3::new(0.0, 0.0, 1.0), &Vec3::x()).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert!(s.intersect(&Point3::new(0.0, 5.0, 1.0), &Vec3::x()).is_none());
        assert!(s.intersect(&Point3::new(20.0, 0.0, 1.0), &Vec3::x()).is_none());
        assert!(s.intersect(&Point3::new(10.0, 0.0, 1.0), &Vec3::x()).is_none());
    }

    #[test]
    fn rotated_box_hit_distance() {
        // A unit square rotated 45° presents its corner at distance √2/2.
        let s = Solid::new(Point3::new(5.0, 0.0, 0.0), [1.0, 1.0, 1.0], std::f64::consts::FRAC_PI_4);
        let t = s.intersect(&Point3::origin(), &Vec3::x()).unwrap();
        assert!((t - (5.0 - 0.5f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn corners_lie_on_box() {
        let s = Solid::new(Point3::new(1.0, 2.0, 3.0), [4.0, 2.0, 1.0], 0.7);
        for c in s.corners() {
            assert!(s.footprint_distance(c.x, c.y) < 1e-9);
            assert!(((c.z - 3.0).abs() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_surface_wins() {
        let near = [Solid::new(Point3::new(5.0, 0.0, 1.0), [1.0, 1.0, 2.0], 0.0)];
        let far = [Solid::new(Point3::new(9.0, 0.0, 1.0), [1.0, 1.0, 2.0], 0.0)];
        let world = World { ground_half_extent: 50.0, statics: &far, objects: &near, max_range: 100.0 };
        let (t, label) = world.cast(&Point3::new(0.0, 0.0, 1.0), &Vec3::x()).unwrap();
        assert_eq!(label, SurfaceLabel::Object(0));
        assert!((t - 4.5).abs() < 1e-12);
        let down = Vec3::new(1.0, 0.0, -1.0).normalize();
        let (t, label) = world.cast(&Point3::new(0.0, 0.0, 1.0), &down).unwrap();
        assert_eq!(label, SurfaceLabel::Ground);
        assert!((t - 2f64.sqrt()).abs() < 1e-12);
    }
}
