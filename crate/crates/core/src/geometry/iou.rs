use nalgebra::Vector2;

use super::Box3D;

type V2 = Vector2<f64>;

fn cross(a: V2, b: V2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area(poly: &[V2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let n = poly.len();
    let twice: f64 = (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum();
    0.5 * twice
}

/// Sutherland–Hodgman clipping of `subject` against the convex,
/// counter-clockwise polygon `clip`.
pub fn clip_convex_polygon(subject: &[V2], clip: &[V2]) -> Vec<V2> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b - a;
        let inside = |p: V2| cross(edge, p - a) >= 0.0;
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(line_intersection(prev, cur, a, b)),
                (false, true) => {
                    output.push(line_intersection(prev, cur, a, b));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

fn line_intersection(p: V2, q: V2, a: V2, b: V2) -> V2 {
    let d = q - p;
    let e = b - a;
    let denom = cross(d, e);
    if denom.abs() < f64::MIN_POSITIVE {
        return q;
    }
    let t = cross(a - p, e) / denom;
    p + d * t
}

/// Area of the overlap of the two ground-plane rectangles.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let clipped = clip_convex_polygon(&a.bev_corners(), &b.bev_corners());
    polygon_area(&clipped).max(0.0)
}

fn ratio(inter: f64, total_a: f64, total_b: f64) -> f64 {
    if inter <= 0.0 {
        return 0.0;
    }
    let union = total_a + total_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection over union of the two footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    ratio(bev_intersection_area(a, b), a.footprint_area(), b.footprint_area())
}

/// Volumetric IoU of two yaw-rotated boxes: BEV overlap area times the
/// shared vertical extent.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    ratio(inter, a.volume(), b.volume())
}
