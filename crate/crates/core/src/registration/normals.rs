use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::geometry::{Point3, PointCloud, Vec3};
use crate::spatial::KdTree;

/// Per-point unit normals oriented toward the sensor origin.
///
/// See [`estimate_normals_toward`].
pub fn estimate_normals(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> Vec<Vec3> {
    estimate_normals_toward(cloud, radius, min_neighbors, &Point3::origin())
}

/// Normal of each point from the smallest-eigenvalue eigenvector of its
/// radius neighbourhood covariance, flipped to face `viewpoint`.
///
/// Points with fewer than `min_neighbors` neighbours (excluding the point
/// itself) get a zero vector and are skipped by the descriptor stage.
pub fn estimate_normals_toward(cloud: &PointCloud, radius: f64, min_neighbors: usize, viewpoint: &Point3) -> Vec<Vec3> {
    if cloud.is_empty() || !(radius > 0.0) {
        return vec![Vec3::zeros(); cloud.len()];
    }
    let tree = KdTree::new(&cloud.points);
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = &cloud.points[i];
            let neighbors = tree.within_radius(p, radius);
            if neighbors.len() < min_neighbors.max(2) + 1 {
                return Vec3::zeros();
            }
            let n = neighbors.len() as f64;
            let mean = neighbors.iter().fold(Vec3::zeros(), |a, &(j, _)| a + cloud.points[j].coords) / n;
            let mut cov = Matrix3::zeros();
            for &(j, _) in &neighbors {
                let d = cloud.points[j].coords - mean;
                cov += d * d.transpose();
            }
            cov /= n;
            let eig = SymmetricEigen::new(cov);
            let k = (0..3)
                .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
                .unwrap_or(0);
            let mut normal: Vec3 = eig.eigenvectors.column(k).into_owned();
            let len = normal.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Vec3::zeros();
            }
            normal /= len;
            if normal.dot(&(viewpoint - p)) < 0.0 {
                normal = -normal;
            }
            normal
        })
        .collect()
}
