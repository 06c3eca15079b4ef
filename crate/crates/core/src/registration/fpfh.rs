use rayon::prelude::*;

use crate::geometry::{Point3, PointCloud, Vec3};
use crate::spatial::KdTree;

/// Bins per angular feature.
pub const FPFH_BLOCK: usize = 11;
pub const FPFH_BINS: usize = 3 * FPFH_BLOCK;

/// Fast Point Feature Histogram: three 11-bin blocks for the Darboux-frame
/// angles α, φ and θ, each block normalized to sum to 100 (or all zero for
/// points without neighbours).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpfhDescriptor {
    pub bins: [f64; FPFH_BINS],
}

impl Default for FpfhDescriptor {
    fn default() -> Self {
        Self { bins: [0.0; FPFH_BINS] }
    }
}

impl FpfhDescriptor {
    pub fn is_zero(&self) -> bool {
        self.bins.iter().all(|&b| b == 0.0)
    }

    pub fn distance_squared(&self, other: &FpfhDescriptor) -> f64 {
        self.bins.iter().zip(&other.bins).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Darboux-frame angles `(α, φ, θ)` of an oriented point pair, or `None`
/// when the frame is undefined (coincident points or a normal parallel to
/// the connecting line).
///
/// The source of the frame is the point whose normal makes the smaller
/// angle with the connecting line, which makes the result symmetric in the
/// two points.
pub fn pair_features(p1: &Point3, n1: &Vec3, p2: &Point3, n2: &Vec3) -> Option<(f64, f64, f64)> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / dist;
    let a2 = n2.dot(&dp) / dist;
    let (src_n, tgt_n, phi) = if a1.abs().acos() > a2.abs().acos() {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(src_n);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return None;
    }
    let v = v / v_norm;
    let w = src_n.cross(&v);
    let alpha = v.dot(tgt_n);
    let theta = w.dot(tgt_n).atan2(src_n.dot(tgt_n));
    Some((alpha, phi, theta))
}

fn bin_unit(value: f64) -> usize {
    // value in [-1, 1]
    ((FPFH_BLOCK as f64 * (value + 1.0) * 0.5).floor().max(0.0) as usize).min(FPFH_BLOCK - 1)
}

fn bin_angle(value: f64) -> usize {
    // value in [-π, π]
    let t = (value + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
    ((FPFH_BLOCK as f64 * t).floor().max(0.0) as usize).min(FPFH_BLOCK - 1)
}

fn normalize_blocks(bins: &mut [f64; FPFH_BINS]) {
    for block in bins.chunks_mut(FPFH_BLOCK) {
        let sum: f64 = block.iter().sum();
        if sum > 0.0 {
            let scale = 100.0 / sum;
            block.iter_mut().for_each(|b| *b *= scale);
        }
    }
}

/// FPFH descriptors for every point.
///
/// Each point first gets its simplified histogram (SPFH) over the valid
/// neighbours within `radius`; the final descriptor is
/// `SPFH(p) + (1/k) Σ SPFH(pᵢ) / ‖p - pᵢ‖`, re-normalized per block.
/// Points whose normal is zero are excluded everywhere and get a zero
/// descriptor.
pub fn compute_fpfh(cloud: &PointCloud, normals: &[Vec3], radius: f64) -> Vec<FpfhDescriptor> {
    assert_eq!(cloud.len(), normals.len(), "one normal per point");
    if cloud.is_empty() {
        return Vec::new();
    }
    let valid: Vec<bool> = normals.iter().map(|n| n.norm_squared() > 0.0).collect();
    let tree = KdTree::new(&cloud.points);
    let neighborhoods: Vec<Vec<(usize, f64)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            if !valid[i] {
                return Vec::new();
            }
            tree.within_radius(&cloud.points[i], radius)
                .into_iter()
                .filter(|&(j, d2)| j != i && valid[j] && d2 > 0.0)
                .collect()
        })
        .collect();

    let spfh: Vec<[f64; FPFH_BINS]> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut hist = [0.0; FPFH_BINS];
            for &(j, _) in &neighborhoods[i] {
                if let Some((alpha, phi, theta)) =
                    pair_features(&cloud.points[i], &normals[i], &cloud.points[j], &normals[j])
                {
                    hist[bin_unit(alpha)] += 1.0;
                    hist[FPFH_BLOCK + bin_unit(phi)] += 1.0;
                    hist[2 * FPFH_BLOCK + bin_angle(theta)] += 1.0;
                }
            }
            normalize_blocks(&mut hist);
            hist
        })
        .collect();

    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = &neighborhoods[i];
            if neighbors.is_empty() {
                return FpfhDescriptor::default();
            }
            let k = neighbors.len() as f64;
            let mut bins = spfh[i];
            for &(j, d2) in neighbors {
                let w = 1.0 / (k * d2.sqrt());
                for (b, s) in bins.iter_mut().zip(&spfh[j]) {
                    *b += w * s;
                }
            }
            normalize_blocks(&mut bins);
            FpfhDescriptor { bins }
        })
        .collect()
}
