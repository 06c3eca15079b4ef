//! Automatic LiDAR-to-reference calibration.
//!
//! The pipeline downsamples both clouds at the coarsest scale, estimates
//! normals and FPFH descriptors, finds a global pose with feature-matching
//! RANSAC and then refines it with point-to-point ICP from coarse to fine
//! voxel sizes. Every ICP step solves the least-squares rigid fit in closed
//! form (SVD of the cross-covariance).

mod arun;
mod fpfh;
mod hierarchy;
mod icp;
mod normals;
mod quality;
mod ransac;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform};

pub use arun::solve_rigid_arun;
pub use fpfh::{compute_fpfh, pair_features, FpfhDescriptor, FPFH_BINS, FPFH_BLOCK};
pub use hierarchy::{accumulate_frames, hierarchical_register, register_to_prepared, PreparedTarget};
pub use icp::{icp_refine, icp_refine_with_tree};
pub use normals::{estimate_normals, estimate_normals_toward};
pub use quality::{evaluate_point_projection_error, evaluate_reprojection_error, CornerPair};
pub use ransac::{coarse_align_ransac, mutual_feature_matches, ransac_hypotheses};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no consensus: best hypothesis has {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("no correspondences within {max_dist} m at the initial pose")]
    NoCorrespondences { max_dist: f64 },
    #[error("calibration failed: fitness {fitness:.3} below {threshold}")]
    CalibrationFailed { fitness: f64, threshold: f64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Output of a registration stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    /// Fraction of source points with a target point within the
    /// correspondence distance.
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations_used: usize,
    /// Truncated RMSE (distances clamped at the correspondence distance)
    /// after each accepted ICP iteration, starting with the initial pose.
    /// Empty for non-iterative stages.
    pub rmse_trace: Vec<f64>,
}

/// One ICP scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpLevel {
    pub voxel_size: f64,
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
}

/// Scale schedule and thresholds of [`hierarchical_register`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    /// Coarse to fine; voxel sizes strictly decreasing.
    pub levels: Vec<IcpLevel>,
    pub fpfh_radius: f64,
    pub normal_radius: f64,
    pub min_normal_neighbors: usize,
    pub ransac_iterations: usize,
    pub ransac_inlier_threshold: f64,
    /// Minimum ratio of matching edge lengths in a RANSAC triple.
    pub edge_length_ratio: f64,
    pub convergence_epsilon: f64,
    /// Distinct RANSAC poses refined before committing to one.
    pub verification_candidates: usize,
    /// Results below this fitness are reported as failed calibrations.
    pub min_fitness: f64,
    /// Normal orientation viewpoint for the source cloud (sensor origin).
    pub source_viewpoint: [f64; 3],
    /// Normal orientation viewpoint for the target cloud (reference scanner).
    pub target_viewpoint: [f64; 3],
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        let coarsest = 1.0;
        Self {
            levels: vec![
                IcpLevel { voxel_size: coarsest, max_correspondence_distance: 2.0 * coarsest, max_iterations: 50 },
                IcpLevel { voxel_size: 0.5, max_correspondence_distance: 1.0, max_iterations: 50 },
                IcpLevel { voxel_size: 0.1, max_correspondence_distance: 0.3, max_iterations: 100 },
            ],
            fpfh_radius: 5.0 * coarsest,
            normal_radius: 2.5 * coarsest,
            min_normal_neighbors: 3,
            ransac_iterations: 100_000,
            ransac_inlier_threshold: 1.5 * coarsest,
            edge_length_ratio: 0.9,
            convergence_epsilon: 1e-6,
            verification_candidates: 16,
            min_fitness: 0.2,
            source_viewpoint: [0.0, 0.0, 0.0],
            target_viewpoint: [0.0, 0.0, 1.5],
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |msg: String| Err(RegistrationError::InvalidConfig(msg));
        if self.levels.is_empty() {
            return bad("at least one level is required".into());
        }
        for (i, level) in self.levels.iter().enumerate() {
            if !(level.voxel_size > 0.0) || !(level.max_correspondence_distance > 0.0) {
                return bad(format!("level {i}: voxel size and correspondence distance must be positive"));
            }
            if level.max_iterations == 0 {
                return bad(format!("level {i}: max_iterations must be positive"));
            }
        }
        if self.levels.windows(2).any(|w| w[1].voxel_size >= w[0].voxel_size) {
            return bad("voxel sizes must be strictly decreasing".into());
        }
        for (name, v) in [
            ("fpfh_radius", self.fpfh_radius),
            ("normal_radius", self.normal_radius),
            ("ransac_inlier_threshold", self.ransac_inlier_threshold),
            ("convergence_epsilon", self.convergence_epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.edge_length_ratio) {
            return bad("edge_length_ratio must lie in [0, 1)".into());
        }
        if self.verification_candidates == 0 {
            return bad("verification_candidates must be positive".into());
        }
        if self.ransac_iterations == 0 {
            return bad("ransac_iterations must be positive".into());
        }
        Ok(())
    }
}
