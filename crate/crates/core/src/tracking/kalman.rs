use nalgebra::{SMatrix, SVector};

use super::TrackerConfig;
use crate::geometry::{wrap_angle, wrap_half_turn, Box3D, ObjectClass, Point3};

/// `(x, y, z, yaw, l, w, h, vx, vy, vz)`.
pub const STATE_DIM: usize = 10;
const MEAS_DIM: usize = 7;

type StateVec = SVector<f64, STATE_DIM>;
type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;
type MeasVec = SVector<f64, MEAS_DIM>;
type MeasMat = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
type Gain = SMatrix<f64, STATE_DIM, MEAS_DIM>;

const MIN_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub covariance: StateMat,
    pub track_id: u64,
    pub hits: u32,
    pub age_since_update: u32,
    pub class: ObjectClass,
    pub score: f64,
}

impl TrackState {
    /// New track centered on a detection with zero velocity.
    pub fn from_detection(det: &Box3D, track_id: u64, cfg: &TrackerConfig) -> Self {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&measurement(det));
        let mut covariance = StateMat::identity() * cfg.initial_variance;
        for k in MEAS_DIM..STATE_DIM {
            covariance[(k, k)] = cfg.initial_velocity_variance;
        }
        Self { mean, covariance, track_id, hits: 1, age_since_update: 0, class: det.class, score: det.score }
    }

    pub fn to_box(&self) -> Box3D {
        let m = &self.mean;
        let mut b = Box3D::new(
            Point3::new(m[0], m[1], m[2]),
            [m[4].max(MIN_SIZE), m[5].max(MIN_SIZE), m[6].max(MIN_SIZE)],
            m[3],
            self.class,
        );
        b.score = self.score;
        b
    }

    pub fn is_dead(&self, max_age: u32) -> bool {
        self.age_since_update > max_age
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigenvalues().min()
    }
}

fn measurement(b: &Box3D) -> MeasVec {
    MeasVec::from_column_slice(&[b.center.x, b.center.y, b.center.z, b.yaw, b.length, b.width, b.height])
}

fn transition(dt: f64) -> StateMat {
    let mut f = StateMat::identity();
    for k in 0..3 {
        f[(k, MEAS_DIM + k)] = dt;
    }
    f
}

fn process_noise(cfg: &TrackerConfig) -> StateMat {
    let mut q = StateMat::identity() * cfg.process_noise;
    for k in MEAS_DIM..STATE_DIM {
        q[(k, k)] = cfg.process_velocity_noise;
    }
    q
}

fn symmetrize(p: &StateMat) -> StateMat {
    (p + p.transpose()) * 0.5
}

/// Constant-velocity prediction over `dt` seconds.
pub fn kalman_predict(track: &TrackState, dt: f64, cfg: &TrackerConfig) -> TrackState {
    let f = transition(dt);
    let mut out = track.clone();
    out.mean = f * track.mean;
    out.covariance = symmetrize(&(f * track.covariance * f.transpose() + process_noise(cfg)));
    out.age_since_update += 1;
    out
}

/// Measurement update with a detection box. The yaw innovation is taken
/// modulo π because boxes are symmetric under a half turn.
pub fn kalman_update(track: &TrackState, det: &Box3D, cfg: &TrackerConfig) -> TrackState {
    let h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::identity();
    let r = MeasMat::identity() * cfg.measurement_noise;
    let mut innovation = measurement(det) - h * track.mean;
    innovation[3] = wrap_half_turn(innovation[3]);
    let s = h * track.covariance * h.transpose() + r;
    let s_inv = s.cholesky().expect("innovation covariance is positive definite").inverse();
    let k: Gain = track.covariance * h.transpose() * s_inv;
    let i_kh = StateMat::identity() - k * h;
    let mut out = track.clone();
    out.mean = track.mean + k * innovation;
    out.mean[3] = wrap_angle(out.mean[3]);
    for idx in 4..7 {
        out.mean[idx] = out.mean[idx].max(MIN_SIZE);
    }
    out.covariance = symmetrize(&(i_kh * track.covariance * i_kh.transpose() + k * r * k.transpose()));
    out.hits += 1;
    out.age_since_update = 0;
    out
}
