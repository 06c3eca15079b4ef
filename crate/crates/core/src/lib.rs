//! Multi-view LiDAR toolkit.
//!
//! Extrinsic calibration of distributed LiDAR nodes against a reference
//! scan, a discrete-event model of the trigger + GPS-PPS synchronization
//! protocol, early and late multi-view fusion, a geometric baseline
//! detector, a Kalman/Hungarian 3D tracker and KITTI/CLEAR evaluation.

pub mod assignment;
pub mod detector;
pub mod eval;
pub mod experiments;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod registration;
pub mod scene;
pub mod spatial;
pub mod syncsim;
pub mod tracking;
