//! Geometric models of rolling-shutter cameras.
//!
//! A rolling-shutter sensor exposes its rows one after another, so a moving camera images each
//! row from a slightly different pose. This crate models that readout:
//!
//! - [`geometry`]: SO(3) algebra, poses, intrinsics and the perspective camera;
//! - [`shutter`]: the scan-time constraint, its solvers, the closed-form fronto-parallel
//!   projection and the depth/velocity limit line;
//! - [`xslit`]: back-projection under translation and the two-slit structure it produces;
//! - [`flow`]: rolling-shutter optical flow with a finite-difference reference;
//! - [`calibration`]: LED stripe synthesis and Fourier scan-rate estimation;
//! - [`sfm`]: a two-view bundle adjustment benchmark comparing rolling-shutter and pin-hole models;
//! - [`render`]: checkerboard distortion rendering.

pub mod calibration;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod render;
pub mod roots;
pub mod sfm;
pub mod shutter;
pub mod xslit;

pub use error::{Error, Result};
pub use geometry::{
    camera_matrix_at, hat, project_perspective, rotation_exp, rotation_log, CameraIntrinsics,
    MotionState, NormalizedPoint, PixelPoint, Pose, Rotation, WorldPoint,
};
pub use shutter::{
    classify_case, constraint_residual, correction_magnitude, limit_line, project_rolling_shutter,
    solve_scan_time, FrontoParallel, NormalizedShutter, RsProjection, ScanTimeCase, ShutterParams,
};
