//! Optical flow of a rolling-shutter camera under fronto-parallel motion.
//!
//! Flow is the rate at which the image of a fixed world point moves as the frame start time
//! `t₀` advances. Inputs are calibrated image coordinates `(u, v)`, the point's depth `z` at
//! `t₀ = 0` and the readout in calibrated units. Velocities are read in the camera frame at
//! `t = 0` (see [`FrontoParallel`]).
//!
//! With perspective flow `(u̇_p, v̇_p) = (v_x/z − ω_z·v, v_y/z + ω_z·u)`, the linearised camera
//! with `v₀ = 0` gives
//!
//! ```text
//!            r·z
//! q̇ = ───────────────────────── · ( r·u̇_p + ω_z·v·v̇_p ,  r·v̇_p − ω_z·v·u̇_p )
//!     v·v_x·ω_z + r·z·(r − v̇_p)
//! ```
//!
//! The coupling term of the second component enters with a minus sign; see
//! [`flow_rolling_shutter_as_printed`] for the variant with `+`, which disagrees with the
//! finite-difference reference whenever `ω_z·v ≠ 0`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotionState, NormalizedPoint, Rotation, MIN_DEPTH};
use crate::roots::root_near;
use crate::shutter::{FrontoParallel, NormalizedShutter};
use crate::xslit::point_at_depth;

/// Image velocity in calibrated units per second at a point of known depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowVector {
    pub du: f64,
    pub dv: f64,
    pub depth: f64,
}

impl FlowVector {
    pub fn norm(&self) -> f64 {
        self.du.hypot(self.dv)
    }

    /// Largest component-wise difference.
    pub fn max_abs_diff(&self, other: &FlowVector) -> f64 {
        (self.du - other.du).abs().max((self.dv - other.dv).abs())
    }
}

/// Which camera the finite-difference reference differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowModel {
    /// `R(t) = (I + t·ω̂)·R(0)`: the image moves linearly in `t₀`.
    Linearized,
    /// `R(t) = exp(t·ω̂)·R(0)`.
    Exact,
}

fn check_depth(z: f64) -> Result<()> {
    if z <= MIN_DEPTH || !z.is_finite() {
        return Err(Error::NegativeDepth { depth: z });
    }
    Ok(())
}

fn check_denominator(d: f64) -> Result<()> {
    if d.abs() < 1e-12 || !d.is_finite() {
        return Err(Error::Singularity { value: d });
    }
    Ok(())
}

/// Perspective flow `(v_x/z − ω_z·v, v_y/z + ω_z·u)`.
pub fn flow_perspective(u: f64, v: f64, z: f64, m: &MotionState) -> Result<FlowVector> {
    check_depth(z)?;
    let fp = FrontoParallel::from_motion(m)?;
    Ok(FlowVector { du: fp.vx / z - fp.wz * v, dv: fp.vy / z + fp.wz * u, depth: z })
}

fn closed_form(u: f64, v: f64, z: f64, m: &MotionState, shutter: &NormalizedShutter, sign: f64) -> Result<FlowVector> {
    if shutter.first_row != 0.0 {
        return Err(Error::InvalidParameter("closed-form flow assumes the first row at v = 0".into()));
    }
    let p = flow_perspective(u, v, z, m)?;
    let fp = FrontoParallel::from_motion(m)?;
    let r = shutter.rate;
    let denom = v * fp.vx * fp.wz + r * z * (r - p.dv);
    check_denominator(denom)?;
    let scale = r * z / denom;
    Ok(FlowVector {
        du: scale * (r * p.du + fp.wz * v * p.dv),
        dv: scale * (r * p.dv + sign * fp.wz * v * p.du),
        depth: z,
    })
}

/// Rolling-shutter flow of the linearised camera (closed form, `v₀ = 0`).
pub fn flow_rolling_shutter(
    u: f64,
    v: f64,
    z: f64,
    m: &MotionState,
    shutter: &NormalizedShutter,
) -> Result<FlowVector> {
    closed_form(u, v, z, m, shutter, -1.0)
}

/// The closed form with `+ω_z·v·u̇_p` in the second component. Kept for comparison only.
pub fn flow_rolling_shutter_as_printed(
    u: f64,
    v: f64,
    z: f64,
    m: &MotionState,
    shutter: &NormalizedShutter,
) -> Result<FlowVector> {
    closed_form(u, v, z, m, shutter, 1.0)
}

/// Linearised-camera flow for any first row `v₀`.
///
/// The image point is back-projected to depth `z` and differentiated as `r/D·(v_x − ω_z·y,
/// v_y + ω_z·x)` with `D = r·z − v_y − ω_z·x`. Equals [`flow_rolling_shutter`] when `v₀ = 0`.
pub fn flow_rolling_shutter_general(
    u: f64,
    v: f64,
    z: f64,
    m: &MotionState,
    shutter: &NormalizedShutter,
) -> Result<FlowVector> {
    check_depth(z)?;
    let fp = FrontoParallel::from_motion(m)?;
    let x = point_at_depth(&NormalizedPoint::new(u, v), &fp, shutter, z);
    let r = shutter.rate;
    let d = r * z - fp.vy - fp.wz * x.x;
    check_denominator(d)?;
    Ok(FlowVector {
        du: r * (fp.vx - fp.wz * x.y) / d,
        dv: r * (fp.vy + fp.wz * x.x) / d,
        depth: z,
    })
}

/// Flow of the camera with exact rotation, any `v₀`.
///
/// The point is captured at `s = (v + v₀)/r`, when the camera-frame point velocity is
/// `ω × x + v − s·ω × v`. With the instantaneous perspective flow `(u̇, v̇)` at that moment the
/// flow is `r/(r − v̇)·(u̇, v̇)`.
pub fn flow_rolling_shutter_exact(
    u: f64,
    v: f64,
    z: f64,
    m: &MotionState,
    shutter: &NormalizedShutter,
) -> Result<FlowVector> {
    check_depth(z)?;
    let fp = FrontoParallel::from_motion(m)?;
    let r = shutter.rate;
    let s = (v + shutter.first_row) / r;
    let du = (fp.vx + fp.wz * s * fp.vy) / z - fp.wz * v;
    let dv = (fp.vy - fp.wz * s * fp.vx) / z + fp.wz * u;
    let denom = r - dv;
    check_denominator(denom)?;
    Ok(FlowVector { du: r * du / denom, dv: r * dv / denom, depth: z })
}

/// Camera-frame motion of a fixed point for the chosen camera model.
struct Trajectory {
    point: Vector3<f64>,
    fp: FrontoParallel,
    model: FlowModel,
}

impl Trajectory {
    /// Back-project `(u, v)` at depth `z` for a frame starting at 0.
    fn new(u: f64, v: f64, z: f64, fp: FrontoParallel, shutter: &NormalizedShutter, model: FlowModel) -> Self {
        let point = match model {
            FlowModel::Linearized => point_at_depth(&NormalizedPoint::new(u, v), &fp, shutter, z),
            FlowModel::Exact => {
                let s = (v + shutter.first_row) / shutter.rate;
                let seen = Vector3::new(u * z, v * z, z) - Vector3::new(fp.vx, fp.vy, 0.0) * s;
                Rotation::exp(&Vector3::new(0.0, 0.0, fp.wz), -s).matrix() * seen
            }
        };
        Trajectory { point, fp, model }
    }

    fn at(&self, s: f64) -> Vector3<f64> {
        let w = Vector3::new(0.0, 0.0, self.fp.wz);
        let v = Vector3::new(self.fp.vx, self.fp.vy, 0.0);
        match self.model {
            FlowModel::Linearized => self.point + (w.cross(&self.point) + v) * s,
            FlowModel::Exact => Rotation::exp(&w, s).matrix() * self.point + v * s,
        }
    }

    /// Rolling-shutter image in the frame starting at `t0`.
    fn image(&self, shutter: &NormalizedShutter, t0: f64, guess: f64, step: f64) -> Result<(f64, f64)> {
        let f = |tc: f64| {
            let p = self.at(t0 + tc);
            p.y / p.z - (shutter.rate * tc - shutter.first_row)
        };
        let tc = root_near(f, guess, step).ok_or(Error::NoScanTime { window: f64::NAN })?;
        let p = self.at(t0 + tc);
        Ok((p.x / p.z, p.y / p.z))
    }
}

/// Central difference of the rolling-shutter image of the point seen at `(u, v)` with depth
/// `z`, over frame start times `±h`.
pub fn flow_finite_difference(
    u: f64,
    v: f64,
    z: f64,
    m: &MotionState,
    shutter: &NormalizedShutter,
    h: f64,
    model: FlowModel,
) -> Result<FlowVector> {
    check_depth(z)?;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let fp = FrontoParallel::from_motion(m)?;
    let traj = Trajectory::new(u, v, z, fp, shutter, model);
    let guess = (v + shutter.first_row) / shutter.rate;
    let step = h.max(1e-9 / shutter.rate.abs());
    let plus = traj.image(shutter, h, guess, step)?;
    let minus = traj.image(shutter, -h, guess, step)?;
    Ok(FlowVector {
        du: (plus.0 - minus.0) / (2.0 * h),
        dv: (plus.1 - minus.1) / (2.0 * h),
        depth: z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use approx::assert_relative_eq;

    fn fp_motion(vx: f64, vy: f64, wz: f64) -> MotionState {
        MotionState::new(Pose::identity(), Vector3::new(vx, vy, 0.0), Vector3::new(0.0, 0.0, wz))
    }

    const SH: NormalizedShutter = NormalizedShutter { rate: 8.0, first_row: 0.0 };

    #[test]
    fn perspective_flow_cases() {
        let f = flow_perspective(0.2, 0.3, 2.0, &MotionState::default()).unwrap();
        assert_eq!((f.du, f.dv), (0.0, 0.0));
        let f = flow_perspective(0.2, 0.3, 1.0, &fp_motion(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((f.du, f.dv), (1.0, 0.0));
        let f = flow_perspective(0.2, 0.3, 4.0, &fp_motion(0.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(f.du, -0.6);
        assert_relative_eq!(f.dv, 0.4);
        // tangent to circles about the principal point
        assert_relative_eq!(f.du * 0.2 + f.dv * 0.3, 0.0);
        assert!(flow_perspective(0.0, 0.0, 0.0, &MotionState::default()).is_err());
        let not_fp = MotionState::new(Pose::identity(), Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        assert!(matches!(flow_perspective(0.0, 0.0, 1.0, &not_fp), Err(Error::UnsupportedMotion { .. })));
    }

    #[test]
    fn static_camera_has_no_flow() {
        let m = MotionState::default();
        for f in [
            flow_rolling_shutter(0.1, 0.2, 3.0, &m, &SH).unwrap(),
            flow_finite_difference(0.1, 0.2, 3.0, &m, &SH, 1e-3, FlowModel::Exact).unwrap(),
        ] {
            assert_eq!((f.du, f.dv), (0.0, 0.0));
        }
    }

    #[test]
    fn pure_translation_rescales_perspective_flow() {
        let m = fp_motion(0.6, -1.1, 0.0);
        let (u, v, z) = (0.25, -0.15, 2.5);
        let p = flow_perspective(u, v, z, &m).unwrap();
        let rs = flow_rolling_shutter(u, v, z, &m, &SH).unwrap();
        let scale = SH.rate / (SH.rate - p.dv);
        assert_relative_eq!(rs.du, scale * p.du, epsilon = 1e-14);
        assert_relative_eq!(rs.dv, scale * p.dv, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_needs_first_row_at_zero() {
        let sh = NormalizedShutter { rate: 8.0, first_row: 0.2 };
        assert!(flow_rolling_shutter(0.1, 0.1, 1.0, &fp_motion(1.0, 1.0, 0.0), &sh).is_err());
    }

    #[test]
    fn matches_linearized_difference_quotient() {
        let m = fp_motion(0.9, -0.4, 1.7);
        for (u, v, z) in [(0.3, 0.2, 2.0), (-0.4, 0.5, 1.2), (0.1, -0.3, 4.0)] {
            let analytic = flow_rolling_shutter(u, v, z, &m, &SH).unwrap();
            let general = flow_rolling_shutter_general(u, v, z, &m, &SH).unwrap();
            assert!(analytic.max_abs_diff(&general) < 1e-13);
            for h in [1e-2, 1e-3, 1e-4] {
                let fd = flow_finite_difference(u, v, z, &m, &SH, h, FlowModel::Linearized).unwrap();
                assert!(analytic.max_abs_diff(&fd) < 1e-9, "h={h}");
            }
            let printed = flow_rolling_shutter_as_printed(u, v, z, &m, &SH).unwrap();
            assert_relative_eq!(printed.du, analytic.du, epsilon = 1e-14);
            assert!((printed.dv - analytic.dv).abs() > 1e-4);
        }
    }

    #[test]
    fn general_form_handles_offset_first_row() {
        let sh = NormalizedShutter { rate: 8.0, first_row: 0.35 };
        let m = fp_motion(-0.5, 0.8, -1.2);
        let (u, v, z) = (0.2, 0.1, 2.0);
        let analytic = flow_rolling_shutter_general(u, v, z, &m, &sh).unwrap();
        let fd = flow_finite_difference(u, v, z, &m, &sh, 1e-3, FlowModel::Linearized).unwrap();
        assert!(analytic.max_abs_diff(&fd) < 1e-9);
    }

    #[test]
    fn exact_flow_converges_quadratically() {
        let sh = NormalizedShutter { rate: 6.0, first_row: 0.3 };
        let m = fp_motion(0.7, -0.9, 2.5);
        let (u, v, z) = (0.35, 0.2, 1.5);
        let analytic = flow_rolling_shutter_exact(u, v, z, &m, &sh).unwrap();
        let err = |h: f64| {
            flow_finite_difference(u, v, z, &m, &sh, h, FlowModel::Exact).unwrap().max_abs_diff(&analytic)
        };
        let mut h = 2e-2;
        for _ in 0..3 {
            let ratio = err(h) / err(h / 2.0);
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
            h /= 2.0;
        }
    }

    #[test]
    fn approaches_perspective_flow_for_fast_readout() {
        let m = fp_motion(0.4, 0.9, 0.8);
        let (u, v, z) = (0.2, 0.1, 3.0);
        let p = flow_perspective(u, v, z, &m).unwrap();
        let mut prev = f64::INFINITY;
        for rate in [1e3, 1e4, 1e5, 1e6] {
            let sh = NormalizedShutter { rate, first_row: 0.0 };
            let gap = flow_rolling_shutter(u, v, z, &m, &sh).unwrap().max_abs_diff(&p);
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-6);
        let huge = NormalizedShutter { rate: 1e9, first_row: 0.0 };
        let fd = flow_finite_difference(u, v, z, &m, &huge, 1e-4, FlowModel::Exact).unwrap();
        assert!(fd.max_abs_diff(&p) < 1e-6);
    }
}
