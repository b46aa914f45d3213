//! Back-projection of rolling-shutter images under fronto-parallel motion.
//!
//! For constant translation `v = (v_x, v_y, 0)` every back-projected ray meets two fixed
//! lines, so the moving rolling-shutter camera is a crossed-slits camera:
//!
//! - the line through the origin with direction `(v_x, v_y, 0)`;
//! - the horizontal line through `(0, −v₀·v_y/r, v_y/r)`.
//!
//! All coordinates are in the camera frame at `t = 0`, with the readout in calibrated units
//! (see [`NormalizedShutter`]).

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotionState, NormalizedPoint};
use crate::shutter::{FrontoParallel, NormalizedShutter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line3D {
    pub point: Vector3<f64>,
    direction: Vector3<f64>,
}

impl Line3D {
    pub fn new(point: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) || !point.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("line needs a finite point and nonzero direction".into()));
        }
        Ok(Line3D { point, direction: direction / n })
    }

    pub fn through(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<Self> {
        Self::new(*a, b - a)
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        self.point + self.direction * s
    }

    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).cross(&self.direction).norm()
    }
}

/// Minimal distance between two lines.
pub fn line_line_distance(a: &Line3D, b: &Line3D) -> f64 {
    let n = a.direction.cross(&b.direction);
    let offset = b.point - a.point;
    let sin = n.norm();
    if sin < 1e-12 {
        return offset.cross(&a.direction).norm();
    }
    (offset.dot(&n) / sin).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitPair {
    pub slit1: Line3D,
    pub slit2: Line3D,
}

impl SlitPair {
    /// Largest distance from `ray` to either slit.
    pub fn incidence_residual(&self, ray: &Line3D) -> f64 {
        line_line_distance(ray, &self.slit1).max(line_line_distance(ray, &self.slit2))
    }
}

/// The two slits of a translating rolling-shutter camera.
pub fn compute_slits(m: &MotionState, shutter: &NormalizedShutter) -> Result<SlitPair> {
    if m.angular_velocity != Vector3::zeros() {
        return Err(Error::UnsupportedMotion { expected: "pure translation" });
    }
    let fp = FrontoParallel::from_motion(m)?;
    if fp.vx == 0.0 && fp.vy == 0.0 {
        return Err(Error::DegenerateSlits("stationary camera is a pin-hole"));
    }
    if fp.vy == 0.0 {
        return Err(Error::DegenerateSlits("both slits lie on the x axis when v_y = 0"));
    }
    let slit1 = Line3D::new(Vector3::zeros(), Vector3::new(fp.vx, fp.vy, 0.0))?;
    let depth = fp.vy / shutter.rate;
    let slit2 = Line3D::new(Vector3::new(0.0, -shutter.first_row * depth, depth), Vector3::x())?;
    Ok(SlitPair { slit1, slit2 })
}

/// Camera-frame point at depth `z` whose rolling-shutter image is `q`.
///
/// The image row fixes the scan time `t_c = (v + v₀)/r`; the closed-form projection is then
/// linear in `(x, y)` and is inverted directly.
pub fn point_at_depth(
    q: &NormalizedPoint,
    motion: &FrontoParallel,
    shutter: &NormalizedShutter,
    z: f64,
) -> Vector3<f64> {
    let tc = (q.y + shutter.first_row) / shutter.rate;
    let a = Matrix2::new(1.0, -tc * motion.wz, tc * motion.wz, 1.0);
    let rhs = Vector2::new(z * q.x - tc * motion.vx, z * q.y - tc * motion.vy);
    // det = 1 + (t_c·ω_z)² > 0
    let xy = a.try_inverse().expect("invertible") * rhs;
    Vector3::new(xy.x, xy.y, z)
}

/// The locus of world points imaged at `q`, as a line in the camera frame at `t = 0`.
pub fn backproject(q: &NormalizedPoint, m: &MotionState, shutter: &NormalizedShutter) -> Result<Line3D> {
    backproject_with(q, m, shutter, 1e-12)
}

pub fn backproject_with(
    q: &NormalizedPoint,
    m: &MotionState,
    shutter: &NormalizedShutter,
    singularity_threshold: f64,
) -> Result<Line3D> {
    let fp = FrontoParallel::from_motion(m)?;
    let samples: Vec<Vector3<f64>> =
        [1.0, 2.0, 3.0].iter().map(|&z| point_at_depth(q, &fp, shutter, z)).collect();
    for p in &samples {
        let denom = shutter.rate * p.z - fp.vy - fp.wz * p.x;
        if denom.abs() < singularity_threshold {
            return Err(Error::Singularity { value: denom });
        }
    }
    let line = Line3D::through(&samples[0], &samples[1])?;
    let off_line = line.distance_to_point(&samples[2]);
    if off_line > 1e-9 * (1.0 + samples[2].norm()) {
        return Err(Error::InvalidParameter(format!(
            "inverse image is not a line (third sample off by {off_line:e})"
        )));
    }
    Ok(line)
}
