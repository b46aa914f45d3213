//! Pose algebra on SO(3) and the ideal perspective camera.
//!
//! Conventions used throughout the crate:
//!
//! - a pose maps world coordinates into the camera frame, `x_cam = R·x_world + T`,
//!   so the camera centre (viewpoint) is `V = −Rᵀ·T`;
//! - `P(t) = K·[R(t) | T(t)]` with `R(t) = exp(t·ω̂)·R(0)` and `T(t) = T(0) + v·t`;
//! - the linearised camera replaces the exponential by `I + t·ω̂`.
//!
//! Canonical units are meters, seconds, radians and pixels.

use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Mul;

use crate::error::{Error, Result};

/// A static point in the world frame (meters).
pub type WorldPoint = Point3<f64>;
/// Image coordinates in pixels.
pub type PixelPoint = Point2<f64>;
/// Calibrated image coordinates (`K⁻¹` applied, unit focal length).
pub type NormalizedPoint = Point2<f64>;

/// Depth magnitude below which a point is considered to lie on the camera plane.
pub const MIN_DEPTH: f64 = 1e-12;

/// Skew-symmetric matrix with `hat(w)·u = w × u`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
fn vee_antisym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthogonality and a positive determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = m * m.transpose() - Matrix3::identity();
        if !m.iter().all(|x| x.is_finite()) || err.amax() > Self::TOLERANCE {
            return Err(Error::InvalidParameter("matrix is not orthogonal".into()));
        }
        if (m.determinant() - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidParameter("rotation determinant is not +1".into()));
        }
        Ok(Rotation(m))
    }

    /// Rodrigues exponential of `hat(omega·t)`.
    pub fn exp(omega: &Vector3<f64>, t: f64) -> Self {
        let w = omega * t;
        let theta = w.norm();
        let k = hat(&w);
        let (a, b) = if theta < 1e-8 {
            // Taylor expansions of sin(θ)/θ and (1 − cos θ)/θ²
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
        };
        Rotation(Matrix3::identity() + k * a + k * k * b)
    }

    /// Axis-angle vector `w` with `Rotation::exp(w, 1) == self`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let anti = vee_antisym(r);
        let theta = anti.norm().atan2(cos_theta);
        if theta < 1e-6 {
            // sin θ ≈ θ, so the antisymmetric part is already the log to third order
            return anti * (1.0 + theta * theta / 6.0);
        }
        if PI - theta > 1e-4 {
            return anti * (theta / theta.sin());
        }
        // Near a half turn sin θ vanishes; recover the axis from R + Rᵀ = 2cosθ·I + 2(1 − cosθ)·nnᵀ.
        let sym = (r + r.transpose()) * 0.5;
        let nnt = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let (col, _) = (0..3)
            .map(|i| (i, nnt[(i, i)]))
            .fold((0, f64::MIN), |best, c| if c.1 > best.1 { c } else { best });
        let mut axis: Vector3<f64> = nnt.column(col).into();
        axis /= axis.norm();
        if axis.dot(&anti) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotation about the camera's optical (z) axis.
    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vector3::z(), angle)
    }

    /// Rotation whose camera frame looks from `eye` towards `target` with the given world `up` hint.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        if z.norm() < MIN_DEPTH {
            return Err(Error::InvalidParameter("eye and target coincide".into()));
        }
        let z = z.normalize();
        // image y points down, so the camera x axis is y × z with y ≈ −up
        let x = z.cross(&-up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidParameter("up vector is parallel to the view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Ok(Rotation(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])))
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl TryFrom<Matrix3<f64>> for Rotation {
    type Error = Error;
    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        Rotation::from_matrix(m)
    }
}

impl From<Rotation> for Matrix3<f64> {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

pub fn rotation_exp(omega: &Vector3<f64>, t: f64) -> Rotation {
    Rotation::exp(omega, t)
}

pub fn rotation_log(r: &Rotation) -> Vector3<f64> {
    r.log()
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Pose whose camera centre sits at `center`.
    pub fn from_center(rotation: Rotation, center: &Vector3<f64>) -> Self {
        let translation = -(rotation.matrix() * center);
        Pose { rotation, translation }
    }

    /// Camera centre in world coordinates, `−Rᵀ·T`.
    pub fn viewpoint(&self) -> Vector3<f64> {
        -(self.rotation.matrix().transpose() * self.translation)
    }

    pub fn transform(&self, x: &WorldPoint) -> Vector3<f64> {
        self.rotation.matrix() * x.coords + self.translation
    }
}

/// Pinhole calibration: upper-triangular `K` and image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    k: Matrix3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(k: Matrix3<f64>, width: u32, height: u32) -> Result<Self> {
        let lower_ok = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
        let diag_ok = k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0;
        if !lower_ok || !diag_ok || !k.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "K must be upper triangular with a positive diagonal".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        Ok(CameraIntrinsics { k: k / k[(2, 2)], width, height })
    }

    /// Square pixels, centred principal point, horizontal field of view in degrees.
    pub fn from_fov(hfov_deg: f64, width: u32, height: u32) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::InvalidParameter(format!("field of view {hfov_deg} out of range")));
        }
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::from_focal(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn from_focal(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0), width, height)
    }

    /// `K = I`: pixel and normalized coordinates coincide.
    pub fn identity(width: u32, height: u32) -> Result<Self> {
        Self::new(Matrix3::identity(), width, height)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }

    pub fn skew(&self) -> f64 {
        self.k[(0, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    /// Normalized length of one pixel row, `1/f_y`.
    pub fn pixel_size(&self) -> f64 {
        1.0 / self.fy()
    }

    pub fn to_pixel(&self, q: &NormalizedPoint) -> PixelPoint {
        PixelPoint::new(self.fx() * q.x + self.skew() * q.y + self.cx(), self.fy() * q.y + self.cy())
    }

    pub fn to_normalized(&self, p: &PixelPoint) -> NormalizedPoint {
        let y = (p.y - self.cy()) / self.fy();
        NormalizedPoint::new((p.x - self.cx() - self.skew() * y) / self.fx(), y)
    }

    /// Maps a normalized displacement (no principal point) to pixels.
    pub fn scale_displacement(&self, d: &nalgebra::Vector2<f64>) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.fx() * d.x + self.skew() * d.y, self.fy() * d.y)
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }
}

/// Camera pose at `t = 0` and its constant velocities, both expressed in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionState {
    pub pose0: Pose,
    /// Rate of change of `T(t)` in m/s.
    pub linear_velocity: Vector3<f64>,
    /// Left-multiplied angular velocity in rad/s.
    pub angular_velocity: Vector3<f64>,
}

impl MotionState {
    pub fn new(pose0: Pose, linear_velocity: Vector3<f64>, angular_velocity: Vector3<f64>) -> Self {
        MotionState { pose0, linear_velocity, angular_velocity }
    }

    pub fn stationary(pose0: Pose) -> Self {
        MotionState { pose0, ..Default::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.pose0.rotation.matrix().iter().all(|v| v.is_finite())
            && self.pose0.translation.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    pub fn is_stationary(&self) -> bool {
        self.linear_velocity == Vector3::zeros() && self.angular_velocity == Vector3::zeros()
    }

    /// `(R(t), T(t))`; the rotation block is only orthogonal when `linearized` is false or `ω = 0`.
    pub fn extrinsics_at(&self, t: f64, linearized: bool) -> (Matrix3<f64>, Vector3<f64>) {
        let r0 = self.pose0.rotation.matrix();
        let rot = if linearized {
            (Matrix3::identity() + hat(&self.angular_velocity) * t) * r0
        } else {
            Rotation::exp(&self.angular_velocity, t).matrix() * r0
        };
        (rot, self.pose0.translation + self.linear_velocity * t)
    }

    /// Exact pose at time `t`, used as the origin of a frame starting at `t`.
    pub fn advanced(&self, t: f64) -> MotionState {
        let (rot, translation) = self.extrinsics_at(t, false);
        MotionState {
            pose0: Pose { rotation: Rotation(rot), translation },
            ..*self
        }
    }

    /// Velocity of a camera-frame point for the linearised model, `v − ω × T(0)`.
    ///
    /// With `X_c = R(0)·X + T(0)`, the linearised camera sees `X_c + t·(ω × X_c + v_eff)`.
    pub fn effective_velocity(&self) -> Vector3<f64> {
        self.linear_velocity - self.angular_velocity.cross(&self.pose0.translation)
    }
}

/// `K·[R(t) | T(t)]`, optionally with the first-order rotation `(I + t·ω̂)·R(0)`.
pub fn camera_matrix_at(
    m: &MotionState,
    k: &CameraIntrinsics,
    t: f64,
    linearized: bool,
) -> Matrix3x4<f64> {
    let (rot, trans) = m.extrinsics_at(t, linearized);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    rt.set_column(3, &trans);
    k.matrix() * rt
}

/// Dehomogenise `P·X`.
pub fn project_perspective(x: &WorldPoint, p: &Matrix3x4<f64>) -> Result<PixelPoint> {
    let h = p * Vector4::new(x.x, x.y, x.z, 1.0);
    if h.z.abs() < MIN_DEPTH {
        return Err(Error::NegativeDepth { depth: h.z });
    }
    Ok(PixelPoint::new(h.x / h.z, h.y / h.z))
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

pub fn rev_per_sec_to_rad(rps: f64) -> f64 {
    rps * 2.0 * PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    #[test]
    fn hat_canonical() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(hat(&Vector3::z()), expected);
    }

    #[test]
    fn exp_half_turn() {
        let r = Rotation::exp(&Vector3::new(0.0, 0.0, PI), 1.0);
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-15);
        assert_eq!(*Rotation::exp(&Vector3::zeros(), 3.0).matrix(), Matrix3::identity());
    }

    #[test]
    fn log_special_cases() {
        assert_eq!(Rotation::identity().log(), Vector3::zeros());
        let half = Rotation::from_matrix(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))).unwrap();
        let w = half.log();
        assert_relative_eq!(w.norm(), PI, epsilon = 1e-12);
        assert_relative_eq!(w.x, 0.0);
        assert_relative_eq!(w.y, 0.0);
    }

    #[test]
    fn log_near_half_turn_round_trips() {
        for axis in [Vector3::new(1.0, 2.0, -0.5), Vector3::new(-0.3, 0.1, 1.0)] {
            let axis = axis.normalize();
            for eps in [0.0, 1e-9, 1e-6, 1e-3] {
                let r = Rotation::exp(&axis, PI - eps);
                let back = Rotation::exp(&r.log(), 1.0);
                assert_relative_eq!(*back.matrix(), *r.matrix(), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rejects_non_rotations() {
        assert!(Rotation::from_matrix(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).is_err());
        assert!(Rotation::from_matrix(Matrix3::identity() * 2.0).is_err());
    }

    #[test]
    fn linearized_and_exact_agree_at_t0_and_without_rotation() {
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        let pose = Pose::new(Rotation::exp(&Vector3::new(0.1, -0.2, 0.3), 1.0), Vector3::new(1.0, 2.0, 3.0));
        let spinning = MotionState::new(pose, Vector3::new(0.3, 0.1, -0.2), Vector3::new(0.5, 0.2, 1.0));
        assert_eq!(
            camera_matrix_at(&spinning, &k, 0.0, true),
            camera_matrix_at(&spinning, &k, 0.0, false)
        );
        let sliding = MotionState::new(pose, Vector3::new(0.3, 0.1, -0.2), Vector3::zeros());
        for t in [-0.5, 0.01, 0.2, 3.0] {
            let a = camera_matrix_at(&sliding, &k, t, true);
            let b = camera_matrix_at(&sliding, &k, t, false);
            assert!((a - b).amax() <= 1e-14 * a.amax());
        }
    }

    #[test]
    fn linearization_error_is_second_order() {
        let k = CameraIntrinsics::identity(1, 1).unwrap();
        let m = MotionState::new(Pose::identity(), Vector3::new(0.1, 0.2, 0.0), Vector3::new(0.4, -0.7, 1.3));
        let gap = |t: f64| {
            (camera_matrix_at(&m, &k, t, false) - camera_matrix_at(&m, &k, t, true)).norm()
        };
        let mut t = 0.1;
        for _ in 0..4 {
            let ratio = gap(t) / gap(t / 2.0);
            assert!((3.9..4.1).contains(&ratio), "ratio {ratio}");
            t /= 2.0;
        }
    }

    #[test]
    fn perspective_basics() {
        let p = camera_matrix_at(&MotionState::default(), &CameraIntrinsics::identity(1, 1).unwrap(), 0.0, false);
        assert_eq!(project_perspective(&WorldPoint::new(0.0, 0.0, 1.0), &p).unwrap(), PixelPoint::new(0.0, 0.0));
        let q = project_perspective(&WorldPoint::new(1.0, 2.0, 10.0), &p).unwrap();
        assert_relative_eq!(q, PixelPoint::new(0.1, 0.2), epsilon = 1e-16);
        assert!(matches!(
            project_perspective(&WorldPoint::new(1.0, 2.0, 0.0), &p),
            Err(Error::NegativeDepth { .. })
        ));
    }

    #[test]
    fn viewpoint_convention() {
        let rot = Rotation::exp(&Vector3::new(0.3, 0.2, -0.1), 1.0);
        let c = Vector3::new(1.0, -2.0, 5.0);
        let pose = Pose::from_center(rot, &c);
        assert_relative_eq!(pose.viewpoint(), c, epsilon = 1e-12);
        assert_relative_eq!(pose.transform(&WorldPoint::from(c)), Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(3.0, -1.0, -10.0);
        let r = Rotation::look_at(&eye, &Vector3::zeros(), &Vector3::y()).unwrap();
        let pose = Pose::from_center(r, &eye);
        let c = pose.transform(&WorldPoint::origin());
        assert_relative_eq!(c.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.y, 0.0, epsilon = 1e-12);
        assert!(c.z > 0.0);
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
    }

    #[test]
    fn intrinsics_round_trip() {
        let k = CameraIntrinsics::new(Matrix3::new(800.0, 2.0, 310.0, 0.0, 790.0, 250.0, 0.0, 0.0, 1.0), 640, 480).unwrap();
        let p = PixelPoint::new(12.5, 400.25);
        assert_relative_eq!(k.to_pixel(&k.to_normalized(&p)), p, epsilon = 1e-12);
        assert!(CameraIntrinsics::new(Matrix3::new(1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0), 1, 1).is_err());
        assert!(CameraIntrinsics::identity(0, 5).is_err());
    }

    proptest! {
        #[test]
        fn hat_is_cross_product(a in vec3(), b in vec3()) {
            prop_assert!((hat(&a) * b - a.cross(&b)).norm() < 1e-12);
            prop_assert!((hat(&a) * b + hat(&b) * a).norm() < 1e-12);
            prop_assert_eq!(hat(&a).transpose(), -hat(&a));
        }

        #[test]
        fn exp_is_one_parameter_group(w in vec3(), t in -1.0..1.0f64, s in -1.0..1.0f64) {
            let lhs = Rotation::exp(&w, t) * Rotation::exp(&w, s);
            let rhs = Rotation::exp(&w, t + s);
            prop_assert!((lhs.matrix() - rhs.matrix()).amax() < 1e-9);
            prop_assert!(Rotation::from_matrix(*rhs.matrix()).is_ok());
        }

        #[test]
        fn exp_log_round_trip(w in vec3()) {
            let r = Rotation::exp(&w, 1.0);
            let back = Rotation::exp(&r.log(), 1.0);
            prop_assert!((back.matrix() - r.matrix()).norm() < 1e-8);
            prop_assert!(r.angle() <= PI + 1e-12);
        }

        #[test]
        fn projection_is_homogeneous(x in vec3(), lambda in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64]) {
            let pose = Pose::new(Rotation::exp(&Vector3::new(0.2, -0.1, 0.4), 1.0), Vector3::new(0.0, 0.0, 6.0));
            let k = CameraIntrinsics::from_fov(50.0, 640, 480).unwrap();
            let p = camera_matrix_at(&MotionState::stationary(pose), &k, 0.0, false);
            let a = project_perspective(&WorldPoint::from(x), &p).unwrap();
            let b = project_perspective(&WorldPoint::from(x), &(p * lambda)).unwrap();
            prop_assert!((a - b).norm() < 1e-9 * (1.0 + a.coords.norm()));
        }
    }
}
