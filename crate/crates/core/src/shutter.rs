//! The rolling-shutter constraint and projection.
//!
//! Row `v` of a frame starting at `t₀` is exposed at `t₀ + t` where `v = r·t − v₀`. A world
//! point is imaged at the instant `t_c` at which its moving projection crosses the current
//! scanline:
//!
//! ```text
//! π_y(P(t_c)·X) = r·t_c − v₀
//! ```
//!
//! Under the linearised camera the crossing time solves a quadratic (linear for fronto-parallel
//! motion, where a closed-form projection exists); with the exact rotation it is found by
//! bracketing over the frame window.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    camera_matrix_at, project_perspective, CameraIntrinsics, MotionState, PixelPoint, WorldPoint,
    MIN_DEPTH,
};
use crate::roots::{bracketed_roots, continuous_quadratic_root, quadratic_roots};

/// Readout timing of a rolling-shutter sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShutterParams {
    /// Pixel rows per second; negative for bottom-to-top readout.
    pub scan_rate: f64,
    /// `v₀` in `v = r·t − v₀` (pixels).
    pub first_row: f64,
    /// Idle time between the end of one frame's readout and the next (seconds).
    pub frame_delay: f64,
    pub framerate: f64,
    /// Per-row exposure (seconds). Informational; exposure is treated as instantaneous.
    pub row_exposure: f64,
}

impl ShutterParams {
    pub fn new(scan_rate: f64, first_row: f64, frame_delay: f64, framerate: f64, row_exposure: f64) -> Result<Self> {
        let s = ShutterParams { scan_rate, first_row, frame_delay, framerate, row_exposure };
        s.validate()?;
        Ok(s)
    }

    /// Top-to-bottom readout spanning the whole frame period, `r = n_rows·f`, no delay.
    pub fn continuous(framerate: f64, n_rows: u32) -> Result<Self> {
        Self::new(n_rows as f64 * framerate, 0.0, 0.0, framerate, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.scan_rate, self.first_row, self.frame_delay, self.framerate, self.row_exposure]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("shutter parameters must be finite".into()));
        }
        if self.scan_rate == 0.0 {
            return Err(Error::InvalidParameter("scan rate must be nonzero".into()));
        }
        if self.framerate <= 0.0 {
            return Err(Error::InvalidParameter("framerate must be positive".into()));
        }
        if self.frame_delay < 0.0 || self.row_exposure < 0.0 {
            return Err(Error::InvalidParameter("delay and exposure must be nonnegative".into()));
        }
        Ok(())
    }

    /// Also checks that one frame's readout fits inside a frame period.
    pub fn validate_for(&self, k: &CameraIntrinsics) -> Result<()> {
        self.validate()?;
        if self.frame_window(k) > (1.0 + 1e-12) / self.framerate {
            return Err(Error::InvalidParameter(format!(
                "readout of {} rows at {} rows/s exceeds the frame period",
                k.height, self.scan_rate
            )));
        }
        Ok(())
    }

    /// Readout duration `n_rows/|r|`; valid scan times lie in `[0, frame_window]`.
    pub fn frame_window(&self, k: &CameraIntrinsics) -> f64 {
        k.height as f64 / self.scan_rate.abs()
    }

    /// Start time of frame `index`.
    pub fn frame_start(&self, index: i64) -> f64 {
        index as f64 * (1.0 / self.framerate + self.frame_delay)
    }

    /// Row being exposed `t` seconds into a frame.
    pub fn row_at(&self, t: f64) -> f64 {
        self.scan_rate * t - self.first_row
    }

    /// Scan rate in image heights per second.
    pub fn frame_scan_rate(&self, k: &CameraIntrinsics) -> f64 {
        self.scan_rate.abs() / k.height as f64
    }

    /// The same readout expressed in calibrated image coordinates.
    pub fn normalized(&self, k: &CameraIntrinsics) -> NormalizedShutter {
        NormalizedShutter {
            rate: self.scan_rate / k.fy(),
            first_row: (self.first_row + k.cy()) / k.fy(),
        }
    }
}

/// Readout in calibrated coordinates: normalized row `y = rate·t − first_row`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedShutter {
    pub rate: f64,
    pub first_row: f64,
}

/// Motion classes with different scan-time equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScanTimeCase {
    /// `v = (v_x, v_y, 0)`, `ω = (0, 0, ω_z)`, linearised: linear in `t_c`, closed-form projection.
    FrontoParallelLinear,
    /// `v = (0, 0, v_z)`, `ω = 0`: quadratic in `t_c`.
    AxialQuadratic,
    /// Any constant `(v, ω)` under the linearised camera: quadratic in `t_c`.
    GeneralQuadratic,
    /// Exact rotation: nonlinear in `t_c`, solved by bracketing.
    ExactNonlinear,
}

/// Fronto-parallel velocities in the camera frame at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrontoParallel {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl FrontoParallel {
    pub fn from_motion(m: &MotionState) -> Result<Self> {
        if classify_case(m) != ScanTimeCase::FrontoParallelLinear {
            return Err(Error::UnsupportedMotion { expected: "fronto-parallel" });
        }
        let v = m.effective_velocity();
        Ok(FrontoParallel { vx: v.x, vy: v.y, wz: m.angular_velocity.z })
    }
}

/// Tuning for the scan-time solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Smallest admissible `|r·z − v_y − ω_z·x|` in the closed form.
    pub singularity_threshold: f64,
    /// Sub-intervals sampled when bracketing the exact constraint.
    pub bracket_samples: usize,
    /// Reject scan times outside `[0, n_rows/|r|]`.
    pub enforce_window: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { singularity_threshold: 1e-12, bracket_samples: 64, enforce_window: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanTime {
    pub t: f64,
    /// A later crossing of the same scanline inside the window, if one exists.
    pub second_root: Option<f64>,
}

/// Rolling-shutter image of a point, split into its perspective part and correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsProjection {
    pub pixel: PixelPoint,
    pub scan_time: f64,
    /// Perspective projection at `t = 0`.
    pub perspective_part: PixelPoint,
    pub correction: Vector2<f64>,
    pub case: ScanTimeCase,
    pub second_root: Option<f64>,
}

/// `π_y(P(t)·X) − (r·t − v₀)` in pixels.
pub fn constraint_residual(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    t: f64,
    linearized: bool,
) -> Result<f64> {
    let (rot, trans) = m.extrinsics_at(t, linearized);
    let depth = (rot * x.coords + trans).z;
    if depth <= MIN_DEPTH {
        return Err(Error::NegativeDepth { depth });
    }
    let q = project_perspective(x, &camera_matrix_at(m, k, t, linearized))?;
    Ok(q.y - s.row_at(t))
}

/// Case for the linearised camera, decided from the motion alone.
pub fn classify_case(m: &MotionState) -> ScanTimeCase {
    let v = &m.linear_velocity;
    let w = &m.angular_velocity;
    if v.z == 0.0 && w.x == 0.0 && w.y == 0.0 {
        ScanTimeCase::FrontoParallelLinear
    } else if v.x == 0.0 && v.y == 0.0 && *w == Vector3::zeros() {
        ScanTimeCase::AxialQuadratic
    } else {
        ScanTimeCase::GeneralQuadratic
    }
}

fn check_case(m: &MotionState, case: ScanTimeCase) -> Result<()> {
    let actual = classify_case(m);
    match case {
        ScanTimeCase::FrontoParallelLinear if actual != case => {
            Err(Error::UnsupportedMotion { expected: "fronto-parallel" })
        }
        ScanTimeCase::AxialQuadratic if actual != case => {
            Err(Error::UnsupportedMotion { expected: "translation along the optical axis" })
        }
        _ => Ok(()),
    }
}

/// Coefficients `(A, B, C)` of `A·t² + B·t + C = 0` for the linearised constraint.
fn linearized_coefficients(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
) -> (Vector3<f64>, Vector3<f64>, [f64; 3]) {
    let xc = m.pose0.transform(x);
    let vel = m.angular_velocity.cross(&xc) + m.effective_velocity();
    let (fy, cy, r, v0) = (k.fy(), k.cy(), s.scan_rate, s.first_row);
    let a = r * vel.z;
    let b = r * xc.z - v0 * vel.z - fy * vel.y - cy * vel.z;
    let c = -(fy * xc.y + cy * xc.z + v0 * xc.z);
    (xc, vel, [a, b, c])
}

fn in_window(t: f64, window: f64) -> bool {
    let tol = 1e-12 * (1.0 + window);
    t >= -tol && t <= window + tol
}

/// Scan time `t_c` of `x`: the smallest root of the constraint inside the frame window.
pub fn solve_scan_time(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    case: ScanTimeCase,
) -> Result<ScanTime> {
    solve_scan_time_with(x, m, k, s, case, &SolverOptions::default())
}

pub fn solve_scan_time_with(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    case: ScanTimeCase,
    opts: &SolverOptions,
) -> Result<ScanTime> {
    check_case(m, case)?;
    let window = s.frame_window(k);
    if case == ScanTimeCase::ExactNonlinear {
        let (lo, hi) = if opts.enforce_window { (0.0, window) } else { (-window, 2.0 * window) };
        let f = |t: f64| constraint_residual(x, m, k, s, t, false).ok();
        let roots = bracketed_roots(f, lo, hi, opts.bracket_samples, 2);
        let Some(&t) = roots.first() else {
            let (rot, trans) = m.extrinsics_at(0.0, false);
            let depth = (rot * x.coords + trans).z;
            if depth <= MIN_DEPTH {
                return Err(Error::NegativeDepth { depth });
            }
            return Err(Error::NoScanTime { window });
        };
        return Ok(ScanTime { t, second_root: roots.get(1).copied() });
    }

    let (xc, vel, [a, b, c]) = linearized_coefficients(x, m, k, s);
    let depth_at = |t: f64| xc.z + vel.z * t;
    if !opts.enforce_window {
        let t = continuous_quadratic_root(a, b, c).ok_or(Error::NoScanTime { window })?;
        let depth = depth_at(t);
        if depth <= MIN_DEPTH {
            return Err(Error::NegativeDepth { depth });
        }
        return Ok(ScanTime { t, second_root: None });
    }
    let mut candidates = quadratic_roots(a, b, c)
        .into_iter()
        .filter(|&t| in_window(t, window));
    let first = candidates.next();
    let second = candidates.next();
    match first {
        Some(t) if depth_at(t) > MIN_DEPTH => {
            Ok(ScanTime { t, second_root: second.filter(|&t2| depth_at(t2) > MIN_DEPTH) })
        }
        Some(t) => match second {
            Some(t2) if depth_at(t2) > MIN_DEPTH => Ok(ScanTime { t: t2, second_root: None }),
            _ => Err(Error::NegativeDepth { depth: depth_at(t) }),
        },
        None if xc.z <= MIN_DEPTH => Err(Error::NegativeDepth { depth: xc.z }),
        None => Err(Error::NoScanTime { window }),
    }
}

/// Closed-form fronto-parallel projection in calibrated coordinates.
///
/// Returns `(q(0), t_c, correction)` for a camera-frame point `xc`:
///
/// ```text
/// t_c = (y + v₀·z) / (r·z − v_y − ω_z·x)
/// q   = (x/z, y/z) + t_c·(v_x − ω_z·y, v_y + ω_z·x)/z
/// ```
pub fn fronto_parallel_closed_form(
    xc: &Vector3<f64>,
    motion: &FrontoParallel,
    shutter: &NormalizedShutter,
    singularity_threshold: f64,
) -> Result<(Vector2<f64>, f64, Vector2<f64>)> {
    let (x, y, z) = (xc.x, xc.y, xc.z);
    if z <= MIN_DEPTH {
        return Err(Error::NegativeDepth { depth: z });
    }
    let denom = shutter.rate * z - motion.vy - motion.wz * x;
    if denom.abs() < singularity_threshold {
        return Err(Error::Singularity { value: denom });
    }
    let tc = (y + shutter.first_row * z) / denom;
    let flow = Vector2::new(motion.vx - motion.wz * y, motion.vy + motion.wz * x) / z;
    Ok((Vector2::new(x / z, y / z), tc, flow * tc))
}

/// Rolling-shutter projection of `x` in the frame starting at `t = 0`.
///
/// With `exact` unset the linearised camera is used: the closed form for fronto-parallel
/// motion (exact when `ω = 0`) and the quadratic scan time otherwise. With `exact` set the
/// scan time is bracketed on the exact constraint.
pub fn project_rolling_shutter(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    exact: bool,
) -> Result<RsProjection> {
    project_rolling_shutter_with(x, m, k, s, exact, &SolverOptions::default())
}

pub fn project_rolling_shutter_with(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    exact: bool,
    opts: &SolverOptions,
) -> Result<RsProjection> {
    let p0 = camera_matrix_at(m, k, 0.0, false);
    let depth0 = m.pose0.transform(x).z;
    if depth0 <= MIN_DEPTH && !exact {
        return Err(Error::NegativeDepth { depth: depth0 });
    }
    let perspective_part = project_perspective(x, &p0)?;
    let linear_case = classify_case(m);

    if !exact && linear_case == ScanTimeCase::FrontoParallelLinear {
        let fp = FrontoParallel::from_motion(m)?;
        let xc = m.pose0.transform(x);
        let (_, tc, corr) =
            fronto_parallel_closed_form(&xc, &fp, &s.normalized(k), opts.singularity_threshold)?;
        let window = s.frame_window(k);
        if opts.enforce_window && !in_window(tc, window) {
            return Err(Error::NoScanTime { window });
        }
        let correction = k.scale_displacement(&corr);
        return Ok(RsProjection {
            pixel: perspective_part + correction,
            scan_time: tc,
            perspective_part,
            correction,
            case: linear_case,
            second_root: None,
        });
    }

    let case = if exact { ScanTimeCase::ExactNonlinear } else { linear_case };
    let st = solve_scan_time_with(x, m, k, s, case, opts)?;
    let pixel = project_perspective(x, &camera_matrix_at(m, k, st.t, !exact))?;
    Ok(RsProjection {
        pixel,
        scan_time: st.t,
        perspective_part,
        correction: pixel - perspective_part,
        case,
        second_root: st.second_root,
    })
}

/// Projection in frame `index`, whose readout starts at [`ShutterParams::frame_start`].
pub fn project_in_frame(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    index: i64,
    exact: bool,
) -> Result<RsProjection> {
    let t0 = s.frame_start(index);
    let mut proj = project_rolling_shutter(x, &m.advanced(t0), k, s, exact)?;
    proj.scan_time += t0;
    if let Some(t2) = proj.second_root.as_mut() {
        *t2 += t0;
    }
    Ok(proj)
}

/// Length in pixels of the rolling-shutter correction under the linearised camera.
pub fn correction_magnitude(
    x: &WorldPoint,
    m: &MotionState,
    k: &CameraIntrinsics,
    s: &ShutterParams,
) -> Result<f64> {
    Ok(project_rolling_shutter(x, m, k, s, false)?.correction.norm())
}

/// Depth below which a vertical speed `v_y` (m/s) displaces points by more than one pixel
/// within a frame.
///
/// `z_min = v_y / (s_α·r)` with the scan rate in image heights per second, i.e. the
/// correction accumulated over one full readout stays under a pixel for `z > z_min`.
pub fn limit_line(s: &ShutterParams, k: &CameraIntrinsics, v_y: f64) -> f64 {
    v_y.abs() / (k.pixel_size() * s.frame_scan_rate(k))
}

/// True when perspective modelling is sufficient at depth `z`.
pub fn is_safe(s: &ShutterParams, k: &CameraIntrinsics, v_y: f64, z: f64) -> bool {
    z > limit_line(s, k, v_y)
}

/// Samples of the limit line `(v_y, z_min)` over `speeds`.
pub fn limit_line_curve(s: &ShutterParams, k: &CameraIntrinsics, speeds: &[f64]) -> Vec<(f64, f64)> {
    speeds.iter().map(|&v| (v, limit_line(s, k, v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Rotation};
    use approx::assert_relative_eq;

    /// K = I with a one-unit-tall image; normalized and pixel rows coincide.
    fn unit_camera() -> CameraIntrinsics {
        CameraIntrinsics::identity(1, 1).unwrap()
    }

    fn shutter(r: f64, v0: f64) -> ShutterParams {
        ShutterParams::new(r, v0, 0.0, 1.0, 0.0).unwrap()
    }

    fn motion(v: [f64; 3], w: [f64; 3]) -> MotionState {
        MotionState::new(Pose::identity(), Vector3::from(v), Vector3::from(w))
    }

    /// Independent bisection on the exact constraint over `[lo, hi]`.
    fn bisection_oracle(
        x: &WorldPoint,
        m: &MotionState,
        k: &CameraIntrinsics,
        s: &ShutterParams,
        mut lo: f64,
        mut hi: f64,
    ) -> f64 {
        let f = |t: f64| {
            let (rot, trans) = m.extrinsics_at(t, false);
            let c = k.matrix() * (rot * x.coords + trans);
            c.y / c.z - (s.scan_rate * t - s.first_row)
        };
        assert!(f(lo) * f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) * f(lo) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn validates_parameters() {
        assert!(ShutterParams::new(0.0, 0.0, 0.0, 15.0, 0.0).is_err());
        assert!(ShutterParams::new(100.0, 0.0, -1.0, 15.0, 0.0).is_err());
        assert!(ShutterParams::new(100.0, 0.0, 0.0, 0.0, 0.0).is_err());
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        assert!(ShutterParams::continuous(15.0, 480).unwrap().validate_for(&k).is_ok());
        assert!(ShutterParams::new(480.0 * 10.0, 0.0, 0.0, 15.0, 0.0).unwrap().validate_for(&k).is_err());
    }

    #[test]
    fn static_camera_residual_is_affine() {
        let k = unit_camera();
        let s = shutter(10.0, 0.2);
        let m = MotionState::default();
        let x = WorldPoint::new(0.3, 0.45, 1.5);
        let row = 0.3;
        for t in [0.0, 0.01, 0.05] {
            let res = constraint_residual(&x, &m, &k, &s, t, true).unwrap();
            assert_relative_eq!(res, row - 10.0 * t + 0.2, epsilon = 1e-15);
        }
        let st = solve_scan_time(&x, &m, &k, &s, ScanTimeCase::FrontoParallelLinear).unwrap();
        assert_relative_eq!(st.t, (row + 0.2) / 10.0, epsilon = 1e-15);
    }

    #[test]
    fn classifies_table_rows() {
        assert_eq!(classify_case(&motion([1.0, 2.0, 0.0], [0.0, 0.0, 0.5])), ScanTimeCase::FrontoParallelLinear);
        assert_eq!(classify_case(&motion([0.0, 0.0, 1.0], [0.0; 3])), ScanTimeCase::AxialQuadratic);
        assert_eq!(classify_case(&motion([0.0; 3], [0.0; 3])), ScanTimeCase::FrontoParallelLinear);
        assert_eq!(classify_case(&motion([0.1, 0.0, 1.0], [0.0; 3])), ScanTimeCase::GeneralQuadratic);
        assert_eq!(classify_case(&motion([0.0; 3], [0.1, 0.0, 0.0])), ScanTimeCase::GeneralQuadratic);
    }

    #[test]
    fn fronto_parallel_scan_time_example() {
        let (k, s) = (unit_camera(), shutter(10.0, 0.0));
        let m = motion([0.0, 0.5, 0.0], [0.0; 3]);
        let x = WorldPoint::new(0.0, 0.1, 1.0);
        let oracle = bisection_oracle(&x, &m, &k, &s, 0.0, 0.1);
        assert_relative_eq!(oracle, 0.1 / 9.5, epsilon = 1e-15);
        for case in [ScanTimeCase::FrontoParallelLinear, ScanTimeCase::GeneralQuadratic, ScanTimeCase::ExactNonlinear] {
            let st = solve_scan_time(&x, &m, &k, &s, case).unwrap();
            assert_relative_eq!(st.t, oracle, epsilon = 1e-14);
        }
        let p = project_rolling_shutter(&x, &m, &k, &s, false).unwrap();
        assert_relative_eq!(p.pixel.y, 0.1 + 0.1 * 0.5 / 9.5, epsilon = 1e-15);
        assert_relative_eq!(p.pixel.y, 0.105_263_157_894_736_84, epsilon = 1e-15);
    }

    #[test]
    fn axial_quadratic_example() {
        let (k, s) = (unit_camera(), shutter(10.0, 0.0));
        let m = motion([0.0, 0.0, 1.0], [0.0; 3]);
        let x = WorldPoint::new(0.0, 0.1, 1.0);
        // 10t² + 10t − 0.1 = 0
        let oracle = bisection_oracle(&x, &m, &k, &s, 0.0, 0.1);
        assert_relative_eq!(oracle, 0.009_901_951_359_278_5, epsilon = 1e-15);
        let st = solve_scan_time(&x, &m, &k, &s, ScanTimeCase::AxialQuadratic).unwrap();
        assert_relative_eq!(st.t, oracle, epsilon = 1e-15);
        assert!(constraint_residual(&x, &m, &k, &s, st.t, true).unwrap().abs() < 1e-9);
        assert!(solve_scan_time(&x, &m, &k, &s, ScanTimeCase::FrontoParallelLinear).is_err());
    }

    #[test]
    fn reports_points_outside_the_window() {
        let (k, s) = (unit_camera(), shutter(10.0, 0.0));
        let m = motion([0.0, 0.5, 0.0], [0.0; 3]);
        // row ≈ 2 is never read out of a one-row frame
        let x = WorldPoint::new(0.0, 2.0, 1.0);
        for case in [ScanTimeCase::FrontoParallelLinear, ScanTimeCase::ExactNonlinear] {
            assert!(matches!(solve_scan_time(&x, &m, &k, &s, case), Err(Error::NoScanTime { .. })));
        }
        assert!(matches!(
            project_rolling_shutter(&x, &m, &k, &s, false),
            Err(Error::NoScanTime { .. })
        ));
        let behind = WorldPoint::new(0.0, 0.1, -1.0);
        assert!(matches!(
            solve_scan_time(&behind, &m, &k, &s, ScanTimeCase::FrontoParallelLinear),
            Err(Error::NegativeDepth { .. })
        ));
    }

    #[test]
    fn singular_denominator() {
        let (k, s) = (unit_camera(), shutter(10.0, 0.0));
        // point moving with the scanline: r·z = v_y
        let m = motion([0.0, 10.0, 0.0], [0.0; 3]);
        let x = WorldPoint::new(0.0, 0.1, 1.0);
        assert!(matches!(project_rolling_shutter(&x, &m, &k, &s, false), Err(Error::Singularity { .. })));
    }

    #[test]
    fn second_crossing_is_flagged() {
        // a point racing up the image while the scanline moves down meets it twice
        let k = CameraIntrinsics::identity(1, 4).unwrap();
        let s = shutter(10.0, 0.0);
        let m = motion([0.0, 0.0, -4.0], [0.0; 3]);
        let x = WorldPoint::new(0.0, 0.5, 1.0);
        let st = solve_scan_time(&x, &m, &k, &s, ScanTimeCase::AxialQuadratic).unwrap();
        let t2 = st.second_root.expect("second root");
        assert!(st.t < t2);
        for t in [st.t, t2] {
            assert!(constraint_residual(&x, &m, &k, &s, t, true).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_projection_is_perspective() {
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        let s = ShutterParams::continuous(15.0, 480).unwrap();
        let pose = Pose::new(Rotation::exp(&Vector3::new(0.1, 0.2, -0.3), 1.0), Vector3::new(0.2, -0.1, 8.0));
        let m = MotionState::stationary(pose);
        let x = WorldPoint::new(0.5, -0.3, 1.0);
        let p0 = project_perspective(&x, &camera_matrix_at(&m, &k, 0.0, false)).unwrap();
        for exact in [false, true] {
            let p = project_rolling_shutter(&x, &m, &k, &s, exact).unwrap();
            assert_eq!(p.pixel, p0);
            assert_eq!(p.correction, Vector2::zeros());
        }
        assert_eq!(correction_magnitude(&x, &m, &k, &s).unwrap(), 0.0);
    }

    #[test]
    fn correction_vanishes_as_rate_grows() {
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        let m = motion([0.4, 1.5, 0.0], [0.0, 0.0, 0.8]);
        let x = WorldPoint::new(0.3, 0.8, 5.0);
        let mut prev = f64::INFINITY;
        let mut rate = 7200.0;
        for _ in 0..8 {
            let s = ShutterParams::new(rate, 0.0, 0.0, 15.0, 0.0).unwrap();
            let c = correction_magnitude(&x, &m, &k, &s).unwrap();
            assert!(c < prev);
            if prev.is_finite() {
                let ratio = prev / c;
                assert!((1.9..2.1).contains(&ratio), "ratio {ratio}");
            }
            prev = c;
            rate *= 2.0;
        }
    }

    #[test]
    fn closed_form_splits_into_perspective_and_correction() {
        let k = CameraIntrinsics::from_fov(60.0, 640, 480).unwrap();
        let s = ShutterParams::continuous(30.0, 480).unwrap();
        let m = motion([0.8, -0.5, 0.0], [0.0, 0.0, 0.6]);
        let x = WorldPoint::new(-0.4, 0.2, 2.0);
        let p = project_rolling_shutter(&x, &m, &k, &s, false).unwrap();
        assert!((p.perspective_part + p.correction - p.pixel).norm() < 1e-9);
        assert!(p.scan_time >= 0.0 && p.scan_time <= s.frame_window(&k));
        // the quadratic route through the linearised camera agrees with the closed form
        let st = solve_scan_time(&x, &m, &k, &s, ScanTimeCase::GeneralQuadratic).unwrap();
        assert_relative_eq!(st.t, p.scan_time, epsilon = 1e-14);
        let q = project_perspective(&x, &camera_matrix_at(&m, &k, st.t, true)).unwrap();
        assert!((q - p.pixel).norm() < 1e-9);
    }

    #[test]
    fn bottom_to_top_readout() {
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        // row(t) = −7200·t + 480
        let s = ShutterParams::new(-7200.0, -480.0, 0.0, 15.0, 0.0).unwrap();
        let m = motion([0.0, 1.0, 0.0], [0.0; 3]);
        let x = WorldPoint::new(0.0, -0.5, 4.0);
        let p = project_rolling_shutter(&x, &m, &k, &s, false).unwrap();
        let exact = project_rolling_shutter(&x, &m, &k, &s, true).unwrap();
        assert_relative_eq!(p.scan_time, exact.scan_time, epsilon = 1e-12);
        assert!((p.pixel - exact.pixel).norm() < 1e-9);
        assert_relative_eq!(s.row_at(p.scan_time), p.pixel.y, epsilon = 1e-9);
    }

    #[test]
    fn later_frames_use_their_own_origin() {
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        let s = ShutterParams::new(7200.0, 0.0, 0.01, 15.0, 0.0).unwrap();
        let m = motion([0.3, 0.2, 0.0], [0.0; 3]);
        let x = WorldPoint::new(0.2, 0.1, 5.0);
        let p = project_in_frame(&x, &m, &k, &s, 3, false).unwrap();
        let t0 = 3.0 * (1.0 / 15.0 + 0.01);
        assert!(p.scan_time >= t0);
        let res = constraint_residual(&x, &m.advanced(t0), &k, &s, p.scan_time - t0, false).unwrap();
        assert!(res.abs() < 1e-9);
    }

    #[test]
    fn limit_line_scaling() {
        let k = CameraIntrinsics::from_fov(40.0, 640, 480).unwrap();
        let s = ShutterParams::continuous(15.0, 480).unwrap();
        assert_eq!(limit_line(&s, &k, 0.0), 0.0);
        let z1 = limit_line(&s, &k, 1.0);
        assert_relative_eq!(limit_line(&s, &k, 2.0), 2.0 * z1, epsilon = 1e-12);
        let fast = ShutterParams::continuous(30.0, 480).unwrap();
        assert_relative_eq!(limit_line(&fast, &k, 1.0), 0.5 * z1, epsilon = 1e-12);
        // z_min = v_y·f_pixels/f for a continuous readout
        assert_relative_eq!(z1, k.fy() / 15.0, epsilon = 1e-12);
        assert!(is_safe(&s, &k, 1.0, 1.01 * z1) && !is_safe(&s, &k, 1.0, 0.99 * z1));
    }
}
