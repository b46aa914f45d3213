//! Two-view structure-from-motion benchmark.
//!
//! Synthetic scenes are imaged by translating rolling-shutter cameras, perturbed with pixel
//! noise, and refined by bundle adjustment under either the rolling-shutter or the pin-hole
//! projection model. [`run_experiment_grid`] sweeps velocity and noise level and reports mean
//! pose errors for both models.

mod bundle;
mod grid;

pub use bundle::{bundle_adjust, bundle_adjust_from, initial_guess, BundleOptions, InitialGuess, Termination};
pub use grid::{mix_seed, run_experiment_grid, trial_problem, write_grid_csv, GridConfig, GridRow};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kmh_to_mps, CameraIntrinsics, MotionState, PixelPoint, Pose, Rotation, WorldPoint};
use crate::shutter::{project_rolling_shutter, ShutterParams};

/// Scene and camera generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_points: usize,
    /// Edge length of the cube, centred on the origin, that points are drawn from (m).
    pub cube_size: f64,
    /// Camera distance from the cloud centre is uniform in this range (m).
    pub distance_min: f64,
    pub distance_max: f64,
    /// Angle between the two viewing directions is uniform in this range (degrees).
    pub separation_min_deg: f64,
    pub separation_max_deg: f64,
    pub hfov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub framerate: f64,
    pub min_visible: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_points: 100,
            cube_size: 4.0,
            distance_min: 9.0,
            distance_max: 11.0,
            separation_min_deg: 10.0,
            separation_max_deg: 30.0,
            hfov_deg: 40.0,
            width: 640,
            height: 480,
            framerate: 15.0,
            min_visible: 8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_points >= self.min_visible
            && self.min_visible >= 8
            && self.cube_size > 0.0
            && self.distance_min > 0.0
            && self.distance_max >= self.distance_min
            && self.separation_min_deg > 0.0
            && self.separation_max_deg >= self.separation_min_deg
            && self.separation_max_deg < 180.0
            && self.framerate > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid scene configuration {self:?}")));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.hfov_deg, self.width, self.height)
    }

    /// Continuous readout over the frame period.
    pub fn shutter(&self) -> Result<ShutterParams> {
        ShutterParams::continuous(self.framerate, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSetup {
    pub motion: MotionState,
    pub intrinsics: CameraIntrinsics,
    pub shutter: ShutterParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: usize,
    pub pixel: PixelPoint,
}

/// A generated two-view problem with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmProblem {
    pub points: Vec<WorldPoint>,
    pub cameras: Vec<CameraSetup>,
    /// Per camera.
    pub observations: Vec<Vec<Observation>>,
    pub noise_sigma: f64,
    pub rng_seed: u64,
    pub velocity_kmh: f64,
}

impl SfmProblem {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn observation_count(&self) -> usize {
        self.observations.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionModel {
    RollingShutter,
    Perspective,
}

impl ProjectionModel {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionModel::RollingShutter => "rolling_shutter",
            ProjectionModel::Perspective => "perspective",
        }
    }
}

/// Bundle adjustment result. Errors are relative to the generating problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmSolution {
    pub cameras: Vec<MotionState>,
    pub points: Vec<WorldPoint>,
    pub reprojection_rms: f64,
    pub rotation_error: f64,
    pub translation_direction_error: Option<f64>,
    pub model_used: ProjectionModel,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Cost `½‖r‖²` after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rotation_deg: f64,
    pub translation_deg: Option<f64>,
    pub reprojection_rms: f64,
}

fn unit_gaussian(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng))
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = unit_gaussian(rng);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn look_at_origin(center: &Vector3<f64>) -> Result<Rotation> {
    let dir = center.normalize();
    let up = if dir.z.abs() < 0.9 { Vector3::z() } else { Vector3::y() };
    Rotation::look_at(center, &Vector3::zeros(), &up)
}

/// Pixel of `x` in `cam` if it is imaged inside the frame.
fn visible(x: &WorldPoint, cam: &CameraSetup) -> Option<PixelPoint> {
    let proj = project_rolling_shutter(x, &cam.motion, &cam.intrinsics, &cam.shutter, false).ok()?;
    cam.intrinsics.contains(&proj.pixel).then_some(proj.pixel)
}

/// Random two-view scene seen by cameras translating along their image `y` axis at
/// `velocity_kmh`, with Gaussian pixel noise of standard deviation `sigma`.
///
/// Points are drawn until `n_points` are imaged in both views (at most `20·n_points` draws).
pub fn generate_problem(cfg: &SceneConfig, velocity_kmh: f64, sigma: f64, seed: u64) -> Result<SfmProblem> {
    cfg.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) || !velocity_kmh.is_finite() {
        return Err(Error::Config("noise and velocity must be finite, noise nonnegative".into()));
    }
    let k = cfg.intrinsics()?;
    let shutter = cfg.shutter()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let d1 = random_unit(&mut rng);
    let axis = d1.cross(&random_unit(&mut rng)).normalize();
    let sep = rng.random_range(cfg.separation_min_deg..=cfg.separation_max_deg).to_radians();
    let d2 = &Rotation::exp(&axis, sep) * d1;
    let velocity = Vector3::new(0.0, kmh_to_mps(velocity_kmh), 0.0);
    let mut cameras = Vec::with_capacity(2);
    for d in [d1, d2] {
        let dist = rng.random_range(cfg.distance_min..=cfg.distance_max);
        let center = d * dist;
        let pose = Pose::from_center(look_at_origin(&center)?, &center);
        cameras.push(CameraSetup {
            motion: MotionState::new(pose, velocity, Vector3::zeros()),
            intrinsics: k,
            shutter,
        });
    }

    let half = 0.5 * cfg.cube_size;
    let mut points = Vec::with_capacity(cfg.n_points);
    let mut clean: Vec<Vec<PixelPoint>> = vec![Vec::new(), Vec::new()];
    for _ in 0..20 * cfg.n_points {
        if points.len() == cfg.n_points {
            break;
        }
        let x = WorldPoint::new(
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
            rng.random_range(-half..=half),
        );
        let pixels: Option<Vec<PixelPoint>> = cameras.iter().map(|c| visible(&x, c)).collect();
        if let Some(pixels) = pixels {
            for (i, p) in pixels.into_iter().enumerate() {
                clean[i].push(p);
            }
            points.push(x);
        }
    }
    if points.len() < cfg.min_visible {
        return Err(Error::Config(format!(
            "only {} points visible in both views, need at least {}",
            points.len(),
            cfg.min_visible
        )));
    }

    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let observations = clean
        .into_iter()
        .map(|pixels| {
            pixels
                .into_iter()
                .enumerate()
                .map(|(point, p)| {
                    let pixel = if sigma > 0.0 {
                        PixelPoint::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                    } else {
                        p
                    };
                    Observation { point, pixel }
                })
                .collect()
        })
        .collect();
    Ok(SfmProblem { points, cameras, observations, noise_sigma: sigma, rng_seed: seed, velocity_kmh })
}

/// `(R₂·R₁ᵀ, T₂ − R₂·R₁ᵀ·T₁)`: maps camera-1 coordinates to camera-2 coordinates.
pub fn relative_pose(a: &Pose, b: &Pose) -> (Rotation, Vector3<f64>) {
    let rel = b.rotation * a.rotation.inverse();
    let t = b.translation - &rel * a.translation;
    (rel, t)
}

/// Rotation error `‖log(R₀⁻¹·R̂)‖` and translation direction error, in degrees, of the
/// relative pose of the first two cameras. The translation error is `None` when `t̂ ≈ 0`.
pub fn pose_errors(truth: &[MotionState], est: &[MotionState]) -> (f64, Option<f64>) {
    let (r0, t0) = relative_pose(&truth[0].pose0, &truth[1].pose0);
    let (r1, t1) = relative_pose(&est[0].pose0, &est[1].pose0);
    let rot = (r0.inverse() * r1).angle().to_degrees();
    let trans = (t1.norm() > 1e-12 && t0.norm() > 1e-12).then(|| {
        let c = (t1.dot(&t0) / (t1.norm() * t0.norm())).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    });
    (rot, trans)
}

pub fn error_metrics(truth: &SfmProblem, est: &SfmSolution) -> ErrorMetrics {
    let truth_cams: Vec<MotionState> = truth.cameras.iter().map(|c| c.motion).collect();
    let (rotation_deg, translation_deg) = pose_errors(&truth_cams, &est.cameras);
    ErrorMetrics { rotation_deg, translation_deg, reprojection_rms: est.reprojection_rms }
}
