//! Run configuration: built-in defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rscam::geometry::{kmh_to_mps, rev_per_sec_to_rad};
use rscam::render::CheckerConfig;
use rscam::sfm::GridConfig;
use rscam::{CameraIntrinsics, MotionState, Pose, Rotation, ShutterParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraConfig,
    pub shutter: ShutterConfig,
    pub motion: MotionConfig,
    pub project: ProjectConfig,
    pub render: CheckerConfig,
    pub calibration: CalibrationConfig,
    /// Its `seed` is replaced by the top-level seed.
    pub sfm: GridConfig,
    pub flow: FlowConfig,
    pub slits: SlitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            camera: CameraConfig::default(),
            shutter: ShutterConfig::default(),
            motion: MotionConfig::default(),
            project: ProjectConfig::default(),
            render: CheckerConfig::default(),
            calibration: CalibrationConfig::default(),
            sfm: GridConfig::default(),
            flow: FlowConfig::default(),
            slits: SlitConfig::default(),
        }
    }
}

/// Either a horizontal field of view or explicit focal lengths (pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub hfov_deg: f64,
    pub fx: Option<f64>,
    pub fy: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { hfov_deg: 40.0, fx: None, fy: None, cx: None, cy: None, width: 640, height: 480 }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, CliError> {
        let k = match self.fx {
            Some(fx) => CameraIntrinsics::from_focal(
                fx,
                self.fy.unwrap_or(fx),
                self.cx.unwrap_or(0.5 * self.width as f64),
                self.cy.unwrap_or(0.5 * self.height as f64),
                self.width,
                self.height,
            ),
            None => CameraIntrinsics::from_fov(self.hfov_deg, self.width, self.height),
        };
        k.map_err(|e| CliError::Config(format!("[camera]: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShutterConfig {
    pub framerate: f64,
    /// Rows per second; defaults to `height·framerate`.
    pub scan_rate: Option<f64>,
    pub first_row: f64,
    pub frame_delay: f64,
    pub row_exposure: f64,
}

impl Default for ShutterConfig {
    fn default() -> Self {
        ShutterConfig { framerate: 30.0, scan_rate: None, first_row: 0.0, frame_delay: 0.0, row_exposure: 0.0 }
    }
}

impl ShutterConfig {
    pub fn params(&self, camera: &CameraConfig) -> Result<ShutterParams, CliError> {
        let r = self.scan_rate.unwrap_or(camera.height as f64 * self.framerate);
        ShutterParams::new(r, self.first_row, self.frame_delay, self.framerate, self.row_exposure)
            .map_err(|e| CliError::Config(format!("[shutter]: {e}")))
    }
}

/// Pose at `t = 0` (axis-angle rotation in degrees, translation in meters) and camera-frame
/// velocities in km/h and rev/s.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub rotation_deg: [f64; 3],
    pub translation: [f64; 3],
    pub velocity_kmh: [f64; 3],
    pub angular_rps: [f64; 3],
}

impl MotionConfig {
    pub fn state(&self) -> MotionState {
        let axis_angle = Vector3::from(self.rotation_deg).map(f64::to_radians);
        let pose = Pose::new(Rotation::exp(&axis_angle, 1.0), Vector3::from(self.translation));
        MotionState::new(
            pose,
            Vector3::from(self.velocity_kmh).map(kmh_to_mps),
            Vector3::from(self.angular_rps).map(rev_per_sec_to_rad),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub points: Vec<[f64; 3]>,
    /// CSV with `x,y,z` columns.
    pub points_file: Option<PathBuf>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub framerates: Vec<f64>,
    pub led_hz: Vec<f64>,
    pub n_rows: usize,
    pub n_frames: usize,
    pub duty: f64,
    pub exposure_gradient: bool,
    pub noise_amplitude: f64,
    /// Cells with fewer stripe periods per frame are left out of the summary table.
    pub min_periods: f64,
    /// Cell whose image and spectrum are written; defaults to the first of each list.
    pub spectrum_framerate: Option<f64>,
    pub spectrum_led_hz: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            framerates: vec![3.75, 7.5, 15.0],
            led_hz: vec![20.0, 40.0, 60.0],
            n_rows: 240,
            n_frames: 32,
            duty: 0.5,
            exposure_gradient: false,
            noise_amplitude: 0.0,
            min_periods: 2.0,
            spectrum_framerate: None,
            spectrum_led_hz: None,
        }
    }
}

/// Flow sampled on a pixel grid of a fronto-parallel plane at `depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub depth: f64,
    pub grid: [usize; 2],
    /// Finite-difference step (seconds).
    pub step: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { depth: 5.0, grid: [8, 6], step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlitConfig {
    pub grid: [usize; 2],
}

impl Default for SlitConfig {
    fn default() -> Self {
        SlitConfig { grid: [10, 10] }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative point files are taken from the config's directory
        if let (Some(file), Some(dir)) = (cfg.project.points_file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}
