//! Rolling-shutter images of a planar checkerboard.
//!
//! Each pixel row is read at a known instant, so the image is rendered by casting every
//! pixel's ray from the camera pose at its row time and intersecting the board. The lattice
//! lines are projected separately with the exact scan-time solver to measure how far they bend.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rev_per_sec_to_rad, CameraIntrinsics, MotionState, PixelPoint, Pose, WorldPoint};
use crate::shutter::{project_rolling_shutter, ShutterParams};

/// Board in the plane `z = depth` of the world frame, squares of side `square` (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkerboard {
    pub depth: f64,
    pub square: f64,
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, fill: u8) -> Self {
        GrayImage { width, height, data: vec![fill; (width * height) as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)?;
        Ok(())
    }
}

/// Ray through `p` from the pose `(rot, trans)`, intersected with the board.
fn board_point(board: &Checkerboard, k: &CameraIntrinsics, (rot, trans): (Matrix3<f64>, Vector3<f64>), p: &PixelPoint) -> Option<Vector3<f64>> {
    let n = k.to_normalized(p);
    let rt = rot.transpose();
    let dir = rt * Vector3::new(n.x, n.y, 1.0);
    let origin = -(rt * trans);
    if dir.z.abs() < 1e-12 {
        return None;
    }
    let s = (board.depth - origin.z) / dir.z;
    (s > 0.0).then(|| origin + dir * s)
}

fn square_parity(board: &Checkerboard, x: &Vector3<f64>) -> bool {
    let i = (x.x / board.square).floor() as i64;
    let j = (x.y / board.square).floor() as i64;
    (i + j).rem_euclid(2) == 0
}

/// Rolling-shutter image of the board: row `v` is taken from the pose at `(v + v₀)/r`.
pub fn render_board(board: &Checkerboard, k: &CameraIntrinsics, s: &ShutterParams, m: &MotionState) -> GrayImage {
    let mut img = GrayImage::new(k.width, k.height, 0);
    for y in 0..k.height {
        let pose = m.extrinsics_at((y as f64 + 0.5 + s.first_row) / s.scan_rate, false);
        for x in 0..k.width {
            let p = PixelPoint::new(x as f64 + 0.5, y as f64 + 0.5);
            let value = match board_point(board, k, pose, &p) {
                Some(w) if square_parity(board, &w) => 230,
                Some(_) => 25,
                None => 0,
            };
            img.set(x, y, value);
        }
    }
    img
}

/// Board lines `x = i·square` and `y = j·square` inside the part of the board seen at `t = 0`,
/// each projected at `samples` points with the exact scan-time solver. Points without a scan
/// time in the frame are skipped.
pub fn lattice_lines(
    board: &Checkerboard,
    k: &CameraIntrinsics,
    s: &ShutterParams,
    m: &MotionState,
    samples: usize,
) -> Vec<Vec<PixelPoint>> {
    let corners = [(0.0, 0.0), (k.width as f64, 0.0), (0.0, k.height as f64), (k.width as f64, k.height as f64)];
    let seen: Vec<Vector3<f64>> = corners
        .iter()
        .filter_map(|&(u, v)| board_point(board, k, m.extrinsics_at(0.0, false), &PixelPoint::new(u, v)))
        .collect();
    if seen.is_empty() {
        return Vec::new();
    }
    let lo = seen.iter().fold(Vector3::repeat(f64::INFINITY), |a, b| a.inf(b));
    let hi = seen.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, b| a.sup(b));
    let samples = samples.max(2);
    let project = |x: f64, y: f64| {
        let w = WorldPoint::new(x, y, board.depth);
        project_rolling_shutter(&w, m, k, s, true).ok().map(|p| p.pixel).filter(|p| k.contains(p))
    };
    let along = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (samples - 1) as f64;
    let mut lines = Vec::new();
    let first = |a: f64| (a / board.square).ceil() as i64;
    let last = |b: f64| (b / board.square).floor() as i64;
    for i in first(lo.x)..=last(hi.x) {
        let x = i as f64 * board.square;
        lines.push((0..samples).filter_map(|n| project(x, along(lo.y, hi.y, n))).collect::<Vec<_>>());
    }
    for j in first(lo.y)..=last(hi.y) {
        let y = j as f64 * board.square;
        lines.push((0..samples).filter_map(|n| project(along(lo.x, hi.x, n), y)).collect::<Vec<_>>());
    }
    lines.retain(|l| l.len() >= 3);
    lines
}

/// Largest distance of a polyline vertex from the chord joining its end points.
pub fn deflection(line: &[PixelPoint]) -> f64 {
    let (Some(a), Some(b)) = (line.first(), line.last()) else {
        return 0.0;
    };
    let chord = b - a;
    let len = chord.norm();
    if len == 0.0 {
        return 0.0;
    }
    line.iter()
        .map(|p| {
            let d = p - a;
            (d.x * chord.y - d.y * chord.x).abs() / len
        })
        .fold(0.0, f64::max)
}

pub fn max_deflection(lines: &[Vec<PixelPoint>]) -> f64 {
    lines.iter().map(|l| deflection(l)).fold(0.0, f64::max)
}

/// Settings for a board facing a camera that spins about its optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckerConfig {
    pub depth: f64,
    pub square: f64,
    pub hfov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub framerate: f64,
    /// Rows per second; defaults to `height·framerate`.
    pub scan_rate: Option<f64>,
    pub omega_rps: Vec<f64>,
    pub lattice_samples: usize,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            depth: 0.5,
            square: 0.04,
            hfov_deg: 40.0,
            width: 640,
            height: 480,
            framerate: 30.0,
            scan_rate: None,
            omega_rps: vec![0.25, 0.5, 0.75, 1.0],
            lattice_samples: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckerRender {
    pub omega_rps: f64,
    pub image: GrayImage,
    pub lattice: Vec<Vec<PixelPoint>>,
    pub max_deflection_px: f64,
}

impl CheckerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0 && self.square > 0.0) || self.omega_rps.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("board depth and square size must be positive".into()));
        }
        Ok(())
    }

    pub fn shutter(&self) -> Result<ShutterParams> {
        let r = self.scan_rate.unwrap_or(self.height as f64 * self.framerate);
        ShutterParams::new(r, 0.0, 0.0, self.framerate, 0.0)
    }

    /// One render per angular velocity, lattice lines drawn in mid gray.
    pub fn render(&self) -> Result<Vec<CheckerRender>> {
        self.validate()?;
        let k = CameraIntrinsics::from_fov(self.hfov_deg, self.width, self.height)?;
        let s = self.shutter()?;
        let board = Checkerboard { depth: self.depth, square: self.square };
        self.omega_rps
            .iter()
            .map(|&rps| {
                let m = MotionState::new(
                    Pose::identity(),
                    Vector3::zeros(),
                    Vector3::new(0.0, 0.0, rev_per_sec_to_rad(rps)),
                );
                let mut image = render_board(&board, &k, &s, &m);
                let lattice = lattice_lines(&board, &k, &s, &m, self.lattice_samples);
                for p in lattice.iter().flatten() {
                    let (x, y) = (p.x.floor(), p.y.floor());
                    if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
                        image.set(x as u32, y as u32, 128);
                    }
                }
                Ok(CheckerRender { omega_rps: rps, max_deflection_px: max_deflection(&lattice), image, lattice })
            })
            .collect()
    }
}
