//! Scan-rate calibration from a flashing LED.
//!
//! A light blinking at a known frequency in front of a rolling-shutter sensor paints
//! horizontal stripes whose period in rows is `r / f_led`. Stacking one column-sum per frame
//! gives a spatio-temporal image `I(y, t)`; the stripe frequency `ν` (cycles per row) is read
//! off its 2-D Fourier transform marginalised over temporal frequency, and `r = f_led / ν`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shutter::ShutterParams;

/// Column-summed intensities, `rows × frames`, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalImage {
    values: Vec<f64>,
    rows: usize,
    frames: usize,
    pub framerate: f64,
}

impl SpatioTemporalImage {
    pub fn new(values: Vec<f64>, rows: usize, frames: usize, framerate: f64) -> Result<Self> {
        if rows == 0 || frames == 0 || values.len() != rows * frames {
            return Err(Error::InvalidParameter(format!(
                "expected {rows}×{frames} intensities, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("intensities must lie in [0, 1]".into()));
        }
        Ok(SpatioTemporalImage { values, rows, frames, framerate })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, row: usize, frame: usize) -> f64 {
        self.values[row * self.frames + frame]
    }

    pub fn column(&self, frame: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |y| self.get(y, frame))
    }

    /// Rows as CSV lines (one line per row, one field per frame).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for y in 0..self.rows {
            let line: Vec<String> = (0..self.frames).map(|k| format!("{}", self.get(y, k))).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, framerate: f64) -> Result<Self> {
        let mut values = Vec::new();
        let mut rows = 0;
        let mut frames = None;
        for line in BufReader::new(input).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Io(format!("bad intensity {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            match frames {
                None => frames = Some(row.len()),
                Some(n) if n != row.len() => {
                    return Err(Error::Io(format!("row {rows} has {} fields, expected {n}", row.len())))
                }
                _ => {}
            }
            values.extend(row);
            rows += 1;
        }
        Self::new(values, rows, frames.unwrap_or(0), framerate)
    }

    /// Binary 8-bit PGM (`P5`), rows down and frames across.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.frames, self.rows)?;
        let bytes: Vec<u8> = (0..self.rows)
            .flat_map(|y| (0..self.frames).map(move |k| (y, k)))
            .map(|(y, k)| (self.get(y, k) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    /// Reads 8- or 16-bit `P5` or ASCII `P2` PGM.
    pub fn read_pgm<R: Read>(mut input: R, framerate: f64) -> Result<Self> {
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < data.len() && data[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < data.len() && data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Io("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
        };
        let magic = token()?;
        let parse = |s: String| s.parse::<usize>().map_err(|e| Error::Io(format!("bad PGM header: {e}")));
        let width = parse(token()?)?;
        let height = parse(token()?)?;
        let maxval = parse(token()?)?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Io(format!("bad PGM maxval {maxval}")));
        }
        let n = width * height;
        let scale = 1.0 / maxval as f64;
        let values: Vec<f64> = match magic.as_str() {
            "P2" => (0..n)
                .map(|_| token().and_then(&parse).map(|v| v as f64 * scale))
                .collect::<Result<_>>()?,
            "P5" => {
                let body = &data[pos + 1..];
                let bytes_per = if maxval < 256 { 1 } else { 2 };
                if body.len() < n * bytes_per {
                    return Err(Error::Io("truncated PGM raster".into()));
                }
                (0..n)
                    .map(|i| {
                        let v = if bytes_per == 1 {
                            body[i] as f64
                        } else {
                            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f64
                        };
                        v * scale
                    })
                    .collect()
            }
            other => return Err(Error::Io(format!("unsupported PGM magic {other:?}"))),
        };
        Self::new(values, height, width, framerate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => self.write_pgm(file),
            _ => self.write_csv(file),
        }
    }

    pub fn load(path: &Path, framerate: f64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Self::read_pgm(file, framerate),
            _ => Self::read_csv(file, framerate),
        }
    }
}

/// Square-wave LED and capture settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedConfig {
    pub led_hz: f64,
    /// Fraction of each period the LED is lit.
    pub duty: f64,
    /// Initial phase as a fraction of a period.
    pub phase: f64,
    /// Intensity falls linearly from 1 at the first row to 0.5 at the last.
    pub exposure_gradient: bool,
    /// Half-width of uniform additive noise (clamped to `[0, 1]` afterwards).
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl LedConfig {
    pub fn new(led_hz: f64, duty: f64) -> Self {
        LedConfig { led_hz, duty, phase: 0.0, exposure_gradient: false, noise_amplitude: 0.0, seed: 0 }
    }

    fn is_on(&self, t: f64) -> bool {
        (t * self.led_hz + self.phase).rem_euclid(1.0) < self.duty
    }
}

/// Absolute exposure time of `row` in frame `frame`.
pub fn row_time(s: &ShutterParams, frame: usize, row: usize) -> f64 {
    s.frame_start(frame as i64) + (row as f64 + s.first_row) / s.scan_rate
}

/// Simulated `I(y, t)` for a rolling-shutter sensor watching the LED.
pub fn synthesize_led_image(
    s: &ShutterParams,
    n_rows: usize,
    n_frames: usize,
    led: &LedConfig,
) -> Result<SpatioTemporalImage> {
    s.validate()?;
    if !(led.led_hz > 0.0) {
        return Err(Error::InvalidParameter("LED frequency must be positive".into()));
    }
    if !(led.duty > 0.0 && led.duty < 1.0) {
        return Err(Error::InvalidParameter("duty cycle must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(led.seed);
    let mut values = Vec::with_capacity(n_rows * n_frames);
    for y in 0..n_rows {
        let gain = if led.exposure_gradient { 1.0 - 0.5 * y as f64 / n_rows.max(1) as f64 } else { 1.0 };
        for k in 0..n_frames {
            let lit = if led.is_on(row_time(s, k, y)) { gain } else { 0.0 };
            let noise = if led.noise_amplitude > 0.0 {
                rng.random_range(-led.noise_amplitude..=led.noise_amplitude)
            } else {
                0.0
            };
            values.push((lit + noise).clamp(0.0, 1.0));
        }
    }
    SpatioTemporalImage::new(values, n_rows, n_frames, s.framerate)
}

/// Estimated readout speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEstimate {
    pub scan_seconds_per_row: f64,
    /// Half a frequency bin (`1/n_rows` cycles/row) in seconds per row.
    pub uncertainty: f64,
    pub led_frequency: f64,
    /// Stripe frequency in cycles per row.
    pub stripe_frequency: f64,
}

impl CalibrationEstimate {
    pub fn scan_rate(&self) -> f64 {
        1.0 / self.scan_seconds_per_row
    }

    /// Width of one natural frequency bin in seconds per row.
    pub fn bin_width(&self) -> f64 {
        2.0 * self.uncertainty
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Zero-padding factor along the row axis.
    pub padding: usize,
    /// Peaks must exceed this multiple of the median magnitude.
    pub median_factor: f64,
    /// Lowest-frequency peak at or above this fraction of the strongest is taken as fundamental.
    pub fundamental_fraction: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { padding: 8, median_factor: 3.0, fundamental_fraction: 0.25 }
    }
}

/// `Ĩ(ν)`: magnitude of the 2-D transform summed over temporal frequency, positive `ν` only.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSpectrum {
    /// Cycles per row for each bin.
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl MarginalSpectrum {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::from("nu_cycles_per_row,magnitude\n");
        for (f, m) in self.frequencies.iter().zip(&self.magnitudes) {
            writeln!(s, "{f},{m}").expect("write to string");
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Remove the least-squares line, then apply a Hann window.
fn detrend_and_window(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    if n < 2 {
        return column.to_vec();
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = column.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in column.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    column
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (nf - 1.0)).cos();
            (y - mean_y - slope * (i as f64 - mean_x)) * w
        })
        .collect()
}

pub fn marginal_spectrum(img: &SpatioTemporalImage, padding: usize) -> MarginalSpectrum {
    let rows = img.rows();
    let frames = img.frames();
    let m = (rows * padding.max(1)).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft_rows = planner.plan_fft_forward(m);
    let fft_time = planner.plan_fft_forward(frames);

    // spatial transform of each frame's column, stored [frame][nu]
    let mut spatial: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|k| {
            let col: Vec<f64> = img.column(k).collect();
            let mut buf: Vec<Complex<f64>> =
                detrend_and_window(&col).into_iter().map(|v| Complex::new(v, 0.0)).collect();
            buf.resize(m, Complex::new(0.0, 0.0));
            buf
        })
        .collect();
    for col in spatial.iter_mut() {
        fft_rows.process(col);
    }

    let half = m / 2;
    let mut magnitudes = vec![0.0; half + 1];
    let mut line = vec![Complex::new(0.0, 0.0); frames];
    for (j, mag) in magnitudes.iter_mut().enumerate() {
        for (k, slot) in line.iter_mut().enumerate() {
            *slot = spatial[k][j];
        }
        fft_time.process(&mut line);
        *mag = line.iter().map(|c| c.norm()).sum();
    }
    magnitudes[0] = 0.0;
    let frequencies = (0..=half).map(|j| j as f64 / m as f64).collect();
    MarginalSpectrum { frequencies, magnitudes }
}

/// Scan rate from the fundamental stripe frequency of `img`.
pub fn estimate_scan_rate(img: &SpatioTemporalImage, led_hz: f64) -> Result<CalibrationEstimate> {
    estimate_scan_rate_with(img, led_hz, &EstimatorOptions::default())
}

pub fn estimate_scan_rate_with(
    img: &SpatioTemporalImage,
    led_hz: f64,
    opts: &EstimatorOptions,
) -> Result<CalibrationEstimate> {
    if !(led_hz > 0.0) {
        return Err(Error::InvalidParameter("LED frequency must be positive".into()));
    }
    let spectrum = marginal_spectrum(img, opts.padding);
    let nu = fundamental_frequency(&spectrum, opts)?;
    let bin = 1.0 / img.rows() as f64;
    Ok(CalibrationEstimate {
        scan_seconds_per_row: nu / led_hz,
        uncertainty: 0.5 * bin / led_hz,
        led_frequency: led_hz,
        stripe_frequency: nu,
    })
}

fn fundamental_frequency(spectrum: &MarginalSpectrum, opts: &EstimatorOptions) -> Result<f64> {
    let mags = &spectrum.magnitudes;
    let n = mags.len();
    if n < 3 {
        return Err(Error::NoPeak);
    }
    let mut sorted: Vec<f64> = mags[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let floor = opts.median_factor * median;

    let peaks: Vec<usize> = (1..n - 1)
        .filter(|&j| mags[j] > floor && mags[j] >= mags[j - 1] && mags[j] > mags[j + 1])
        .collect();
    let strongest = peaks.iter().map(|&j| mags[j]).fold(0.0, f64::max);
    let Some(&j) = peaks.iter().find(|&&j| mags[j] >= opts.fundamental_fraction * strongest) else {
        return Err(Error::NoPeak);
    };
    // parabolic refinement
    let (a, b, c) = (mags[j - 1], mags[j], mags[j + 1]);
    let curvature = a - 2.0 * b + c;
    let offset = if curvature < 0.0 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
    let step = spectrum.frequencies[1];
    Ok((j as f64 + offset) * step)
}

/// Per-row readout time of a sensor reading `n_rows` rows continuously at framerate `f`.
pub fn ideal_seconds_per_row(framerate: f64, n_rows: usize) -> f64 {
    1.0 / (framerate * n_rows as f64)
}

/// One `(framerate, LED frequency)` cell of a calibration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub framerate: f64,
    pub led_hz: f64,
    /// Stripe periods per frame, `n_rows·f_led/|r|`.
    pub periods_per_frame: f64,
    pub estimate: Option<CalibrationEstimate>,
    pub ideal_seconds_per_row: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSweep {
    pub n_rows: usize,
    pub n_frames: usize,
    pub duty: f64,
    pub exposure_gradient: bool,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl CalibrationSweep {
    /// Synthesise and estimate every cell of `framerates × leds`, with `r = n_rows·f`.
    pub fn run(&self, framerates: &[f64], leds: &[f64]) -> Result<Vec<CalibrationCell>> {
        if framerates.is_empty() || leds.is_empty() {
            return Err(Error::Config("calibration grid is empty".into()));
        }
        let cells: Vec<(usize, f64, f64)> = framerates
            .iter()
            .flat_map(|&f| leds.iter().map(move |&l| (f, l)))
            .enumerate()
            .map(|(i, (f, l))| (i, f, l))
            .collect();
        cells
            .par_iter()
            .map(|&(i, f, led_hz)| {
                let shutter = ShutterParams::continuous(f, self.n_rows as u32)?;
                let led = LedConfig {
                    led_hz,
                    duty: self.duty,
                    phase: 0.0,
                    exposure_gradient: self.exposure_gradient,
                    noise_amplitude: self.noise_amplitude,
                    seed: self.seed.wrapping_add(i as u64),
                };
                let img = synthesize_led_image(&shutter, self.n_rows, self.n_frames, &led)?;
                let estimate = match estimate_scan_rate(&img, led_hz) {
                    Ok(e) => Some(e),
                    Err(Error::NoPeak) => None,
                    Err(e) => return Err(e),
                };
                Ok(CalibrationCell {
                    framerate: f,
                    led_hz,
                    periods_per_frame: self.n_rows as f64 * led_hz / shutter.scan_rate.abs(),
                    estimate,
                    ideal_seconds_per_row: ideal_seconds_per_row(f, self.n_rows),
                })
            })
            .collect()
    }
}

/// A row of the calibrated-vs-ideal table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub framerate: f64,
    pub calibrated_seconds_per_row: Option<f64>,
    pub uncertainty: Option<f64>,
    pub ideal_seconds_per_row: f64,
    pub cells_used: usize,
}

/// Averages the cells of each framerate that have between `min_periods` and `n_rows/4` stripe
/// periods per frame; the uncertainty is the widest half-bin among them.
pub fn summarize(cells: &[CalibrationCell], n_rows: usize, min_periods: f64) -> Vec<CalibrationSummary> {
    let mut framerates: Vec<f64> = cells.iter().map(|c| c.framerate).collect();
    framerates.dedup();
    framerates
        .into_iter()
        .map(|f| {
            let used: Vec<&CalibrationEstimate> = cells
                .iter()
                .filter(|c| c.framerate == f)
                .filter(|c| c.periods_per_frame >= min_periods && c.periods_per_frame <= n_rows as f64 / 4.0)
                .filter_map(|c| c.estimate.as_ref())
                .collect();
            let n = used.len();
            CalibrationSummary {
                framerate: f,
                calibrated_seconds_per_row: (n > 0)
                    .then(|| used.iter().map(|e| e.scan_seconds_per_row).sum::<f64>() / n as f64),
                uncertainty: (n > 0).then(|| used.iter().map(|e| e.uncertainty).fold(0.0, f64::max)),
                ideal_seconds_per_row: ideal_seconds_per_row(f, n_rows),
                cells_used: n,
            }
        })
        .collect()
}
