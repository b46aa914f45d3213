use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bundle_adjust, generate_problem, BundleOptions, ProjectionModel, SceneConfig, SfmProblem};
use crate::error::{Error, Result};

/// Velocity × noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub velocities_kmh: Vec<f64>,
    pub sigmas_px: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub bundle: BundleOptions,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            velocities_kmh: vec![1.875, 3.75, 5.625, 7.5],
            sigmas_px: vec![0.5, 1.33, 2.16, 3.0, 3.83, 4.66],
            trials: 20,
            seed: 1,
            scene: SceneConfig::default(),
            bundle: BundleOptions::default(),
        }
    }
}

/// One `(velocity, σ, model)` cell; `se_*` are standard errors of the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub velocity_kmh: f64,
    pub sigma_px: f64,
    pub model: ProjectionModel,
    pub trials: usize,
    pub mean_reproj_px: f64,
    pub se_reproj: f64,
    pub mean_rot_deg: f64,
    pub se_rot: f64,
    pub mean_trans_deg: f64,
    pub se_trans: f64,
    pub nonconverged_count: usize,
}

/// SplitMix64 finaliser over `(seed, cell, trial)`.
pub fn mix_seed(seed: u64, cell: u64, trial: u64) -> u64 {
    let mut z = seed
        ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ trial.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct TrialMetrics {
    reproj: f64,
    rot: f64,
    trans: Option<f64>,
    converged: bool,
}

const MODELS: [ProjectionModel; 2] = [ProjectionModel::RollingShutter, ProjectionModel::Perspective];

/// The problem behind trial `trial` of cell `cell` (velocities outermost, then sigmas).
///
/// Scenes with too few visible points are redrawn with the next attempt index.
pub fn trial_problem(cfg: &GridConfig, cell: usize, trial: usize) -> Result<SfmProblem> {
    let ns = cfg.sigmas_px.len();
    let (Some(&velocity), Some(&sigma)) = (cfg.velocities_kmh.get(cell / ns.max(1)), cfg.sigmas_px.get(cell % ns.max(1)))
    else {
        return Err(Error::Config(format!("cell {cell} is outside the grid")));
    };
    let mut last = None;
    for attempt in 0..8u64 {
        let seed = mix_seed(cfg.seed, cell as u64, ((trial as u64) << 8) | attempt);
        match generate_problem(&cfg.scene, velocity, sigma, seed) {
            Ok(p) => return Ok(p),
            Err(e @ Error::Config(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Config("scene generation failed".into())))
}

/// Both models on the same problem and starting point.
fn run_trial(cfg: &GridConfig, cell: usize, trial: usize) -> Result<[Option<TrialMetrics>; 2]> {
    let p = trial_problem(cfg, cell, trial)?;
    let mut out = [None, None];
    for (slot, model) in out.iter_mut().zip(MODELS) {
        *slot = bundle_adjust(&p, model, &cfg.bundle).ok().map(|s| TrialMetrics {
            reproj: s.reprojection_rms,
            rot: s.rotation_error,
            trans: s.translation_direction_error,
            converged: s.converged,
        });
    }
    Ok(out)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Every `(velocity, σ)` cell for both models, velocities outermost.
///
/// Trials run in parallel; each derives its seed from `(seed, cell, trial)`, so the table does
/// not depend on scheduling. Failed adjustments count as non-converged and are left out of
/// the means.
pub fn run_experiment_grid(cfg: &GridConfig) -> Result<Vec<GridRow>> {
    if cfg.velocities_kmh.is_empty() || cfg.sigmas_px.is_empty() || cfg.trials == 0 {
        return Err(Error::Config("experiment grid needs velocities, sigmas and at least one trial".into()));
    }
    cfg.scene.validate()?;
    let ns = cfg.sigmas_px.len();
    let jobs: Vec<(usize, usize)> = (0..cfg.velocities_kmh.len() * ns)
        .flat_map(|cell| (0..cfg.trials).map(move |t| (cell, t)))
        .collect();
    let results: Vec<[Option<TrialMetrics>; 2]> = jobs
        .par_iter()
        .map(|&(cell, t)| run_trial(cfg, cell, t))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (cell, chunk) in results.chunks(cfg.trials).enumerate() {
        for (m, model) in MODELS.iter().enumerate() {
            let ok: Vec<TrialMetrics> = chunk.iter().filter_map(|r| r[m]).collect();
            let failed = chunk.len() - ok.len();
            let reproj: Vec<f64> = ok.iter().map(|t| t.reproj).collect();
            let rot: Vec<f64> = ok.iter().map(|t| t.rot).collect();
            let trans: Vec<f64> = ok.iter().filter_map(|t| t.trans).collect();
            let (mean_reproj_px, se_reproj) = mean_se(&reproj);
            let (mean_rot_deg, se_rot) = mean_se(&rot);
            let (mean_trans_deg, se_trans) = mean_se(&trans);
            rows.push(GridRow {
                velocity_kmh: cfg.velocities_kmh[cell / ns],
                sigma_px: cfg.sigmas_px[cell % ns],
                model: *model,
                trials: ok.len(),
                mean_reproj_px,
                se_reproj,
                mean_rot_deg,
                se_rot,
                mean_trans_deg,
                se_trans,
                nonconverged_count: failed + ok.iter().filter(|t| !t.converged).count(),
            });
        }
    }
    Ok(rows)
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
