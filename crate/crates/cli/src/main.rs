//! `rscam`: projection queries, distortion renders, calibration and SfM experiments.
//!
//! Settings come from built-in defaults, overridden by `--config FILE` (TOML), overridden by
//! flags. The resolved configuration is written next to every command's outputs.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "rscam", version, about = "Rolling-shutter camera models and experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rscam-out")]
    out: PathBuf,
    /// Camera-frame velocity `vx,vy,vz` in km/h.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    velocity_kmh: Option<Vec<f64>>,
    /// Camera-frame angular velocity `wx,wy,wz` in rev/s.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    angular_rps: Option<Vec<f64>>,
    /// Rows per second.
    #[arg(long, global = true)]
    scan_rate: Option<f64>,
    #[arg(long, global = true)]
    framerate: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Perspective and rolling-shutter projection of world points.
    Project {
        /// World point `x,y,z`; repeatable.
        #[arg(long = "point", allow_hyphen_values = true)]
        points: Vec<String>,
        /// CSV file with `x,y,z` columns.
        #[arg(long)]
        points_file: Option<PathBuf>,
        /// Use the exact rotation instead of the linearised camera.
        #[arg(long)]
        exact: bool,
    },
    /// Render a checkerboard seen by a camera spinning about its optical axis.
    RenderChecker {
        /// Angular velocities in rev/s.
        #[arg(long, value_delimiter = ',')]
        omega_rps: Option<Vec<f64>>,
        #[arg(long)]
        depth: Option<f64>,
    },
    /// Synthetic LED calibration over a framerate × LED frequency grid.
    CalibrateSim {
        #[arg(long, value_delimiter = ',')]
        framerates: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        leds: Option<Vec<f64>>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        gradient: bool,
    },
    /// Two-view bundle adjustment sweep over velocity and pixel noise.
    SfmGrid {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        velocities: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long)]
        estimate_velocity: bool,
    },
    /// Analytic and finite-difference rolling-shutter flow on a pixel grid.
    Flow {
        #[arg(long)]
        depth: Option<f64>,
    },
    /// Crossed-slit structure and per-pixel slit incidence.
    Slits,
}

fn triple(name: &str, v: &[f64]) -> Result<[f64; 3], CliError> {
    <[f64; 3]>::try_from(v).map_err(|_| CliError::Config(format!("--{name} needs three comma-separated values")))
}

fn parse_point(s: &str) -> Result<[f64; 3], CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("bad point {s:?}: {e}")))?;
    triple("point", &v)
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &cli.velocity_kmh {
        cfg.motion.velocity_kmh = triple("velocity-kmh", v)?;
    }
    if let Some(w) = &cli.angular_rps {
        cfg.motion.angular_rps = triple("angular-rps", w)?;
    }
    if let Some(r) = cli.scan_rate {
        cfg.shutter.scan_rate = Some(r);
        cfg.render.scan_rate = Some(r);
    }
    if let Some(f) = cli.framerate {
        cfg.shutter.framerate = f;
        cfg.render.framerate = f;
    }
    match &cli.command {
        Command::Project { points, points_file, exact } => {
            for p in points {
                cfg.project.points.push(parse_point(p)?);
            }
            if let Some(f) = points_file {
                cfg.project.points_file = Some(f.clone());
            }
            cfg.project.exact |= *exact;
        }
        Command::RenderChecker { omega_rps, depth } => {
            if let Some(w) = omega_rps {
                cfg.render.omega_rps = w.clone();
            }
            if let Some(d) = depth {
                cfg.render.depth = *d;
            }
        }
        Command::CalibrateSim { framerates, leds, noise, gradient } => {
            if let Some(f) = framerates {
                cfg.calibration.framerates = f.clone();
            }
            if let Some(l) = leds {
                cfg.calibration.led_hz = l.clone();
            }
            if let Some(n) = noise {
                cfg.calibration.noise_amplitude = *n;
            }
            cfg.calibration.exposure_gradient |= *gradient;
        }
        Command::SfmGrid { trials, velocities, sigmas, estimate_velocity } => {
            if let Some(t) = trials {
                cfg.sfm.trials = *t;
            }
            if let Some(v) = velocities {
                cfg.sfm.velocities_kmh = v.clone();
            }
            if let Some(s) = sigmas {
                cfg.sfm.sigmas_px = s.clone();
            }
            cfg.sfm.bundle.estimate_velocity |= *estimate_velocity;
        }
        Command::Flow { depth } => {
            if let Some(d) = depth {
                cfg.flow.depth = *d;
            }
        }
        Command::Slits => {}
    }
    cfg.sfm.seed = cfg.seed;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let out = commands::Output::new(&cli.out, &cfg)?;
    match cli.command {
        Command::Project { .. } => commands::project(&cfg, &out),
        Command::RenderChecker { .. } => commands::render_checker(&cfg, &out),
        Command::CalibrateSim { .. } => commands::calibrate_sim(&cfg, &out),
        Command::SfmGrid { .. } => commands::sfm_grid(&cfg, &out),
        Command::Flow { .. } => commands::flow(&cfg, &out),
        Command::Slits => commands::slits(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
