use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rscam::calibration::{summarize, synthesize_led_image, marginal_spectrum, CalibrationSweep, LedConfig, EstimatorOptions};
use rscam::flow::{flow_finite_difference, flow_perspective, flow_rolling_shutter_general, FlowModel};
use rscam::geometry::camera_matrix_at;
use rscam::sfm::{run_experiment_grid, trial_problem, write_grid_csv, GridRow, ProjectionModel};
use rscam::shutter::is_safe;
use rscam::xslit::{backproject, compute_slits};
use rscam::{project_perspective, project_rolling_shutter, PixelPoint, ShutterParams, WorldPoint};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::svg::{panel_row, Panel, Series};

pub struct Output {
    dir: PathBuf,
}

impl Output {
    /// Creates `dir` and writes the resolved configuration into it.
    pub fn new(dir: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.resolved.toml"), cfg.to_toml()?)?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        fs::write(self.path(name), contents)?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    z: f64,
}

fn read_points(path: &Path) -> Result<Vec<[f64; 3]>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    rdr.deserialize::<PointRow>()
        .map(|r| r.map(|p| [p.x, p.y, p.z]).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn project(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let k = cfg.camera.intrinsics()?;
    let s = cfg.shutter.params(&cfg.camera)?;
    let m = cfg.motion.state();
    let mut points = cfg.project.points.clone();
    if let Some(file) = &cfg.project.points_file {
        points.extend(read_points(file)?);
    }
    if points.is_empty() {
        return Err(CliError::Config("no points to project (use --point or a points file)".into()));
    }
    let p0 = camera_matrix_at(&m, &k, 0.0, false);
    let vy = m.effective_velocity().y;
    let mut csv = String::from("x,y,z,persp_u,persp_v,rs_u,rs_v,t_c,correction_px,safe\n");
    for [x, y, z] in points {
        let w = WorldPoint::new(x, y, z);
        let fail = |e: rscam::Error| CliError::Core(e).context_point(&w);
        let persp = project_perspective(&w, &p0).map_err(fail)?;
        let rs = project_rolling_shutter(&w, &m, &k, &s, cfg.project.exact).map_err(fail)?;
        let depth = m.pose0.transform(&w).z;
        let safe = is_safe(&s, &k, vy, depth);
        let _ = writeln!(
            csv,
            "{x},{y},{z},{},{},{},{},{},{},{safe}",
            persp.x,
            persp.y,
            rs.pixel.x,
            rs.pixel.y,
            rs.scan_time,
            (rs.pixel - persp).norm()
        );
    }
    print!("{csv}");
    out.write("project.csv", csv)
}

impl CliError {
    fn context_point(self, w: &WorldPoint) -> CliError {
        match self {
            CliError::Core(e) => {
                eprintln!("point ({}, {}, {}): {e}", w.x, w.y, w.z);
                CliError::Core(e)
            }
            other => other,
        }
    }
}

pub fn render_checker(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let renders = cfg.render.render()?;
    let mut csv = String::from("omega_rps,max_deflection_px,lattice_lines\n");
    for r in &renders {
        let stem = format!("checker_{}rps", r.omega_rps);
        let mut pgm = Vec::new();
        r.image.write_pgm(&mut pgm)?;
        out.write(&format!("{stem}.pgm"), pgm)?;
        let png = image::GrayImage::from_raw(r.image.width, r.image.height, r.image.data.clone())
            .ok_or_else(|| CliError::Config("image buffer size mismatch".into()))?;
        png.save(out.path(&format!("{stem}.png")))?;
        let _ = writeln!(csv, "{},{},{}", r.omega_rps, r.max_deflection_px, r.lattice.len());
    }
    print!("{csv}");
    out.write("deflection.csv", csv)
}

pub fn calibrate_sim(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let c = &cfg.calibration;
    if c.framerates.is_empty() || c.led_hz.is_empty() {
        return Err(CliError::Config("calibration grid needs at least one framerate and one LED frequency".into()));
    }
    let sweep = CalibrationSweep {
        n_rows: c.n_rows,
        n_frames: c.n_frames,
        duty: c.duty,
        exposure_gradient: c.exposure_gradient,
        noise_amplitude: c.noise_amplitude,
        seed: cfg.seed,
    };
    let cells = sweep.run(&c.framerates, &c.led_hz)?;
    let mut csv = String::from(
        "framerate,led_hz,periods_per_frame,status,sec_per_row,uncertainty,stripe_cycles_per_row,ideal_sec_per_row\n",
    );
    for cell in &cells {
        match &cell.estimate {
            Some(e) => {
                let _ = writeln!(
                    csv,
                    "{},{},{},ok,{},{},{},{}",
                    cell.framerate,
                    cell.led_hz,
                    cell.periods_per_frame,
                    e.scan_seconds_per_row,
                    e.uncertainty,
                    e.stripe_frequency,
                    cell.ideal_seconds_per_row
                );
            }
            None => {
                let _ = writeln!(
                    csv,
                    "{},{},{},no_peak,,,,{}",
                    cell.framerate, cell.led_hz, cell.periods_per_frame, cell.ideal_seconds_per_row
                );
            }
        }
    }
    out.write("calibration_cells.csv", csv)?;

    let mut table = String::from("framerate,calibrated_sec_per_row,uncertainty,ideal_sec_per_row,cells_used\n");
    println!("{:>10} {:>24} {:>12}", "fps", "calibrated (s/row)", "ideal");
    for row in summarize(&cells, c.n_rows, c.min_periods) {
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            row.framerate,
            fmt(row.calibrated_seconds_per_row),
            fmt(row.uncertainty),
            row.ideal_seconds_per_row,
            row.cells_used
        );
        match (row.calibrated_seconds_per_row, row.uncertainty) {
            (Some(v), Some(u)) => println!("{:>10} {:>14.5} ± {:.5} {:>12.5}", row.framerate, v, u, row.ideal_seconds_per_row),
            _ => println!("{:>10} {:>24} {:>12.5}", row.framerate, "no peak", row.ideal_seconds_per_row),
        }
    }
    out.write("calibration_table.csv", table)?;

    let f = c.spectrum_framerate.unwrap_or(c.framerates[0]);
    let led_hz = c.spectrum_led_hz.unwrap_or(c.led_hz[0]);
    let shutter = ShutterParams::continuous(f, c.n_rows as u32)?;
    let led = LedConfig {
        exposure_gradient: c.exposure_gradient,
        noise_amplitude: c.noise_amplitude,
        seed: cfg.seed,
        ..LedConfig::new(led_hz, c.duty)
    };
    let img = synthesize_led_image(&shutter, c.n_rows, c.n_frames, &led)?;
    let mut pgm = Vec::new();
    img.write_pgm(&mut pgm)?;
    out.write("led_image.pgm", pgm)?;
    let mut spectrum = Vec::new();
    marginal_spectrum(&img, EstimatorOptions::default().padding).write_csv(&mut spectrum)?;
    out.write("spectrum.csv", spectrum)
}

fn grid_plot(rows: &[GridRow], title: &str, y_label: &str, metric: impl Fn(&GridRow) -> (f64, f64)) -> String {
    let mut velocities: Vec<f64> = rows.iter().map(|r| r.velocity_kmh).collect();
    velocities.dedup();
    let panels: Vec<Panel> = velocities
        .iter()
        .map(|&v| {
            let series = [(ProjectionModel::RollingShutter, "blue", false), (ProjectionModel::Perspective, "red", true)]
                .into_iter()
                .map(|(model, color, dashed)| Series {
                    label: model.name().replace('_', " "),
                    color,
                    dashed,
                    points: rows
                        .iter()
                        .filter(|r| r.velocity_kmh == v && r.model == model)
                        .map(|r| {
                            let (m, se) = metric(r);
                            (r.sigma_px, m, se)
                        })
                        .collect(),
                })
                .collect();
            Panel { title: format!("v = {v} km/h"), series }
        })
        .collect();
    panel_row(title, "pixel noise σ (px)", y_label, &panels)
}

pub fn sfm_grid(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let grid = &cfg.sfm;
    let rows = run_experiment_grid(grid)?;
    let mut csv = Vec::new();
    write_grid_csv(&rows, &mut csv)?;
    out.write("sfm_results.csv", &csv)?;
    out.write(
        "sfm_reprojection.svg",
        grid_plot(&rows, "Reprojection error", "RMS (px)", |r| (r.mean_reproj_px, r.se_reproj)),
    )?;
    out.write(
        "sfm_rotation.svg",
        grid_plot(&rows, "Mean rotation error", "degrees", |r| (r.mean_rot_deg, r.se_rot)),
    )?;
    out.write(
        "sfm_translation.svg",
        grid_plot(&rows, "Mean error in direction of translation", "degrees", |r| (r.mean_trans_deg, r.se_trans)),
    )?;
    out.write("sfm_problem.json", trial_problem(grid, 0, 0)?.to_json()?)?;
    print!("{}", String::from_utf8_lossy(&csv));
    let nonconverged: usize = rows.iter().map(|r| r.nonconverged_count).sum();
    if nonconverged > 0 {
        eprintln!("{nonconverged} adjustments did not converge");
    }
    Ok(())
}

fn pixel_grid(width: u32, height: u32, [nx, ny]: [usize; 2]) -> Result<Vec<PixelPoint>, CliError> {
    if nx == 0 || ny == 0 {
        return Err(CliError::Config("sample grid must be at least 1×1".into()));
    }
    Ok((0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                PixelPoint::new(
                    (i as f64 + 0.5) * width as f64 / nx as f64,
                    (j as f64 + 0.5) * height as f64 / ny as f64,
                )
            })
        })
        .collect())
}

pub fn flow(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let k = cfg.camera.intrinsics()?;
    let sh = cfg.shutter.params(&cfg.camera)?.normalized(&k);
    let m = cfg.motion.state();
    let z = cfg.flow.depth;
    let mut csv = String::from("u_px,v_px,persp_du,persp_dv,rs_du,rs_dv,fd_du,fd_dv,max_abs_diff\n");
    let mut worst: f64 = 0.0;
    let px = |f: &rscam::flow::FlowVector| k.scale_displacement(&Vector2::new(f.du, f.dv));
    for p in pixel_grid(k.width, k.height, cfg.flow.grid)? {
        let q = k.to_normalized(&p);
        let persp = px(&flow_perspective(q.x, q.y, z, &m)?);
        let rs = px(&flow_rolling_shutter_general(q.x, q.y, z, &m, &sh)?);
        let fd = px(&flow_finite_difference(q.x, q.y, z, &m, &sh, cfg.flow.step, FlowModel::Linearized)?);
        let diff = (rs - fd).amax();
        worst = worst.max(diff);
        let _ = writeln!(csv, "{},{},{},{},{},{},{},{},{diff}", p.x, p.y, persp.x, persp.y, rs.x, rs.y, fd.x, fd.y);
    }
    out.write("flow.csv", csv)?;
    println!("flow at depth {z} m, pixels per second; largest analytic vs finite-difference gap {worst:e}");
    Ok(())
}

pub fn slits(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let k = cfg.camera.intrinsics()?;
    let sh = cfg.shutter.params(&cfg.camera)?.normalized(&k);
    let m = cfg.motion.state();
    let translation_only = rscam::MotionState { angular_velocity: nalgebra::Vector3::zeros(), ..m };
    let pair = compute_slits(&translation_only, &sh)?;
    let show = |v: &nalgebra::Vector3<f64>| format!("({}, {}, {})", v.x, v.y, v.z);
    println!("slit 1: point {} direction {}", show(&pair.slit1.point), show(pair.slit1.direction()));
    println!("slit 2: point {} direction {}", show(&pair.slit2.point), show(pair.slit2.direction()));
    let mut csv = String::from("u_px,v_px,residual_m\n");
    let mut worst: f64 = 0.0;
    for p in pixel_grid(k.width, k.height, cfg.slits.grid)? {
        let ray = backproject(&k.to_normalized(&p), &m, &sh)?;
        let residual = pair.incidence_residual(&ray);
        worst = worst.max(residual);
        let _ = writeln!(csv, "{},{},{residual}", p.x, p.y);
    }
    out.write("slits.csv", csv)?;
    println!("max slit residual {worst:e} m");
    Ok(())
}
