//! Levenberg–Marquardt bundle adjustment with a Schur-complement step.
//!
//! Camera 1 is held at its true pose. Camera 2 has a left rotation increment and a unit
//! direction for its centre relative to camera 1, with the baseline length held fixed. When
//! velocities are estimated each camera also carries `(v, ω)`. Jacobians are central
//! differences.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pose_errors, random_unit, CameraSetup, ProjectionModel, SfmProblem, SfmSolution};
use crate::error::{Error, Result};
use crate::geometry::{camera_matrix_at, project_perspective, MotionState, PixelPoint, Pose, Rotation, WorldPoint, MIN_DEPTH};
use crate::shutter::{project_rolling_shutter_with, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Estimate per-camera `(v, ω)` under the rolling-shutter model instead of using the truth.
    pub estimate_velocity: bool,
    /// Initial rotation error of camera 2 (degrees).
    pub init_rotation_deg: f64,
    /// Initial displacement of camera 2's centre as a fraction of the baseline.
    pub init_translation_fraction: f64,
    pub jacobian_step: f64,
    pub initial_lambda: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            max_iterations: 200,
            relative_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            estimate_velocity: false,
            init_rotation_deg: 2.0,
            init_translation_fraction: 0.02,
            jacobian_step: 1e-6,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    RelativeDecrease,
    SmallStep,
    /// Damping grew without finding a descent step.
    Stalled,
    MaxIterations,
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(self, Termination::Gradient | Termination::RelativeDecrease | Termination::SmallStep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub cameras: Vec<MotionState>,
    pub points: Vec<WorldPoint>,
}

/// Truth with camera 2 rotated by `init_rotation_deg` about a random axis and its centre moved by
/// `init_translation_fraction` of the baseline, plus points triangulated from the observations.
/// Velocities are the truth, or zero when they are to be estimated.
pub fn initial_guess(p: &SfmProblem, opts: &BundleOptions) -> Result<InitialGuess> {
    check_problem(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(super::mix_seed(p.rng_seed, u64::MAX, 1));
    let truth1 = p.cameras[0].motion;
    let truth2 = p.cameras[1].motion;
    let c1 = truth1.pose0.viewpoint();
    let c2 = truth2.pose0.viewpoint();
    let baseline = (c2 - c1).norm();
    let rot = Rotation::exp(&random_unit(&mut rng), opts.init_rotation_deg.to_radians()) * truth2.pose0.rotation;
    let center = c2 + random_unit(&mut rng) * opts.init_translation_fraction * baseline;
    let center = c1 + (center - c1).normalize() * baseline;

    let mut cameras = vec![truth1, MotionState { pose0: Pose::from_center(rot, &center), ..truth2 }];
    if opts.estimate_velocity {
        for c in cameras.iter_mut() {
            c.linear_velocity = Vector3::zeros();
            c.angular_velocity = Vector3::zeros();
        }
    }
    let points = triangulate_all(p, &cameras);
    Ok(InitialGuess { cameras, points })
}

/// Linear triangulation from the perspective cameras at `t = 0`.
fn triangulate_all(p: &SfmProblem, cameras: &[MotionState]) -> Vec<WorldPoint> {
    let mats: Vec<_> = cameras
        .iter()
        .zip(&p.cameras)
        .map(|(m, c)| camera_matrix_at(m, &c.intrinsics, 0.0, false))
        .collect();
    let mut rows: Vec<Vec<(usize, PixelPoint)>> = vec![Vec::new(); p.points.len()];
    for (i, obs) in p.observations.iter().enumerate() {
        for o in obs {
            rows[o.point].push((i, o.pixel));
        }
    }
    let c1 = cameras[0].pose0.viewpoint();
    rows.iter()
        .map(|views| {
            let mut a = DMatrix::zeros(2 * views.len().max(2), 4);
            for (n, (i, q)) in views.iter().enumerate() {
                let pm = &mats[*i];
                for c in 0..4 {
                    a[(2 * n, c)] = q.x * pm[(2, c)] - pm[(0, c)];
                    a[(2 * n + 1, c)] = q.y * pm[(2, c)] - pm[(1, c)];
                }
            }
            let svd = a.svd(false, true);
            let x = svd.v_t.as_ref().and_then(|vt| {
                let (idx, _) = svd.singular_values.argmin();
                let h = vt.row(idx);
                (h[3].abs() > 1e-12).then(|| WorldPoint::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
            });
            let in_front = |x: &WorldPoint| cameras.iter().all(|m| m.pose0.transform(x).z > MIN_DEPTH);
            match x {
                Some(x) if in_front(&x) => x,
                // fall back to the first camera's ray at the cloud's depth
                _ => {
                    let (i, q) = views[0];
                    let k = &p.cameras[i].intrinsics;
                    let n = k.to_normalized(&q);
                    let rt = cameras[i].pose0.rotation.inverse();
                    WorldPoint::from(c1 + &rt * Vector3::new(n.x, n.y, 1.0) * c1.norm())
                }
            }
        })
        .collect()
}

fn check_problem(p: &SfmProblem) -> Result<()> {
    if p.cameras.len() != 2 || p.observations.len() != 2 {
        return Err(Error::InvalidParameter("bundle adjustment expects exactly two views".into()));
    }
    if p.observations.iter().flatten().any(|o| o.point >= p.points.len()) {
        return Err(Error::InvalidParameter("observation refers to a missing point".into()));
    }
    Ok(())
}

/// Bundle adjustment from [`initial_guess`].
pub fn bundle_adjust(p: &SfmProblem, model: ProjectionModel, opts: &BundleOptions) -> Result<SfmSolution> {
    let init = initial_guess(p, opts)?;
    bundle_adjust_from(p, model, &init, opts)
}

pub fn bundle_adjust_from(
    p: &SfmProblem,
    model: ProjectionModel,
    init: &InitialGuess,
    opts: &BundleOptions,
) -> Result<SfmSolution> {
    check_problem(p)?;
    if init.cameras.len() != 2 || init.points.len() != p.points.len() {
        return Err(Error::InvalidParameter("initial guess does not match the problem".into()));
    }
    let ba = Adjuster::new(p, model, opts);
    let c1 = init.cameras[0].pose0.viewpoint();
    let offset = init.cameras[1].pose0.viewpoint() - c1;
    let baseline = offset.norm();
    if !(baseline > 0.0) {
        return Err(Error::InvalidParameter("cameras share a centre".into()));
    }
    let mut state = State {
        cams: [init.cameras[0], init.cameras[1]],
        rot2: init.cameras[1].pose0.rotation,
        dir: offset / baseline,
        baseline,
        points: init.points.iter().map(|x| x.coords).collect(),
    };
    let mut r = ba.residuals(&state)?;
    let mut cost = 0.5 * r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = opts.initial_lambda;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let normal = ba.normal_equations(&state, &r)?;
        if normal.grad_norm < opts.gradient_tolerance {
            termination = Termination::Gradient;
            break;
        }
        loop {
            let Some((dc, dp)) = normal.solve(lambda) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    termination = Termination::Stalled;
                    break 'outer;
                }
                continue;
            };
            let step_norm = (dc.norm_squared() + dp.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
            let scale = state.points.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
            if step_norm <= 1e-12 * (scale + 1e-12) {
                termination = Termination::SmallStep;
                break 'outer;
            }
            let candidate = state.retract(&dc, Some(&dp), &ba.layout);
            let trial = ba.residuals(&candidate).ok();
            let new_cost = trial.as_ref().map_or(f64::INFINITY, |t| 0.5 * t.norm_squared());
            if new_cost < cost {
                let rel = (cost - new_cost) / cost;
                state = candidate;
                r = trial.expect("finite cost");
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                if rel < opts.relative_tolerance || cost == 0.0 {
                    termination = Termination::RelativeDecrease;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }

    let cameras = state.cams.to_vec();
    let truth: Vec<MotionState> = p.cameras.iter().map(|c| c.motion).collect();
    let (rotation_error, translation_direction_error) = pose_errors(&truth, &cameras);
    let n_obs = ba.obs.len().max(1);
    Ok(SfmSolution {
        cameras,
        points: state.points.iter().map(|x| WorldPoint::from(*x)).collect(),
        reprojection_rms: (2.0 * cost / n_obs as f64).sqrt(),
        rotation_error,
        translation_direction_error,
        model_used: model,
        iterations,
        converged: termination.converged(),
        termination,
        cost_history: history,
    })
}

/// Camera-side parameter layout.
#[derive(Debug, Clone, Copy)]
struct Layout {
    velocities: bool,
}

impl Layout {
    fn len(&self) -> usize {
        if self.velocities {
            17
        } else {
            5
        }
    }
}

#[derive(Debug, Clone)]
struct State {
    cams: [MotionState; 2],
    rot2: Rotation,
    dir: Vector3<f64>,
    baseline: f64,
    points: Vec<Vector3<f64>>,
}

fn tangent_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = a.cross(d).normalize();
    (e1, d.cross(&e1))
}

impl State {
    fn retract(&self, dc: &DVector<f64>, dp: Option<&[Vector3<f64>]>, layout: &Layout) -> State {
        let mut next = self.clone();
        next.rot2 = Rotation::exp(&Vector3::new(dc[0], dc[1], dc[2]), 1.0) * self.rot2;
        let (e1, e2) = tangent_basis(&self.dir);
        next.dir = (self.dir + e1 * dc[3] + e2 * dc[4]).normalize();
        let c1 = self.cams[0].pose0.viewpoint();
        next.cams[1].pose0 = Pose::from_center(next.rot2, &(c1 + next.dir * self.baseline));
        if layout.velocities {
            for (i, cam) in next.cams.iter_mut().enumerate() {
                let o = 5 + 6 * i;
                cam.linear_velocity += Vector3::new(dc[o], dc[o + 1], dc[o + 2]);
                cam.angular_velocity += Vector3::new(dc[o + 3], dc[o + 4], dc[o + 5]);
            }
        }
        if let Some(dp) = dp {
            for (x, d) in next.points.iter_mut().zip(dp) {
                *x += d;
            }
        }
        next
    }
}

struct Adjuster<'a> {
    problem: &'a SfmProblem,
    model: ProjectionModel,
    layout: Layout,
    step: f64,
    /// `(camera, point, pixel)` for every observation.
    obs: Vec<(usize, usize, PixelPoint)>,
    solver: SolverOptions,
}

struct NormalEquations {
    u: DMatrix<f64>,
    gc: DVector<f64>,
    v: Vec<Matrix3<f64>>,
    gp: Vec<Vector3<f64>>,
    w: Vec<DMatrix<f64>>,
    grad_norm: f64,
}

impl NormalEquations {
    /// Damped step `(δc, δp)` with `H + λ·diag(H)`, points eliminated by the Schur complement.
    fn solve(&self, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
        let nc = self.gc.len();
        let mut s = self.u.clone();
        for i in 0..nc {
            s[(i, i)] += lambda * self.u[(i, i)] + 1e-12;
        }
        let mut rhs = -&self.gc;
        let mut v_inv = Vec::with_capacity(self.v.len());
        for (j, v) in self.v.iter().enumerate() {
            let mut vd = *v;
            for i in 0..3 {
                vd[(i, i)] += lambda * v[(i, i)] + 1e-12;
            }
            let inv = vd.try_inverse()?;
            let wv = &self.w[j] * inv;
            s -= &wv * self.w[j].transpose();
            rhs += &wv * self.gp[j];
            v_inv.push(inv);
        }
        let dc = match s.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => s.lu().solve(&rhs)?,
        };
        if !dc.iter().all(|x| x.is_finite()) {
            return None;
        }
        let dp = v_inv
            .iter()
            .enumerate()
            .map(|(j, inv)| {
                let wt_dc = self.w[j].transpose() * &dc;
                inv * (-self.gp[j] - Vector3::new(wt_dc[0], wt_dc[1], wt_dc[2]))
            })
            .collect();
        Some((dc, dp))
    }
}

impl<'a> Adjuster<'a> {
    fn new(problem: &'a SfmProblem, model: ProjectionModel, opts: &BundleOptions) -> Self {
        let obs = problem
            .observations
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |o| (i, o.point, o.pixel)))
            .collect();
        Adjuster {
            problem,
            model,
            layout: Layout { velocities: opts.estimate_velocity && model == ProjectionModel::RollingShutter },
            step: opts.jacobian_step,
            obs,
            solver: SolverOptions { enforce_window: false, ..SolverOptions::default() },
        }
    }

    fn project(&self, cam: &CameraSetup, m: &MotionState, x: &Vector3<f64>) -> Result<PixelPoint> {
        let x = WorldPoint::from(*x);
        match self.model {
            ProjectionModel::Perspective => {
                let depth = m.pose0.transform(&x).z;
                if depth <= MIN_DEPTH {
                    return Err(Error::NegativeDepth { depth });
                }
                project_perspective(&x, &camera_matrix_at(m, &cam.intrinsics, 0.0, false))
            }
            ProjectionModel::RollingShutter => {
                project_rolling_shutter_with(&x, m, &cam.intrinsics, &cam.shutter, false, &self.solver)
                    .map(|p| p.pixel)
            }
        }
    }

    fn residuals(&self, s: &State) -> Result<DVector<f64>> {
        let mut r = DVector::zeros(2 * self.obs.len());
        for (n, &(i, j, q)) in self.obs.iter().enumerate() {
            let pred = self.project(&self.problem.cameras[i], &s.cams[i], &s.points[j])?;
            r[2 * n] = pred.x - q.x;
            r[2 * n + 1] = pred.y - q.y;
        }
        Ok(r)
    }

    /// Central-difference Jacobians: camera columns and one 2×3 point block per observation.
    fn jacobians(&self, s: &State, h: f64) -> Result<(DMatrix<f64>, Vec<Matrix2x3<f64>>)> {
        let nc = self.layout.len();
        let n_res = 2 * self.obs.len();
        let mut jc = DMatrix::zeros(n_res, nc);
        for k in 0..nc {
            let mut d = DVector::zeros(nc);
            d[k] = h;
            let plus = self.residuals(&s.retract(&d, None, &self.layout))?;
            let minus = self.residuals(&s.retract(&-d, None, &self.layout))?;
            jc.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        let mut jp = vec![Matrix2x3::zeros(); self.obs.len()];
        for a in 0..3 {
            let shifted = |sign: f64| {
                let mut t = s.clone();
                for x in t.points.iter_mut() {
                    x[a] += sign * h;
                }
                self.residuals(&t)
            };
            let col = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
            for (n, block) in jp.iter_mut().enumerate() {
                block[(0, a)] = col[2 * n];
                block[(1, a)] = col[2 * n + 1];
            }
        }
        Ok((jc, jp))
    }

    fn normal_equations(&self, s: &State, r: &DVector<f64>) -> Result<NormalEquations> {
        let (jc, jp) = self.jacobians(s, self.step)?;
        let nc = self.layout.len();
        let np = s.points.len();
        let u = jc.transpose() * &jc;
        let gc = jc.transpose() * r;
        let mut v = vec![Matrix3::zeros(); np];
        let mut gp = vec![Vector3::zeros(); np];
        let mut w = vec![DMatrix::zeros(nc, 3); np];
        for (n, &(_, j, _)) in self.obs.iter().enumerate() {
            let b = &jp[n];
            let rn = Vector2::new(r[2 * n], r[2 * n + 1]);
            v[j] += b.transpose() * b;
            gp[j] += b.transpose() * rn;
            let jc_rows = jc.rows(2 * n, 2);
            w[j] += jc_rows.transpose() * b;
        }
        let grad_norm = gc.amax().max(gp.iter().map(|g| g.amax()).fold(0.0, f64::max));
        Ok(NormalEquations { u, gc, v, gp, w, grad_norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::{generate_problem, SceneConfig};

    fn solve(v: f64, sigma: f64, seed: u64, model: ProjectionModel, opts: &BundleOptions) -> (SfmProblem, SfmSolution) {
        let p = generate_problem(&SceneConfig::default(), v, sigma, seed).unwrap();
        let s = bundle_adjust(&p, model, opts).unwrap();
        (p, s)
    }

    #[test]
    fn exact_data_is_recovered_by_matching_model() {
        let opts = BundleOptions::default();
        for (v, model) in [(7.5, ProjectionModel::RollingShutter), (0.0, ProjectionModel::Perspective)] {
            let (_, s) = solve(v, 0.0, 21, model, &opts);
            assert!(s.converged, "{:?}", s.termination);
            assert!(s.reprojection_rms < 1e-6, "{}", s.reprojection_rms);
            assert!(s.rotation_error < 1e-4, "{}", s.rotation_error);
            assert!(s.translation_direction_error.unwrap() < 1e-4);
        }
    }

    #[test]
    fn perspective_model_is_biased_on_moving_camera() {
        let (_, s) = solve(7.5, 0.0, 21, ProjectionModel::Perspective, &BundleOptions::default());
        assert!(s.reprojection_rms > 1e-3);
        assert!(s.rotation_error > 1e-3 || s.translation_direction_error.unwrap() > 1e-3);
    }

    #[test]
    fn cost_never_increases() {
        let (_, s) = solve(5.625, 2.16, 4, ProjectionModel::RollingShutter, &BundleOptions::default());
        assert!(s.cost_history.len() > 1);
        assert!(s.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn velocities_can_be_estimated() {
        let opts = BundleOptions { estimate_velocity: true, ..Default::default() };
        let (p, s) = solve(7.5, 0.0, 8, ProjectionModel::RollingShutter, &opts);
        assert!(s.reprojection_rms < 1e-4, "{}", s.reprojection_rms);
        assert!(s.cameras.iter().all(|c| c.linear_velocity.iter().all(|v| v.is_finite())));
        assert_eq!(s.cameras.len(), p.cameras.len());
    }

    #[test]
    fn numeric_jacobian_converges_quadratically() {
        let p = generate_problem(&SceneConfig::default(), 7.5, 0.5, 2).unwrap();
        let opts = BundleOptions { estimate_velocity: true, ..Default::default() };
        let mut init = initial_guess(&p, &opts).unwrap();
        init.cameras[0].angular_velocity = Vector3::new(0.01, -0.02, 0.3);
        init.cameras[1].linear_velocity = Vector3::new(0.4, 1.0, 0.2);
        let ba = Adjuster::new(&p, ProjectionModel::RollingShutter, &opts);
        let c1 = init.cameras[0].pose0.viewpoint();
        let off = init.cameras[1].pose0.viewpoint() - c1;
        let state = State {
            cams: [init.cameras[0], init.cameras[1]],
            rot2: init.cameras[1].pose0.rotation,
            dir: off.normalize(),
            baseline: off.norm(),
            points: init.points.iter().map(|x| x.coords).collect(),
        };
        let jac = |h: f64| ba.jacobians(&state, h).unwrap();
        let (a, pa) = jac(4e-3);
        let (b, pb) = jac(2e-3);
        let (c, pc) = jac(1e-3);
        let ratio = (&a - &b).norm() / (&b - &c).norm();
        assert!((3.5..4.5).contains(&ratio), "camera ratio {ratio}");
        let diff = |x: &[Matrix2x3<f64>], y: &[Matrix2x3<f64>]| {
            x.iter().zip(y).map(|(p, q)| (p - q).norm_squared()).sum::<f64>().sqrt()
        };
        let ratio = diff(&pa, &pb) / diff(&pb, &pc);
        assert!((3.5..4.5).contains(&ratio), "point ratio {ratio}");
    }
}
