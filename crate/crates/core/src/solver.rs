//! Douglas–Rachford splitting for the discrete transport problem.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{prox_phi_in_place, weighted_phi, ActionParams, ReferenceMeasure};
use crate::constraint::{ConstraintSystem, ProjectionWorkspace, ResidualNorms, DEFAULT_CG_MAX_ITER, DEFAULT_CG_TOL};
use crate::error::{Result, WotError};
use crate::grid::{interpolate_into, GridSpec, MeasureField, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Prox step.
    pub step: f64,
    /// Relaxation, in `(0, 2)`.
    pub relaxation: f64,
    pub max_iters: usize,
    /// Relative objective change tolerated over `stall_window` iterations.
    pub tol_objective: f64,
    pub stall_window: usize,
    /// Bound on the constraint residual of the projected iterate, relative to `1 + |x|`.
    pub tol_constraint: f64,
    /// Bound on `|x - y| / max(1, |x|)` between the projected and prox iterates.
    pub tol_gap: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Worker threads for the pointwise prox pass; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            step: 1.0,
            relaxation: 1.8,
            max_iters: 20_000,
            tol_objective: 1e-7,
            stall_window: 100,
            tol_constraint: 1e-8,
            tol_gap: 1e-5,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: DEFAULT_CG_MAX_ITER,
            threads: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step", self.step),
            ("tol_objective", self.tol_objective),
            ("tol_constraint", self.tol_constraint),
            ("tol_gap", self.tol_gap),
            ("cg_tol", self.cg_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(WotError::Params(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(WotError::Params(format!("relaxation must lie in (0, 2), got {}", self.relaxation)));
        }
        if self.stall_window == 0 || self.cg_max_iter == 0 {
            return Err(WotError::Params("stall_window and cg_max_iter must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(WotError::Params("threads must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverResiduals {
    pub continuity: f64,
    pub endpoint: f64,
    pub coupling: f64,
    /// `|x - y| / max(1, |x|)` between the projected and prox iterates.
    pub splitting_gap: f64,
    /// Relative objective change over the last stall window.
    pub objective_change: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicResult {
    pub grid: GridSpec,
    pub params: ActionParams,
    pub distance: f64,
    pub distance_p: f64,
    /// Action of each time interval.
    pub per_time_action: Vec<f64>,
    /// Density slices `0..=nt`, each of length `ncells`.
    pub densities: Vec<Vec<f64>>,
    /// Staggered momenta per axis, `nt * nfaces` each.
    pub momenta: Vec<Vec<f64>>,
    pub mass_per_slice: Vec<f64>,
    pub iterations: usize,
    pub residuals: SolverResiduals,
    pub converged: bool,
    /// Objective at each iteration.
    pub objective_history: Vec<f64>,
    pub cg_iterations: usize,
}

/// Douglas–Rachford state: governing sequence `z`, projected point `x = P(z)`
/// and prox point `y`.
#[derive(Clone, Debug)]
pub struct DrState {
    pub z: Point,
    pub x: Point,
    pub y: Point,
    pub objective: Vec<f64>,
    /// Norm of the last update of `z`.
    pub last_update: f64,
}

impl DrState {
    pub fn new(z: Point) -> Self {
        DrState {
            x: z.clone(),
            y: z.clone(),
            z,
            objective: Vec::new(),
            last_update: 0.0,
        }
    }
}

/// One Douglas–Rachford step. `prox` maps its argument to the prox point in
/// place and returns the objective there; `projector` writes `P(z)`.
pub fn dr_iterate(
    state: &mut DrState,
    prox: &mut dyn FnMut(&mut Point) -> Result<f64>,
    projector: &mut dyn FnMut(&Point, &mut Point) -> Result<()>,
    cfg: &SolverConfig,
) -> Result<()> {
    projector(&state.z, &mut state.x)?;
    state.y.assign_combination(2.0, &state.x, -1.0, &state.z);
    let obj = prox(&mut state.y)?;
    let mu = cfg.relaxation;
    state.z.axpy(mu, &state.y);
    state.z.axpy(-mu, &state.x);
    state.last_update = mu * state.y.distance(&state.x);
    state.objective.push(obj);
    Ok(())
}

/// Pointwise prox of the action on the centered variables.
pub struct ActionProx<'a> {
    pub params: ActionParams,
    pub gamma: &'a ReferenceMeasure,
    pub grid: &'a GridSpec,
    pub step: f64,
}

impl ActionProx<'_> {
    /// Applies the prox in place and returns the per-interval actions.
    pub fn apply(&self, pt: &mut Point) -> Result<Vec<f64>> {
        let g = self.grid;
        let n = g.ncells();
        let dim = g.dim();
        let c = &pt.centered;
        let out: Vec<(f64, [f64; 2], f64)> = (0..g.nt * n)
            .into_par_iter()
            .map(|idx| {
                let gw = self.gamma.g[idx % n];
                let mut w = [0.0; 2];
                for ax in 0..dim {
                    w[ax] = c.b[ax][idx];
                }
                let rho = prox_phi_in_place(&self.params, gw, self.step, c.a[idx], &mut w[..dim])?;
                let val = weighted_phi(&self.params, gw, rho, &w[..dim]);
                Ok((rho, w, val))
            })
            .collect::<Result<_>>()?;
        let c = &mut pt.centered;
        let vol = g.space.vol();
        let mut per_time = vec![0.0; g.nt];
        for (idx, (rho, w, val)) in out.into_iter().enumerate() {
            c.a[idx] = rho;
            for ax in 0..dim {
                c.b[ax][idx] = w[ax];
            }
            per_time[idx / n] += val;
        }
        per_time.iter_mut().for_each(|v| *v *= vol);
        Ok(per_time)
    }

    /// Per-interval actions of the centered variables of `pt`.
    pub fn actions(&self, pt: &Point) -> Vec<f64> {
        let g = self.grid;
        let n = g.ncells();
        let dim = g.dim();
        let vol = g.space.vol();
        let mut per_time = vec![0.0; g.nt];
        let mut w = [0.0; 2];
        for idx in 0..g.nt * n {
            for ax in 0..dim {
                w[ax] = pt.centered.b[ax][idx];
            }
            per_time[idx / n] += weighted_phi(&self.params, self.gamma.g[idx % n], pt.centered.a[idx], &w[..dim]);
        }
        per_time.iter_mut().for_each(|v| *v *= vol);
        per_time
    }
}

fn total_action(per_time: &[f64], dt: f64) -> f64 {
    per_time.iter().sum::<f64>() * dt
}

/// Linear-in-time interpolation of the endpoints with zero momentum.
pub fn initial_point(sys: &ConstraintSystem) -> Point {
    let g = &sys.grid;
    let n = g.ncells();
    let mut z = Point::zeros(g);
    for k in 0..=g.nt {
        let t = k as f64 / g.nt as f64;
        for c in 0..n {
            z.path.u[k * n + c] = (1.0 - t) * sys.u0[c] + t * sys.u1[c];
        }
    }
    interpolate_into(&z.path, g, &mut z.centered);
    z
}

fn check_inputs(
    mu0: &MeasureField,
    mu1: &MeasureField,
    gamma: &ReferenceMeasure,
    grid: &GridSpec,
) -> Result<()> {
    grid.space.validate()?;
    if gamma.g.len() != grid.ncells() {
        return Err(WotError::Shape {
            what: "reference measure",
            expected: grid.ncells(),
            got: gamma.g.len(),
        });
    }
    if gamma.g.iter().any(|v| !(*v > 0.0)) {
        return Err(WotError::Precondition("reference measure must be strictly positive".into()));
    }
    for mu in [mu0, mu1] {
        if mu.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(WotError::Precondition("endpoint densities must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

/// Computes the transport distance between `mu0` and `mu1` and its geodesic.
pub fn solve_distance(
    mu0: &MeasureField,
    mu1: &MeasureField,
    gamma: &ReferenceMeasure,
    params: &ActionParams,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<GeodesicResult> {
    cfg.validate()?;
    check_inputs(mu0, mu1, gamma, grid)?;
    let sys = ConstraintSystem::new(grid, mu0, mu1)?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| WotError::Params(format!("thread pool: {e}")))?
            .install(|| run(&sys, gamma, params, cfg)),
        None => run(&sys, gamma, params, cfg),
    }
}

fn run(
    sys: &ConstraintSystem,
    gamma: &ReferenceMeasure,
    params: &ActionParams,
    cfg: &SolverConfig,
) -> Result<GeodesicResult> {
    let grid = &sys.grid;
    let dt = grid.dt();
    let mut ws = ProjectionWorkspace::new(grid, cfg.cg_tol, cfg.cg_max_iter);
    let prox = ActionProx {
        params: *params,
        gamma,
        grid,
        step: cfg.step,
    };
    let z0 = ws.project(sys, &initial_point(sys))?;
    let mut state = DrState::new(z0);
    let mut last_per_time = vec![0.0; grid.nt];
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    {
        let mut prox_fn = |pt: &mut Point| -> Result<f64> {
            last_per_time = prox.apply(pt)?;
            Ok(total_action(&last_per_time, dt))
        };
        let mut proj_fn = |z: &Point, out: &mut Point| -> Result<()> { ws.project_into(sys, z, out).map(|_| ()) };
        while iterations < cfg.max_iters {
            dr_iterate(&mut state, &mut prox_fn, &mut proj_fn, cfg)?;
            iterations += 1;
            gap = state.x.distance(&state.y) / state.x.norm().max(1.0);
            let h = &state.objective;
            if h.len() > cfg.stall_window {
                let now = h[h.len() - 1];
                let then = h[h.len() - 1 - cfg.stall_window];
                change = (now - then).abs() / now.abs().max(f64::MIN_POSITIVE);
                if now.abs() < 1e-300 && then.abs() < 1e-300 {
                    change = 0.0;
                }
            }
            if change <= cfg.tol_objective && gap <= cfg.tol_gap {
                let r = sys.residual(&state.x);
                if r.max() <= cfg.tol_constraint * (1.0 + state.x.norm()) {
                    converged = true;
                    break;
                }
            }
        }
    }
    let distance_p = total_action(&last_per_time, dt);
    let ResidualNorms {
        continuity,
        endpoint,
        coupling,
    } = sys.residual(&state.x);
    let n = grid.ncells();
    let densities = (0..=grid.nt)
        .map(|k| state.x.path.u[k * n..(k + 1) * n].to_vec())
        .collect();
    Ok(GeodesicResult {
        grid: grid.clone(),
        params: *params,
        distance: distance_p.max(0.0).powf(1.0 / params.p),
        distance_p,
        per_time_action: last_per_time,
        densities,
        momenta: state.x.path.m.clone(),
        mass_per_slice: sys.slice_masses(&state.x.path),
        iterations,
        residuals: SolverResiduals {
            continuity,
            endpoint,
            coupling,
            splitting_gap: gap,
            objective_change: change,
        },
        converged,
        objective_history: state.objective,
        cg_iterations: ws.total_cg_iterations,
    })
}

/// Clipping statistics of [`extract_geodesic`].
#[derive(Clone, Debug)]
pub struct GeodesicSamples {
    pub slices: Vec<MeasureField>,
    /// Time of each slice in `[0, 1]`.
    pub times: Vec<f64>,
    /// Total negative mass removed, `L1` norm over all returned slices.
    pub clipped_mass: f64,
}

pub const CLIP_REPORT_LIMIT: f64 = 1e-8;
pub const CLIP_ERROR_LIMIT: f64 = 1e-4;

/// `k_samples` density slices at evenly spaced time indices, negatives clipped.
pub fn extract_geodesic(result: &GeodesicResult, k_samples: usize) -> Result<GeodesicSamples> {
    if !result.converged {
        return Err(WotError::Precondition("geodesic extraction needs a converged result".into()));
    }
    if k_samples < 2 {
        return Err(WotError::Params("need at least two samples".into()));
    }
    let nt = result.grid.nt;
    let vol = result.grid.space.vol();
    let mut slices = Vec::with_capacity(k_samples);
    let mut times = Vec::with_capacity(k_samples);
    let mut clipped = 0.0;
    for s in 0..k_samples {
        let k = ((s as f64) * nt as f64 / (k_samples - 1) as f64).round() as usize;
        let mut vals = result.densities[k].clone();
        let neg: f64 = vals.iter().filter(|v| **v < 0.0).map(|v| -v).sum::<f64>() * vol;
        clipped += neg;
        vals.iter_mut().for_each(|v| *v = v.max(0.0));
        slices.push(MeasureField::new(result.grid.space.clone(), vals)?);
        times.push(k as f64 / nt as f64);
    }
    if clipped > CLIP_ERROR_LIMIT {
        return Err(WotError::Integrity(format!(
            "negative density mass {clipped:e} exceeds {CLIP_ERROR_LIMIT:e}"
        )));
    }
    Ok(GeodesicSamples {
        slices,
        times,
        clipped_mass: clipped,
    })
}
