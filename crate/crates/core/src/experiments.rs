//! Deterministic verification battery: each check builds instances, runs the
//! solver and oracles, and emits records of the form `left <= right (1 + rel) + abs`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{entropy_psi, ActionParams, ReferenceMeasure};
use crate::error::{Result, WotError};
use crate::grid::{GridSpec, MeasureField, SpaceGrid};
use crate::oracles::{heat_step, sobolev_dual_12, wasserstein_1d};
use crate::solver::{extract_geodesic, solve_distance, GeodesicResult, SolverConfig};

pub const SUITES: [&str; 8] = [
    "metric",
    "convexity",
    "scaling",
    "comparisons",
    "geodesic",
    "heat",
    "gradient2d",
    "convolution",
];

/// Largest tolerated share of inconclusive records in a suite.
pub const MAX_INCONCLUSIVE_RATE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nx: usize,
    pub nt: usize,
    pub nx_2d: usize,
    pub nt_2d: usize,
    pub p: f64,
    pub alpha: f64,
    /// Relative accuracy attributed to a converged solve.
    pub tol_solver: f64,
    /// Absolute floor added to every solver-based slack.
    pub abs_floor: f64,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nx: 48,
            nt: 16,
            nx_2d: 24,
            nt_2d: 12,
            p: 2.0,
            alpha: 0.5,
            tol_solver: 1e-3,
            abs_floor: 1e-6,
            solver: SolverConfig {
                step: 10.0,
                tol_objective: 1e-6,
                ..SolverConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    fn params(&self) -> Result<ActionParams> {
        ActionParams::new(self.p, self.alpha)
    }

    fn grid_1d(&self) -> Result<GridSpec> {
        GridSpec::new(SpaceGrid::new_1d(self.nx, (0.0, 1.0))?, self.nt)
    }

    fn grid_2d(&self) -> Result<GridSpec> {
        GridSpec::new(SpaceGrid::new_2d(self.nx_2d, self.nx_2d, (0.0, 1.0), (0.0, 1.0))?, self.nt_2d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub seed: u64,
    pub grid: String,
    pub p: f64,
    pub alpha: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub label: String,
    pub distance: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub instance: Instance,
    pub left: f64,
    pub right: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `right (1 + rel_tol) + abs_tol - left`; negative on failure.
    pub margin: f64,
    /// Share of the declared slack used up by `left - right`.
    pub slack_consumed: f64,
    pub pass: bool,
    pub inconclusive: bool,
    pub diagnostics: Vec<SolveDiagnostics>,
}

impl CheckRecord {
    pub fn new(
        name: &str,
        instance: Instance,
        left: f64,
        right: f64,
        rel_tol: f64,
        abs_tol: f64,
        diagnostics: Vec<SolveDiagnostics>,
    ) -> Self {
        let bound = right * (1.0 + rel_tol) + abs_tol;
        let slack = bound - right;
        let inconclusive = diagnostics.iter().any(|d| !d.converged);
        let pass = !inconclusive && left.is_finite() && left <= bound;
        CheckRecord {
            name: name.to_string(),
            instance,
            left,
            right,
            rel_tol,
            abs_tol,
            margin: bound - left,
            slack_consumed: if slack > 0.0 { (left - right) / slack } else { f64::NAN },
            pass,
            inconclusive,
            diagnostics,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub records: Vec<CheckRecord>,
    pub inconclusive_rate: f64,
    pub pass: bool,
}

impl SuiteReport {
    pub fn from_records(suite: &str, records: Vec<CheckRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let inconclusive = records.iter().filter(|r| r.inconclusive).count() as f64;
        let rate = inconclusive / n;
        let pass = rate <= MAX_INCONCLUSIVE_RATE && records.iter().all(|r| r.pass || r.inconclusive);
        SuiteReport {
            suite: suite.to_string(),
            records,
            inconclusive_rate: rate,
            pass,
        }
    }
}

/// Runs one named suite.
pub fn run_suite(name: &str, seed: u64, cfg: &ExperimentConfig) -> Result<SuiteReport> {
    let records = match name {
        "metric" => check_metric_axioms(seed, cfg)?,
        "convexity" => check_convexity_subadditivity(seed, cfg)?,
        "scaling" => {
            let mut r = check_scaling_monotonicity(seed, cfg, 0.5)?;
            r.extend(
                check_scaling_monotonicity(seed, cfg, 2.0)?
                    .into_iter()
                    .filter(|c| c.name != "scaling/gamma-monotone"),
            );
            r
        }
        "comparisons" => check_comparisons(seed, cfg)?,
        "geodesic" => {
            let mut out = Vec::new();
            for alpha in [0.3, 0.5, 0.8] {
                let c = ExperimentConfig {
                    alpha,
                    ..cfg.clone()
                };
                out.extend(geodesic_benchmark(seed, &c)?);
            }
            out
        }
        "heat" => check_heat_flow(seed, cfg, 1e-3, 5)?,
        "gradient2d" => gradient_benchmark(seed, cfg)?,
        "convolution" => convolution_benchmark(seed, cfg)?,
        other => {
            return Err(WotError::Params(format!(
                "unknown suite `{other}`; valid suites: {}, all",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport::from_records(name, records))
}

// ---------------------------------------------------------------- instances

/// Mass-one compactly supported bump `(1 - |x - c|^2 / r^2)^2`.
pub fn bump(grid: &SpaceGrid, center: [f64; 2], radius: f64) -> Result<MeasureField> {
    let dim = grid.dim;
    let f = MeasureField::from_fn(grid.clone(), |x| {
        let mut r2 = (x[0] - center[0]).powi(2);
        if dim == 2 {
            r2 += (x[1] - center[1]).powi(2);
        }
        let t = r2 / (radius * radius);
        if t < 1.0 {
            (1.0 - t).powi(2)
        } else {
            0.0
        }
    })?;
    if !(f.mass() > 0.0) {
        return Err(WotError::Precondition("bump does not cover any cell center".into()));
    }
    Ok(f.normalized(1.0))
}

/// Mass-one uniform density on the box.
pub fn uniform(grid: &SpaceGrid) -> Result<MeasureField> {
    Ok(MeasureField::from_fn(grid.clone(), |_| 1.0)?.normalized(1.0))
}

/// Random smooth mass-one density: a mixture of two bumps kept inside `[0.2, 0.8]`.
pub fn random_smooth(rng: &mut ChaCha8Rng, grid: &SpaceGrid) -> Result<MeasureField> {
    let mut acc = MeasureField::zeros(grid.clone());
    for _ in 0..2 {
        let r = rng.random_range(0.08..0.15);
        let c = [rng.random_range(0.2 + r..0.8 - r), rng.random_range(0.2 + r..0.8 - r)];
        let w = rng.random_range(0.3..1.0);
        acc = acc.plus(&bump(grid, c, r)?.scaled(w));
    }
    Ok(acc.normalized(1.0))
}

/// Translate pair: a bump at `0.5 - delta/2` and its shift by `delta`, along `x`.
pub fn translate_pair(grid: &SpaceGrid, delta: f64, radius: f64) -> Result<(MeasureField, MeasureField)> {
    let c0 = 0.5 - 0.5 * delta;
    Ok((bump(grid, [c0, 0.5], radius)?, bump(grid, [c0 + delta, 0.5], radius)?))
}

/// Entropy `Psi_alpha`, with the Boltzmann entropy at `alpha = 1`.
pub fn entropy(alpha: f64, mu: &MeasureField) -> Result<f64> {
    if alpha == 1.0 {
        let vol = mu.grid.vol();
        return Ok(mu.values.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>() * vol);
    }
    entropy_psi(alpha, mu)
}

/// Discrete convolution with `[1/4, 1/2, 1/4]` per axis and reflecting ends.
pub fn smooth3(mu: &MeasureField) -> MeasureField {
    let g = &mu.grid;
    let mut cur = mu.values.clone();
    for ax in 0..g.dim {
        let mut next = vec![0.0; cur.len()];
        for i in 0..g.nx {
            for j in 0..g.ny {
                let c = g.cell_index(i, j);
                let (k, n) = if ax == 0 { (i, g.nx) } else { (j, g.ny) };
                let step = if ax == 0 { g.ny } else { 1 };
                let lo = if k > 0 { cur[c - step] } else { cur[c] };
                let hi = if k + 1 < n { cur[c + step] } else { cur[c] };
                next[c] = 0.25 * lo + 0.5 * cur[c] + 0.25 * hi;
            }
        }
        cur = next;
    }
    MeasureField {
        grid: g.clone(),
        values: cur,
    }
}

// ------------------------------------------------------------------ helpers

struct Solves<'a> {
    cfg: &'a ExperimentConfig,
    params: ActionParams,
    grid: GridSpec,
    diags: Vec<SolveDiagnostics>,
}

impl<'a> Solves<'a> {
    fn new(cfg: &'a ExperimentConfig, params: ActionParams, grid: GridSpec) -> Self {
        Solves {
            cfg,
            params,
            grid,
            diags: Vec::new(),
        }
    }

    fn full(&mut self, label: &str, a: &MeasureField, b: &MeasureField, gamma: &ReferenceMeasure) -> Result<GeodesicResult> {
        let r = solve_distance(a, b, gamma, &self.params, &self.grid, &self.cfg.solver)?;
        self.diags.push(SolveDiagnostics {
            label: label.to_string(),
            distance: r.distance,
            iterations: r.iterations,
            converged: r.converged,
        });
        Ok(r)
    }

    fn dist(&mut self, label: &str, a: &MeasureField, b: &MeasureField) -> Result<f64> {
        let gamma = ReferenceMeasure::lebesgue(&self.grid.space);
        Ok(self.full(label, a, b, &gamma)?.distance)
    }

    fn dist_with(&mut self, label: &str, a: &MeasureField, b: &MeasureField, gamma: &ReferenceMeasure) -> Result<f64> {
        Ok(self.full(label, a, b, gamma)?.distance)
    }

    /// Diagnostics of the solves whose labels are listed.
    fn take(&self, labels: &[&str]) -> Vec<SolveDiagnostics> {
        self.diags.iter().filter(|d| labels.contains(&d.label.as_str())).cloned().collect()
    }

    fn slack(&self, scale: f64, factor: f64) -> f64 {
        factor * self.cfg.tol_solver * scale + self.cfg.abs_floor
    }
}

fn describe(grid: &GridSpec) -> String {
    let s = &grid.space;
    if s.dim == 1 {
        format!("1d nx={} nt={}", s.nx, grid.nt)
    } else {
        format!("2d {}x{} nt={}", s.nx, s.ny, grid.nt)
    }
}

fn instance(seed: u64, grid: &GridSpec, params: &ActionParams, note: &str) -> Instance {
    Instance {
        seed,
        grid: describe(grid),
        p: params.p,
        alpha: params.alpha,
        note: note.to_string(),
    }
}

// ------------------------------------------------------------------- checks

/// Symmetry, triangle inequality and identity on a random triple.
pub fn check_metric_axioms(seed: u64, cfg: &ExperimentConfig) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    let grid = cfg.grid_1d()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<MeasureField> = (0..3)
        .map(|_| random_smooth(&mut rng, &grid.space))
        .collect::<Result<_>>()?;
    let mut s = Solves::new(cfg, params, grid.clone());
    let d01 = s.dist("01", &mu[0], &mu[1])?;
    let d10 = s.dist("10", &mu[1], &mu[0])?;
    let d12 = s.dist("12", &mu[1], &mu[2])?;
    let d02 = s.dist("02", &mu[0], &mu[2])?;
    let d00 = s.dist("00", &mu[0], &mu[0])?;
    let inst = |note: &str| instance(seed, &grid, &params, note);
    Ok(vec![
        CheckRecord::new(
            "metric/symmetry",
            inst("|W(m0,m1) - W(m1,m0)| <= 2 tol"),
            (d01 - d10).abs(),
            0.0,
            0.0,
            s.slack(d01.max(d10), 2.0),
            s.take(&["01", "10"]),
        ),
        CheckRecord::new(
            "metric/triangle",
            inst("W(m0,m2) <= W(m0,m1) + W(m1,m2) + 3 tol"),
            d02,
            d01 + d12,
            0.0,
            s.slack(d01 + d12, 3.0),
            s.take(&["01", "12", "02"]),
        ),
        CheckRecord::new(
            "metric/identity",
            inst("W(m0,m0) <= tol"),
            d00,
            0.0,
            0.0,
            cfg.abs_floor,
            s.take(&["00"]),
        ),
    ])
}

/// Convexity of `W^p` in the endpoint pair and subadditivity of `W`.
pub fn check_convexity_subadditivity(seed: u64, cfg: &ExperimentConfig) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    let p = params.p;
    let grid = cfg.grid_1d()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = &grid.space;
    let (a0, a1) = (random_smooth(&mut rng, sp)?, random_smooth(&mut rng, sp)?);
    let (b0, b1) = (random_smooth(&mut rng, sp)?, random_smooth(&mut rng, sp)?);
    let mut s = Solves::new(cfg, params, grid.clone());
    let wa = s.dist("a", &a0, &a1)?;
    let wb = s.dist("b", &b0, &b1)?;
    let mut worst: Option<(f64, f64, f64)> = None;
    let mut labels = vec!["a", "b"];
    for (tau, label) in [(0.25, "t25"), (0.5, "t50"), (0.75, "t75")] {
        let w = s.dist(label, &a0.lerp(&b0, tau), &a1.lerp(&b1, tau))?;
        labels.push(label);
        let left = w.powf(p);
        let right = (1.0 - tau) * wa.powf(p) + tau * wb.powf(p);
        if worst.is_none_or(|(l, r, _)| left - right > l - r) {
            worst = Some((left, right, tau));
        }
    }
    let (cl, cr, tau) = worst.expect("three mixtures");
    let sum = s.dist("sum", &a0.plus(&b0), &a1.plus(&b1))?;
    let sigma = uniform(sp)?;
    let bg = s.dist("bg", &a0.plus(&sigma), &a1.plus(&sigma))?;
    let inst = |note: String| instance(seed, &grid, &params, &note);
    let pscale = wa.max(wb).powf(p);
    Ok(vec![
        CheckRecord::new(
            "convexity/mixture",
            inst(format!("worst tau = {tau}: W^p(mix) <= (1-tau) W^p(a) + tau W^p(b) + 3 tol")),
            cl,
            cr,
            0.0,
            s.slack(pscale * p, 3.0),
            s.take(&labels),
        ),
        CheckRecord::new(
            "convexity/subadditivity",
            inst("W(a0+b0, a1+b1) <= W(a0,a1) + W(b0,b1) + 3 tol".into()),
            sum,
            wa + wb,
            0.0,
            s.slack(wa + wb, 3.0),
            s.take(&["a", "b", "sum"]),
        ),
        CheckRecord::new(
            "convexity/background",
            inst("uniform background of mass 1: W(a0+s, a1+s) <= W(a0,a1) + 3 tol".into()),
            bg,
            wa,
            0.0,
            s.slack(wa, 3.0),
            s.take(&["a", "bg"]),
        ),
    ])
}

/// Rescaling identity and inequality for a factor `lambda`, and monotonicity in `gamma`.
pub fn check_scaling_monotonicity(seed: u64, cfg: &ExperimentConfig, lambda: f64) -> Result<Vec<CheckRecord>> {
    if !(lambda > 0.0) {
        return Err(WotError::Params(format!("scaling factor must be positive, got {lambda}")));
    }
    let params = cfg.params()?;
    let p = params.p;
    let grid = cfg.grid_1d()?;
    let sp = &grid.space;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m0, m1) = (random_smooth(&mut rng, sp)?, random_smooth(&mut rng, sp)?);
    let leb = ReferenceMeasure::lebesgue(sp);
    let mut s = Solves::new(cfg, params, grid.clone());
    let base = s.dist("base", &m0, &m1)?.powf(p);
    let (l0, l1) = (m0.scaled(lambda), m1.scaled(lambda));
    let both = s.dist_with("both", &l0, &l1, &leb.scaled(lambda))?.powf(p);
    let meas = s.dist("measures", &l0, &l1)?.powf(p);
    let w_base = base.powf(1.0 / p);
    let w_double = s.dist_with("gamma2", &m0, &m1, &leb.scaled(2.0))?;
    let factor = if lambda >= 1.0 { lambda.powf(p) } else { lambda };
    let inst = |note: String| instance(seed, &grid, &params, &note);
    Ok(vec![
        CheckRecord::new(
            "scaling/identity",
            inst(format!("lambda = {lambda}: |W^p(lm0,lm1|lg) / (lambda W^p) - 1| <= 2 p tol")),
            (both / (lambda * base) - 1.0).abs(),
            0.0,
            0.0,
            2.0 * p * cfg.tol_solver,
            s.take(&["base", "both"]),
        ),
        CheckRecord::new(
            "scaling/fixed-gamma",
            inst(format!("lambda = {lambda}: W^p(lm0,lm1|g) <= {factor} W^p(m0,m1|g)")),
            meas,
            factor * base,
            0.0,
            s.slack(factor * base * p, 3.0),
            s.take(&["base", "measures"]),
        ),
        CheckRecord::new(
            "scaling/gamma-monotone",
            inst("W(m0,m1|2g) <= W(m0,m1|g)".into()),
            w_double,
            w_base,
            0.0,
            s.slack(w_base, 3.0),
            s.take(&["base", "gamma2"]),
        ),
    ])
}

/// Comparison pair: a bump translated over a uniform background, mass one.
pub fn comparison_pair(grid: &SpaceGrid) -> Result<(MeasureField, MeasureField)> {
    let bg = uniform(grid)?;
    let (a, b) = translate_pair(grid, 0.25, 0.15)?;
    Ok((bg.plus(&a.scaled(0.5)).normalized(1.0), bg.plus(&b.scaled(0.5)).normalized(1.0)))
}

/// Comparison with classical Wasserstein and dual Sobolev distances (1D, `p = 2`).
pub fn check_comparisons(seed: u64, cfg: &ExperimentConfig) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    let kappa = params
        .kappa()
        .ok_or_else(|| WotError::Params("comparison checks need alpha < 1".into()))?;
    if params.p != 2.0 {
        return Err(WotError::Params("comparison checks are instantiated at p = 2".into()));
    }
    let theta = params.theta();
    let grid = cfg.grid_1d()?;
    let sp = &grid.space;
    let (m0, m1) = comparison_pair(sp)?;
    let lower = m0.min_value().min(m1.min_value());
    let upper = m0.max_value().max(m1.max_value());
    let mut s = Solves::new(cfg, params, grid.clone());
    let w = s.dist("w", &m0, &m1)?;
    let gamma_mass = ReferenceMeasure::lebesgue(sp).total_mass(sp);
    let w_low = wasserstein_1d(&m0, &m1, params.p / theta)?;
    let w_p = wasserstein_1d(&m0, &m1, params.p)?;
    let sob = sobolev_dual_12(&m0, &m1)?.norm;
    let slack = 0.05;
    let inst = |note: String| instance(seed, &grid, &params, &note);
    let d = s.take(&["w"]);
    Ok(vec![
        CheckRecord::new(
            "comparisons/lower-wasserstein",
            inst(format!("W_(p/theta) <= gamma(box)^(1/kappa) W_(p,alpha), p/theta = {}", params.p / theta)),
            w_low,
            gamma_mass.powf(1.0 / kappa) * w,
            slack,
            cfg.abs_floor,
            d.clone(),
        ),
        CheckRecord::new(
            "comparisons/upper-wasserstein",
            inst(format!("W_(p,alpha) <= M^((theta-1)/p) W_p with M = {upper}")),
            w,
            upper.powf((theta - 1.0) / params.p) * w_p,
            slack,
            cfg.abs_floor,
            d.clone(),
        ),
        CheckRecord::new(
            "comparisons/upper-sobolev",
            inst(format!("W_(2,alpha) <= L^(-alpha/2) |m0 - m1|_(H^-1) with L = {lower}")),
            w,
            lower.powf(-params.alpha / 2.0) * sob,
            slack,
            cfg.abs_floor,
            d,
        ),
    ])
}

/// Constant speed, mass constancy and entropy convexity along a computed geodesic.
pub fn check_geodesic_properties(
    result: &GeodesicResult,
    seed: u64,
    note: &str,
) -> Result<Vec<CheckRecord>> {
    let params = result.params;
    let grid = &result.grid;
    let diag = vec![SolveDiagnostics {
        label: "geodesic".into(),
        distance: result.distance,
        iterations: result.iterations,
        converged: result.converged,
    }];
    let inst = |n: &str| instance(seed, grid, &params, &format!("{note}; {n}"));
    let pa = &result.per_time_action;
    let (mx, mn) = pa
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), v| (a.max(*v), b.min(*v)));
    let flat = if mx == 0.0 { 1.0 } else { mx / mn };
    let masses = &result.mass_per_slice;
    let m0 = masses[0];
    let spread = masses.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE);

    let mut records = vec![
        CheckRecord::new(
            "geodesic/constant-speed",
            inst("max_k Phi_k / min_k Phi_k <= 1.05"),
            flat,
            1.05,
            0.0,
            0.0,
            diag.clone(),
        ),
        CheckRecord::new(
            "geodesic/mass",
            inst("relative spread of slice masses <= 1e-8"),
            spread,
            1e-8,
            0.0,
            0.0,
            diag.clone(),
        ),
    ];
    let entropy_record = if result.converged && params.alpha > 0.0 {
        let geo = extract_geodesic(result, grid.nt + 1)?;
        let ent: Vec<f64> = geo
            .slices
            .iter()
            .map(|m| entropy(params.alpha, m))
            .collect::<Result<_>>()?;
        let (e0, e1) = (ent[0], ent[grid.nt]);
        let mut excess = f64::NEG_INFINITY;
        for (k, e) in ent.iter().enumerate().take(grid.nt).skip(1) {
            let t = geo.times[k];
            excess = excess.max(e - ((1.0 - t) * e0 + t * e1));
        }
        CheckRecord::new(
            "geodesic/entropy-convexity",
            inst("max_t Psi(m_t) - chord(t) <= 1% of max |Psi(endpoint)|"),
            excess,
            0.0,
            0.0,
            0.01 * e0.abs().max(e1.abs()),
            diag,
        )
    } else {
        CheckRecord::new(
            "geodesic/entropy-convexity",
            inst("skipped: needs a converged run with alpha > 0"),
            f64::NAN,
            0.0,
            0.0,
            0.0,
            diag,
        )
    };
    records.push(entropy_record);
    Ok(records)
}

/// Pair used by the geodesic suite: a narrow bump spreading into a wider, shifted one.
pub fn geodesic_pair(grid: &SpaceGrid) -> Result<(MeasureField, MeasureField)> {
    Ok((bump(grid, [0.35, 0.5], 0.12)?, bump(grid, [0.62, 0.5], 0.2)?))
}

fn geodesic_benchmark(seed: u64, cfg: &ExperimentConfig) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    let grid = cfg.grid_1d()?;
    let (a, b) = geodesic_pair(&grid.space)?;
    let r = solve_distance(&a, &b, &ReferenceMeasure::lebesgue(&grid.space), &params, &grid, &cfg.solver)?;
    check_geodesic_properties(&r, seed, "narrow bump to wide bump")
}

/// Face value of `u^(-alpha)` as the difference quotient of `u^(1-alpha) / (1-alpha)`,
/// which reduces to `u^(-alpha)` when both cells agree.
fn face_mobility(alpha: f64, a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi <= 0.0 {
        return 0.0;
    }
    if hi - lo <= 1e-12 * hi {
        return (0.5 * (lo + hi)).powf(-alpha);
    }
    let e = 1.0 - alpha;
    (hi.powf(e) - lo.max(0.0).powf(e)) / (e * (hi - lo))
}

/// Discrete dissipation `sum_f |grad u|^2 m_f vol` with `m_f` the face mobility above.
pub fn dissipation(alpha: f64, u: &MeasureField) -> f64 {
    let g = &u.grid;
    let grad = crate::oracles::face_gradient(g, &u.values);
    let mut acc = 0.0;
    for i in 0..g.nx {
        for j in 0..g.ny {
            let c = g.cell_index(i, j);
            for (ax, gr) in grad.iter().enumerate() {
                let (along, n, step) = if ax == 0 { (i, g.nx, g.ny) } else { (j, g.ny, 1) };
                if along + 1 < n {
                    let (_, f) = g.cell_faces(ax, i, j);
                    acc += gr[f] * gr[f] * face_mobility(alpha, u.values[c], u.values[c + step]);
                }
            }
        }
    }
    acc * g.vol()
}

/// Heat-flow pair: two wide interior bumps over a uniform background.
pub fn heat_pair(grid: &SpaceGrid) -> Result<(MeasureField, MeasureField, MeasureField)> {
    let bg = uniform(grid)?.scaled(0.5);
    let a = bump(grid, [0.4, 0.5], 0.3)?.plus(&bg).normalized(1.0);
    let b = bump(grid, [0.6, 0.5], 0.35)?.plus(&bg).normalized(1.0);
    let sigma = bump(grid, [0.5, 0.5], 0.45)?.plus(&bg).normalized(1.0);
    Ok((a, b, sigma))
}

/// Contraction, energy identity and EVI along `steps` implicit heat steps of size `tau`.
pub fn check_heat_flow(seed: u64, cfg: &ExperimentConfig, tau: f64, steps: usize) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    if params.p != 2.0 || !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(WotError::Params("heat checks need p = 2 and alpha in (0, 1)".into()));
    }
    let alpha = params.alpha;
    let grid = cfg.grid_1d()?;
    let (mut a, mut b, sigma) = heat_pair(&grid.space)?;
    let mut s = Solves::new(cfg, params, grid.clone());
    let psi_sigma = entropy(alpha, &sigma)?;
    let mut w_ab = s.dist("ab0", &a, &b)?;
    let mut w_as = s.dist("as0", &a, &sigma)?;
    let mut contraction = (f64::NEG_INFINITY, 0.0);
    let mut energy: f64 = 0.0;
    let mut evi = (f64::NEG_INFINITY, psi_sigma);
    for k in 1..=steps {
        let (na, nb) = (heat_step(&a, tau)?, heat_step(&b, tau)?);
        let nw_ab = s.dist(&format!("ab{k}"), &na, &nb)?;
        let nw_as = s.dist(&format!("as{k}"), &na, &sigma)?;
        if nw_ab - w_ab > contraction.0 - contraction.1 {
            contraction = (nw_ab, w_ab);
        }
        let (psi_old, psi_new) = (entropy(alpha, &a)?, entropy(alpha, &na)?);
        let mid = a.lerp(&na, 0.5);
        let diss = tau * dissipation(alpha, &mid);
        if diss > 0.0 {
            energy = energy.max(((psi_new - psi_old) + diss).abs() / diss);
        }
        let lhs = (nw_as.powi(2) - w_as.powi(2)) / (2.0 * tau) + psi_new;
        if lhs > evi.0 {
            evi = (lhs, psi_sigma);
        }
        a = na;
        b = nb;
        w_ab = nw_ab;
        w_as = nw_as;
    }
    let inst = |note: String| instance(seed, &grid, &params, &note);
    let ab: Vec<String> = (0..=steps).map(|k| format!("ab{k}")).collect();
    let asg: Vec<String> = (0..=steps).map(|k| format!("as{k}")).collect();
    let ab_refs: Vec<&str> = ab.iter().map(|x| x.as_str()).collect();
    let as_refs: Vec<&str> = asg.iter().map(|x| x.as_str()).collect();
    Ok(vec![
        CheckRecord::new(
            "heat/contraction",
            inst(format!("worst of {steps} steps, tau = {tau}: W(S m0, S m1) <= W(m0, m1) + 3 tol")),
            contraction.0,
            contraction.1,
            0.0,
            s.slack(contraction.1, 3.0),
            s.take(&ab_refs),
        ),
        CheckRecord::new(
            "heat/energy-identity",
            inst(format!("worst of {steps} steps: |dPsi + tau Phi| / (tau Phi) <= 5%")),
            energy,
            0.05,
            0.0,
            0.0,
            Vec::new(),
        ),
        CheckRecord::new(
            "heat/evi",
            inst(format!("worst of {steps} steps: dW^2/(2 tau) + Psi(m_t) <= Psi(sigma) + 10%")),
            evi.0,
            evi.1,
            0.0,
            0.1 * psi_sigma.abs(),
            s.take(&as_refs),
        ),
    ])
}

/// Velocity `v = b / a^alpha` at centered nodes where `a > eps`, with `j_p(v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalVelocity {
    /// `nt * ncells` densities at centered nodes.
    pub density: Vec<f64>,
    /// `j_p(v)` per axis, `None` where the density is below the threshold.
    pub jp: Vec<Vec<Option<f64>>>,
    pub threshold: f64,
}

impl OptimalVelocity {
    pub fn from_result(result: &GeodesicResult, eps: f64) -> Self {
        let g = &result.grid;
        let s = &g.space;
        let n = s.ncells();
        let (p, alpha) = (result.params.p, result.params.alpha);
        let mut density = vec![0.0; g.nt * n];
        let mut jp = vec![vec![None; g.nt * n]; s.dim];
        for k in 0..g.nt {
            for i in 0..s.nx {
                for j in 0..s.ny {
                    let c = s.cell_index(i, j);
                    let a = 0.5 * (result.densities[k][c] + result.densities[k + 1][c]);
                    density[k * n + c] = a;
                    if a <= eps {
                        continue;
                    }
                    let mut v = [0.0; 2];
                    for (ax, vv) in v.iter_mut().enumerate().take(s.dim) {
                        let nf = s.nfaces(ax);
                        let (lo, hi) = s.cell_faces(ax, i, j);
                        let m = &result.momenta[ax][k * nf..(k + 1) * nf];
                        *vv = 0.5 * (m[lo] + m[hi]) / a.powf(alpha);
                    }
                    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
                    let scale = if norm > 0.0 { norm.powf(p - 2.0) } else { 0.0 };
                    for ax in 0..s.dim {
                        jp[ax][k * n + c] = Some(scale * v[ax]);
                    }
                }
            }
        }
        OptimalVelocity {
            density,
            jp,
            threshold: eps,
        }
    }

    /// `h(rho)`-weighted L2 norms of the discrete curl of `j_p(v)` and of `j_p(v)`
    /// over dual plaquettes whose four corners are above the threshold.
    pub fn curl_and_norm(&self, grid: &GridSpec, alpha: f64) -> Result<(f64, f64, usize)> {
        let s = &grid.space;
        if s.dim != 2 {
            return Err(WotError::Precondition("curl diagnostic needs a 2D grid".into()));
        }
        let n = s.ncells();
        let (dx, dy) = (s.dx(), s.dy());
        let (mut curl, mut norm, mut count) = (0.0, 0.0, 0usize);
        for k in 0..grid.nt {
            for i in 0..s.nx - 1 {
                for j in 0..s.ny - 1 {
                    let cells = [
                        s.cell_index(i, j),
                        s.cell_index(i + 1, j),
                        s.cell_index(i, j + 1),
                        s.cell_index(i + 1, j + 1),
                    ];
                    let get = |ax: usize, c: usize| self.jp[ax][k * n + c];
                    let vals: Option<Vec<[f64; 2]>> = cells
                        .iter()
                        .map(|&c| Some([get(0, c)?, get(1, c)?]))
                        .collect();
                    let Some(v) = vals else { continue };
                    let [c00, c10, c01, c11] = [v[0], v[1], v[2], v[3]];
                    let dvy_dx = 0.5 * ((c10[1] - c00[1]) + (c11[1] - c01[1])) / dx;
                    let dvx_dy = 0.5 * ((c01[0] - c00[0]) + (c11[0] - c10[0])) / dy;
                    let rho = cells.iter().map(|&c| self.density[k * n + c]).sum::<f64>() / 4.0;
                    let h = rho.powf(alpha);
                    curl += h * (dvy_dx - dvx_dy).powi(2);
                    norm += h * v.iter().map(|c| c[0] * c[0] + c[1] * c[1]).sum::<f64>() / 4.0;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(WotError::Precondition("no plaquette above the density threshold".into()));
        }
        let w = s.vol() * grid.dt();
        Ok(((curl * w).sqrt(), (norm * w).sqrt(), count))
    }
}

/// Weighted curl of `j_p(v)` must stay below 10% of the weighted norm of `j_p(v)`.
pub fn check_gradient_structure(result: &GeodesicResult, eps_v: Option<f64>, seed: u64, note: &str) -> Result<CheckRecord> {
    let max_density = result.densities.iter().flatten().fold(0.0f64, |a, b| a.max(*b));
    let eps = eps_v.unwrap_or(1e-6 * max_density);
    let vel = OptimalVelocity::from_result(result, eps);
    let (curl, norm, count) = vel.curl_and_norm(&result.grid, result.params.alpha)?;
    let ratio = if norm > 0.0 { curl / norm } else { 0.0 };
    Ok(CheckRecord::new(
        "gradient2d/curl-ratio",
        instance(seed, &result.grid, &result.params, &format!("{note}; {count} plaquettes, eps_v = {eps:e}")),
        ratio,
        0.1,
        0.0,
        0.0,
        vec![SolveDiagnostics {
            label: "geodesic".into(),
            distance: result.distance,
            iterations: result.iterations,
            converged: result.converged,
        }],
    ))
}

/// Concentric radial pair on the unit square.
pub fn radial_pair(grid: &SpaceGrid) -> Result<(MeasureField, MeasureField)> {
    Ok((bump(grid, [0.5, 0.5], 0.18)?, bump(grid, [0.5, 0.5], 0.36)?))
}

fn gradient_benchmark(seed: u64, cfg: &ExperimentConfig) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    let grid = cfg.grid_2d()?;
    let (a, b) = radial_pair(&grid.space)?;
    let r = solve_distance(&a, &b, &ReferenceMeasure::lebesgue(&grid.space), &params, &grid, &cfg.solver)?;
    let note = "concentric radial expansion";
    let mut records = vec![check_gradient_structure(&r, None, seed, note)?];
    records.extend(check_geodesic_properties(&r, seed, note)?);
    Ok(records)
}

/// `W_(gamma * k)(m0 * k, m1 * k) <= W_gamma(m0, m1)` for `applications` rounds
/// of the 3-tap kernel; one record per consecutive pair in the chain.
pub fn check_convolution_monotonicity(
    mu0: &MeasureField,
    mu1: &MeasureField,
    gamma: &MeasureField,
    params: &ActionParams,
    grid: &GridSpec,
    applications: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<CheckRecord>> {
    let mut s = Solves::new(cfg, *params, grid.clone());
    let (mut a, mut b, mut g) = (mu0.clone(), mu1.clone(), gamma.clone());
    let mut dists = Vec::with_capacity(applications + 1);
    for k in 0..=applications {
        let reference = ReferenceMeasure::custom(&grid.space, g.values.clone())?;
        dists.push(s.dist_with(&format!("k{k}"), &a, &b, &reference)?);
        a = smooth3(&a);
        b = smooth3(&b);
        g = smooth3(&g);
    }
    Ok((1..=applications)
        .map(|k| {
            let labels = [format!("k{}", k - 1), format!("k{k}")];
            let refs: Vec<&str> = labels.iter().map(|x| x.as_str()).collect();
            CheckRecord::new(
                "convolution/monotone",
                instance(seed, grid, params, &format!("{k} vs {} applications of [1/4, 1/2, 1/4]", k - 1)),
                dists[k],
                dists[k - 1],
                0.0,
                s.slack(dists[k - 1], 3.0),
                s.take(&refs),
            )
        })
        .collect())
}

fn convolution_benchmark(seed: u64, cfg: &ExperimentConfig) -> Result<Vec<CheckRecord>> {
    let params = cfg.params()?;
    let grid = cfg.grid_1d()?;
    let (a, b) = translate_pair(&grid.space, 0.25, 0.15)?;
    let gamma = MeasureField::from_fn(grid.space.clone(), |_| 1.0)?;
    check_convolution_monotonicity(&a, &b, &gamma, &params, &grid, 2, seed, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_pass_rule() {
        let inst = Instance {
            seed: 0,
            grid: String::new(),
            p: 2.0,
            alpha: 1.0,
            note: String::new(),
        };
        let r = CheckRecord::new("x", inst.clone(), 1.05, 1.0, 0.05, 0.0, vec![]);
        assert!(r.pass);
        assert!((r.slack_consumed - 1.0).abs() < 1e-9);
        let r = CheckRecord::new("x", inst.clone(), 1.06, 1.0, 0.05, 0.0, vec![]);
        assert!(!r.pass && r.margin < 0.0);
        let diag = SolveDiagnostics {
            label: "a".into(),
            distance: 0.0,
            iterations: 5,
            converged: false,
        };
        let r = CheckRecord::new("x", inst, 0.0, 1.0, 0.0, 0.0, vec![diag]);
        assert!(r.inconclusive && !r.pass);
        let suite = SuiteReport::from_records("s", vec![r]);
        assert!(!suite.pass);
    }

    #[test]
    fn smoothing_preserves_mass_and_constants() {
        let s = SpaceGrid::new_2d(7, 5, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let u = MeasureField::from_fn(s.clone(), |_| 3.0).unwrap();
        assert!(smooth3(&u).values.iter().all(|v| (v - 3.0).abs() < 1e-14));
        let b = bump(&s, [0.3, 0.6], 0.3).unwrap();
        assert!((smooth3(&b).mass() - b.mass()).abs() < 1e-14);
    }

    #[test]
    fn instances_have_unit_mass() {
        let s = SpaceGrid::new_1d(48, (0.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert!((random_smooth(&mut rng, &s).unwrap().mass() - 1.0).abs() < 1e-12);
        }
        let (a, b) = comparison_pair(&s).unwrap();
        assert!((a.mass() - 1.0).abs() < 1e-12 && (b.mass() - 1.0).abs() < 1e-12);
        assert!(a.min_value() > 0.0);
    }

    #[test]
    fn comparison_constant_spot_value() {
        let params = ActionParams::new(2.0, 0.5).unwrap();
        let l: f64 = 0.5;
        let w = [0.7];
        let phi = crate::action::phi_eval(&params, l, &w);
        assert!((phi - l.powf(-0.5) * 0.49).abs() < 1e-14);
        assert!((l.powf(-0.25) - 1.189_207_115).abs() < 1e-9);
    }

    #[test]
    fn entropy_dispatch() {
        let s = SpaceGrid::new_1d(4, (0.0, 1.0)).unwrap();
        let mu = MeasureField::new(s, vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        assert!((entropy(1.0, &mu).unwrap() - 2.0_f64.ln()).abs() < 1e-14);
        // u^(3/2) / (3/2 * 1/2) = 2^(3/2) / 0.75 on half the box.
        assert!((entropy(0.5, &mu).unwrap() - 0.5 * 2.0_f64.powf(1.5) / 0.75).abs() < 1e-12);
    }

    #[test]
    fn unknown_suite_is_rejected() {
        let err = run_suite("nope", 1, &ExperimentConfig::default()).unwrap_err();
        assert!(err.to_string().contains("metric"));
    }

    #[test]
    fn dissipation_of_constant_is_zero() {
        let s = SpaceGrid::new_1d(10, (0.0, 1.0)).unwrap();
        assert_eq!(dissipation(0.5, &uniform(&s).unwrap()), 0.0);
    }
}
