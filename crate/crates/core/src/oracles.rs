//! Reference computations independent of the splitting solver.

use serde::{Deserialize, Serialize};

use crate::action::{weighted_phi, ActionParams};
use crate::error::{Result, WotError};
use crate::grid::{MeasureField, SpaceGrid};
use crate::linalg::{conjugate_gradient, CgOutcome};

/// Quadrature nodes used by [`wasserstein_1d`].
pub const QUANTILE_NODES: usize = 20_000;

/// Inverse distribution function of a 1D piecewise-constant density.
#[derive(Clone, Debug)]
pub struct QuantileTable {
    /// Left edge of each cell.
    edges: Vec<f64>,
    dx: f64,
    /// Normalized cumulative mass at each left edge, plus the total (1).
    cumulative: Vec<f64>,
}

impl QuantileTable {
    pub fn new(mu: &MeasureField) -> Result<Self> {
        if mu.grid.dim != 1 {
            return Err(WotError::Precondition("quantile table needs a 1D measure".into()));
        }
        let total: f64 = mu.values.iter().sum();
        if !(total > 0.0) {
            return Err(WotError::Precondition("quantile table needs positive mass".into()));
        }
        let mut cumulative = Vec::with_capacity(mu.values.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for v in &mu.values {
            acc += v;
            cumulative.push(acc / total);
        }
        let dx = mu.grid.dx();
        let x0 = mu.grid.x_extent.0;
        Ok(QuantileTable {
            edges: (0..mu.values.len()).map(|i| x0 + i as f64 * dx).collect(),
            dx,
            cumulative,
        })
    }

    /// `F(x)`, the cumulative mass left of `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.edges.len();
        let t = (x - self.edges[0]) / self.dx;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= n as f64 {
            return 1.0;
        }
        let i = t.floor() as usize;
        let frac = t - i as f64;
        self.cumulative[i] + frac * (self.cumulative[i + 1] - self.cumulative[i])
    }

    /// Generalized inverse `inf {x : F(x) >= s}` for `s` in `(0, 1)`.
    pub fn inverse(&self, s: f64) -> f64 {
        let n = self.edges.len();
        // First cell whose upper cumulative value reaches s.
        let i = self.cumulative[1..].partition_point(|&c| c < s).min(n - 1);
        let lo = self.cumulative[i];
        let m = self.cumulative[i + 1] - lo;
        let frac = if m > 0.0 { ((s - lo) / m).clamp(0.0, 1.0) } else { 0.0 };
        self.edges[i] + frac * self.dx
    }
}

/// `W_p` between two 1D measures of equal mass through the quantile formula,
/// normalized to probability measures.
pub fn wasserstein_1d(mu0: &MeasureField, mu1: &MeasureField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(WotError::Params(format!("exponent must be at least 1, got {p}")));
    }
    let (m0, m1) = (mu0.mass(), mu1.mass());
    if (m0 - m1).abs() > 1e-10 * m0.max(m1) {
        return Err(WotError::MassMismatch { mass0: m0, mass1: m1 });
    }
    let (q0, q1) = (QuantileTable::new(mu0)?, QuantileTable::new(mu1)?);
    let n = QUANTILE_NODES;
    let sum: f64 = (0..n)
        .map(|k| {
            let s = (k as f64 + 0.5) / n as f64;
            (q0.inverse(s) - q1.inverse(s)).abs().powf(p)
        })
        .sum();
    Ok((sum / n as f64).powf(1.0 / p))
}

fn neumann_laplacian(grid: &SpaceGrid, u: &[f64], out: &mut [f64]) {
    // out = -Delta_N u
    let (nx, ny) = (grid.nx, grid.ny);
    let (ix2, iy2) = (1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()));
    for i in 0..nx {
        for j in 0..ny {
            let c = i * ny + j;
            let mut acc = 0.0;
            if i > 0 {
                acc += (u[c] - u[c - ny]) * ix2;
            }
            if i + 1 < nx {
                acc += (u[c] - u[c + ny]) * ix2;
            }
            if grid.dim == 2 {
                if j > 0 {
                    acc += (u[c] - u[c - 1]) * iy2;
                }
                if j + 1 < ny {
                    acc += (u[c] - u[c + 1]) * iy2;
                }
            }
            out[c] = acc;
        }
    }
}

/// Face gradient of a cell field; boundary faces carry zero.
pub fn face_gradient(grid: &SpaceGrid, u: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.dim)
        .map(|ax| {
            let mut g = vec![0.0; grid.nfaces(ax)];
            let h = grid.spacing(ax);
            for i in 0..grid.nx {
                for j in 0..grid.ny {
                    let (along, limit) = if ax == 0 { (i, grid.nx) } else { (j, grid.ny) };
                    if along + 1 < limit {
                        let c = grid.cell_index(i, j);
                        let next = if ax == 0 { c + grid.ny } else { c + 1 };
                        let (_, hi) = grid.cell_faces(ax, i, j);
                        g[hi] = (u[next] - u[c]) / h;
                    }
                }
            }
            g
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevDual {
    pub norm: f64,
    /// Zero-mean potential `u` with `-Delta u = rho1 - rho0`.
    pub potential: Vec<f64>,
    /// Optimal flux `grad u` on faces, per axis.
    pub flux: Vec<Vec<f64>>,
    pub cg: CgOutcome,
}

/// Dual Sobolev `H^-1` norm of `mu1 - mu0` relative to Lebesgue measure on the box,
/// through a Neumann Poisson solve.
pub fn sobolev_dual_12(mu0: &MeasureField, mu1: &MeasureField) -> Result<SobolevDual> {
    if mu0.grid != mu1.grid {
        return Err(WotError::Precondition("measures live on different grids".into()));
    }
    let (m0, m1) = (mu0.mass(), mu1.mass());
    if (m0 - m1).abs() > 1e-10 * m0.abs().max(m1.abs()).max(f64::MIN_POSITIVE) {
        return Err(WotError::MassMismatch { mass0: m0, mass1: m1 });
    }
    let grid = &mu0.grid;
    let mut rhs: Vec<f64> = mu1.values.iter().zip(&mu0.values).map(|(a, b)| a - b).collect();
    let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
    rhs.iter_mut().for_each(|v| *v -= mean);
    let mut u = vec![0.0; rhs.len()];
    let cg = conjugate_gradient(
        |x, y| neumann_laplacian(grid, x, y),
        None,
        &rhs,
        &mut u,
        1e-12,
        20 * rhs.len() + 100,
    )?;
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    let flux = face_gradient(grid, &u);
    let vol = grid.vol();
    let norm = flux.iter().flatten().map(|w| w * w).sum::<f64>() * vol;
    Ok(SobolevDual {
        norm: norm.sqrt(),
        potential: u,
        flux,
        cg,
    })
}

/// One implicit Euler step `(I - tau Delta_N) u+ = u` of the Neumann heat equation.
pub fn heat_step(mu: &MeasureField, tau: f64) -> Result<MeasureField> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(WotError::Params(format!("heat step needs tau > 0, got {tau}")));
    }
    let grid = &mu.grid;
    let mut u = mu.values.clone();
    let b = mu.values.as_slice();
    let max_iter = 20 * b.len() + 100;
    conjugate_gradient(
        |x, y| {
            neumann_laplacian(grid, x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi + tau * *yi;
            }
        },
        None,
        b,
        &mut u,
        1e-14,
        max_iter,
    )?;
    // Rounding can leave values a hair below zero where the input vanished.
    u.iter_mut().for_each(|v| *v = v.max(0.0));
    MeasureField::new(grid.clone(), u)
}

/// Search rectangle for [`brute_force_prox`] in the reduced `(rho, |w|)` plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchBox {
    pub rho: (f64, f64),
    pub r: (f64, f64),
}

impl SearchBox {
    /// A box that contains the minimizer for the given prox input.
    pub fn around(params: &ActionParams, gamma_weight: f64, step: f64, rho_bar: f64, w_norm: f64) -> Self {
        let rho_hi = rho_bar.max(0.0) + w_norm + step * params.p * gamma_weight + 1.0;
        SearchBox {
            rho: (0.0, 2.0 * rho_hi),
            r: (0.0, w_norm * 1.5 + 1e-3),
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

fn golden(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // Endpoints of the final bracket are candidates too.
    let mut best = (0.5 * (a + b), f(0.5 * (a + b)));
    for x in [a, b] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Minimizes `step * g phi(rho/g, w/g) + |(rho, w) - (rho_bar, w_bar)|^2 / 2` by
/// exhaustive grid search followed by nested golden-section refinement.
/// The grid pass only certifies that the box holds finite values.
///
/// The momentum is searched along the direction of `w_bar` (the objective is
/// radial in `w`). Edges of the box at zero are natural domain edges; any
/// other edge attaining the minimum is reported as an error.
pub fn brute_force_prox(
    params: &ActionParams,
    gamma_weight: f64,
    step: f64,
    rho_bar: f64,
    w_bar: &[f64],
    search_box: SearchBox,
    resolution: usize,
) -> Result<(f64, Vec<f64>)> {
    if resolution < 3 {
        return Err(WotError::Params("resolution must be at least 3".into()));
    }
    let s = w_bar.iter().map(|v| v * v).sum::<f64>().sqrt();
    let obj = |rho: f64, r: f64| {
        let v = step * weighted_phi(params, gamma_weight, rho, &[r]);
        v + 0.5 * ((rho - rho_bar).powi(2) + (r - s).powi(2))
    };
    let SearchBox { rho: (a0, a1), r: (b0, b1) } = search_box;
    let (ha, hb) = ((a1 - a0) / resolution as f64, (b1 - b0) / resolution as f64);
    let mut best = (0usize, 0usize, f64::INFINITY);
    for i in 0..=resolution {
        for j in 0..=resolution {
            let v = obj(a0 + i as f64 * ha, b0 + j as f64 * hb);
            if v < best.2 {
                best = (i, j, v);
            }
        }
    }
    if !best.2.is_finite() {
        return Err(WotError::SearchBoxBoundary {
            rho: f64::NAN,
            w: f64::NAN,
        });
    }
    // The objective is jointly convex, so the partial minimum over `r` is
    // convex in `rho` and both golden-section searches may span the full box.
    let inner = |rho: f64| golden(|r| obj(rho, r), b0, b1, 1e-13);
    let (rho, _) = golden(|rho| inner(rho).1, a0, a1, 1e-13);
    let (r, _) = inner(rho);
    let at_edge = |x: f64, lo: f64, hi: f64, h: f64| (x - hi).abs() <= h * 1e-6 || (lo != 0.0 && (x - lo).abs() <= h * 1e-6);
    if at_edge(rho, a0, a1, ha) || at_edge(r, b0, b1, hb) {
        return Err(WotError::SearchBoxBoundary { rho, w: r });
    }
    let w = if s > 0.0 {
        w_bar.iter().map(|v| v / s * r).collect()
    } else {
        vec![0.0; w_bar.len()]
    };
    Ok((rho, w))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DilationCurve {
    pub times: Vec<f64>,
    /// `Phi_t^(1/p)` at each sample time.
    pub speed: Vec<f64>,
    pub numeric_length: f64,
    pub closed_form_length: f64,
    /// Least-squares slope of `log Phi_t^(1/p)` against `t`.
    pub fitted_slope: f64,
    /// `1 - d / kappa`.
    pub expected_slope: f64,
}

/// Length of the dilation curve `rho_t(x) = e^(-dt) rho0(e^(-t) x)` with
/// momentum `x rho_t`, measured in the `(p, alpha)` action, by grid
/// quadrature at `samples` evenly spaced times in `[0, t_max]`.
pub fn dilation_curve_length(
    rho0: &dyn Fn([f64; 2]) -> f64,
    grid: &SpaceGrid,
    params: &ActionParams,
    t_max: f64,
    samples: usize,
) -> Result<DilationCurve> {
    let kappa = params
        .kappa()
        .ok_or_else(|| WotError::Params("dilation curve needs alpha < 1".into()))?;
    if !(t_max >= 0.0) || samples < 2 {
        return Err(WotError::Params("need t_max >= 0 and at least two samples".into()));
    }
    let d = grid.dim as f64;
    let p = params.p;
    let centers = grid.centers();
    let vol = grid.vol();
    let boundary: Vec<usize> = (0..grid.nx)
        .flat_map(|i| (0..grid.ny).map(move |j| (i, j)))
        .filter(|&(i, j)| i == 0 || i + 1 == grid.nx || (grid.dim == 2 && (j == 0 || j + 1 == grid.ny)))
        .map(|(i, j)| grid.cell_index(i, j))
        .collect();
    let action_at = |t: f64| -> Result<f64> {
        let scale = (-t).exp();
        let jac = (-d * t).exp();
        let rho_t = |x: [f64; 2]| jac * rho0([x[0] * scale, x[1] * scale]);
        if boundary.iter().any(|&c| rho_t(centers[c]) > 0.0) {
            return Err(WotError::Precondition(format!("dilated profile leaves the box at t = {t}")));
        }
        let mut acc = 0.0;
        for x in &centers {
            let r = rho_t(*x);
            if r > 0.0 {
                let y = if grid.dim == 2 { x[1] } else { 0.0 };
                let w = [x[0] * r, y * r];
                acc += weighted_phi(params, 1.0, r, &w[..grid.dim]);
            }
        }
        Ok(acc * vol)
    };
    let times: Vec<f64> = (0..samples).map(|k| t_max * k as f64 / (samples - 1) as f64).collect();
    let speed = times
        .iter()
        .map(|&t| action_at(t).map(|a| a.powf(1.0 / p)))
        .collect::<Result<Vec<_>>>()?;
    let h = t_max / (samples - 1) as f64;
    let numeric_length = if samples % 2 == 1 {
        // Composite Simpson.
        let mut acc = speed[0] + speed[samples - 1];
        for (k, v) in speed.iter().enumerate().take(samples - 1).skip(1) {
            acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        acc * h / 3.0
    } else {
        speed.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum()
    };
    let expected_slope = 1.0 - d / kappa;
    let c = speed[0];
    let closed_form_length = if expected_slope.abs() < 1e-14 {
        c * t_max
    } else {
        c * ((expected_slope * t_max).exp() - 1.0) / expected_slope
    };
    let fitted_slope = if t_max > 0.0 && speed.iter().all(|v| *v > 0.0) {
        let logs: Vec<f64> = speed.iter().map(|v| v.ln()).collect();
        let mt = times.iter().sum::<f64>() / samples as f64;
        let ml = logs.iter().sum::<f64>() / samples as f64;
        let num: f64 = times.iter().zip(&logs).map(|(t, l)| (t - mt) * (l - ml)).sum();
        let den: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
        num / den
    } else {
        f64::NAN
    };
    Ok(DilationCurve {
        times,
        speed,
        numeric_length,
        closed_form_length,
        fitted_slope,
        expected_slope,
    })
}
