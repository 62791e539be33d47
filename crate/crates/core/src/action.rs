//! Action densities `phi(rho, w) = rho^(theta - p) |w|^p` with mobility
//! `h(rho) = rho^alpha`, their duals and recession functions, the pointwise
//! proximal map used by the splitting solver, and the entropy and moment
//! functionals evaluated on grid measures.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WotError};
use crate::grid::{MeasureField, SpaceGrid};

/// Exponents of the action density.
///
/// Only `p` and `alpha` are stored; `q`, `theta` and `kappa` are derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionParams {
    pub p: f64,
    pub alpha: f64,
}

impl ActionParams {
    pub fn new(p: f64, alpha: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(WotError::Params(format!("p must be > 1, got {p}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(WotError::Params(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(ActionParams { p, alpha })
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Joint homogeneity degree `(1 - alpha) p + alpha`.
    pub fn theta(&self) -> f64 {
        (1.0 - self.alpha) * self.p + self.alpha
    }

    /// `p / (theta - 1)`; absent when `alpha == 1`.
    pub fn kappa(&self) -> Option<f64> {
        if self.alpha < 1.0 {
            Some(self.q() / (1.0 - self.alpha))
        } else {
            None
        }
    }

    pub fn kappa_star(&self) -> Option<f64> {
        self.kappa().map(|k| k / (k - 1.0))
    }

    fn rho_exponent(&self) -> f64 {
        self.theta() - self.p
    }
}

fn norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `phi(rho, w)`, extended by lower semicontinuity to `rho = 0` and by `+inf` to `rho < 0`.
pub fn phi_eval(params: &ActionParams, rho: f64, w: &[f64]) -> f64 {
    if rho < 0.0 {
        return f64::INFINITY;
    }
    let wn = norm(w);
    if wn == 0.0 {
        return 0.0;
    }
    if params.alpha == 0.0 {
        return wn.powf(params.p);
    }
    if rho == 0.0 {
        return f64::INFINITY;
    }
    rho.powf(params.rho_exponent()) * wn.powf(params.p)
}

/// Partial Legendre transform in the momentum: `rho^alpha |z|^q`.
pub fn phi_dual_eval(params: &ActionParams, rho: f64, z: &[f64]) -> f64 {
    let rho = rho.max(0.0);
    let h = if params.alpha == 0.0 { 1.0 } else { rho.powf(params.alpha) };
    h * norm(z).powf(params.q())
}

/// Recession function `lim_{l -> inf} phi(l rho, l w) / l`.
pub fn phi_recession(params: &ActionParams, rho: f64, w: &[f64]) -> f64 {
    let wn = norm(w);
    if wn == 0.0 {
        return 0.0;
    }
    if params.alpha < 1.0 || rho <= 0.0 {
        return f64::INFINITY;
    }
    wn.powf(params.p) / rho.powf(params.p - 1.0)
}

/// Weighted integrand `g * phi(rho / g, w / g)` of the action functional.
pub fn weighted_phi(params: &ActionParams, gamma_weight: f64, rho: f64, w: &[f64]) -> f64 {
    let scaled: Vec<f64> = w.iter().map(|v| v / gamma_weight).collect();
    gamma_weight * phi_eval(params, rho / gamma_weight, &scaled)
}

const MAX_NEWTON: usize = 100;
const MAX_BISECT: usize = 2000;

/// Root of an increasing function on `(lo, hi)` with `f(lo) < 0 < f(hi)`.
///
/// Newton steps from `x0` are accepted only when they stay inside the current
/// bracket; otherwise the bracket is bisected (geometrically once it spans
/// several orders of magnitude). Returns `None` if the bracket stops shrinking.
fn solve_increasing(
    mut f: impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
) -> Option<f64> {
    let mut x = if x0 > lo && x0 < hi { x0 } else { midpoint(lo, hi) };
    for it in 0..(MAX_NEWTON + MAX_BISECT) {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return None;
        }
        if fx == 0.0 {
            return Some(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Some(0.5 * (lo + hi));
        }
        let newton = x - fx / dfx;
        if it < MAX_NEWTON && dfx > 0.0 && (newton - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            return Some(newton.clamp(lo, hi));
        }
        x = if it < MAX_NEWTON && dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            midpoint(lo, hi)
        };
    }
    None
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 && hi > 8.0 * lo {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

/// Radial part of the momentum prox: solves `r + beta r^(p-1) = s` on `[0, s]`.
fn radial_shrink(p: f64, beta: f64, s: f64) -> Option<f64> {
    if s == 0.0 {
        return Some(0.0);
    }
    if !beta.is_finite() {
        return Some(0.0);
    }
    if p == 2.0 {
        return Some(s / (1.0 + beta));
    }
    let guess = s / (1.0 + beta * s.powf(p - 2.0));
    solve_increasing(
        |r| {
            let rp = r.powf(p - 2.0);
            (r + beta * rp * r - s, 1.0 + beta * (p - 1.0) * rp)
        },
        0.0,
        s,
        guess,
    )
}

/// Prox of `step * phi` at `(x_bar, s)` with the momentum reduced to its norm `s >= 0`.
/// Returns `(rho, |w|)`.
fn prox_unit(params: &ActionParams, step: f64, x_bar: f64, s: f64) -> Option<(f64, f64)> {
    let p = params.p;
    if s == 0.0 {
        return Some((x_bar.max(0.0), 0.0));
    }
    if params.alpha == 0.0 {
        let r = radial_shrink(p, step * p, s)?;
        return Some((x_bar.max(0.0), r));
    }
    let e = params.rho_exponent();
    // For fixed rho the momentum prox is radial; eliminating it leaves a
    // strictly increasing scalar equation in rho:
    //   G(x) = x - x_bar + step * e * x^(e-1) * r(x)^p.
    let r_of = |x: f64| radial_shrink(p, step * p * x.powf(e), s);
    let eval = |x: f64| -> Option<(f64, f64, f64)> {
        let r = r_of(x)?;
        let xe = x.powf(e);
        let rp1 = r.powf(p - 1.0);
        let g = x - x_bar + step * e * xe / x * rp1 * r;
        let f_r = 1.0 + step * p * (p - 1.0) * xe * r.powf(p - 2.0);
        let f_x = step * p * e * xe / x * rp1;
        let dr = if r > 0.0 { -f_x / f_r } else { 0.0 };
        let dg = 1.0 + step * e * (e - 1.0) * xe / (x * x) * rp1 * r + step * e * xe / x * p * rp1 * dr;
        Some((g, dg, r))
    };

    if params.alpha == 1.0 {
        // Perspective case: G(0+) is finite and the prox may sit at the origin.
        let k = (s / (step * p)).powf(1.0 / (p - 1.0));
        let g0 = -x_bar - step * (p - 1.0) * k.powf(p);
        if g0 >= 0.0 {
            return Some((0.0, 0.0));
        }
    }

    // The rho term of G is nonpositive, so the root lies above max(x_bar, 0),
    // where G is negative (or tends to a negative limit at 0).
    let lo = x_bar.max(0.0);
    let mut hi = lo + s + 1.0;
    let mut n = 0;
    while eval(hi)?.0 <= 0.0 {
        hi *= 2.0;
        n += 1;
        if n > 200 {
            return None;
        }
    }
    let x0 = if x_bar > lo && x_bar < hi { x_bar } else { midpoint(lo, hi) };
    let mut failed = false;
    let x = solve_increasing(
        |x| match eval(x) {
            Some((g, dg, _)) => (g, dg),
            None => {
                failed = true;
                (f64::NAN, 1.0)
            }
        },
        lo,
        hi,
        x0,
    )?;
    if failed {
        return None;
    }
    let r = r_of(x)?;
    Some((x, r))
}

/// Proximal map of `f(x, y) = g * phi(x / g, y / g)` with step `step`:
/// the minimizer of `step * f(x, y) + (|x - rho_bar|^2 + |y - w_bar|^2) / 2`.
pub fn prox_phi(
    params: &ActionParams,
    gamma_weight: f64,
    step: f64,
    rho_bar: f64,
    w_bar: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut w = w_bar.to_vec();
    let rho = prox_phi_in_place(params, gamma_weight, step, rho_bar, &mut w)?;
    Ok((rho, w))
}

/// As [`prox_phi`], overwriting the momentum in place.
pub fn prox_phi_in_place(
    params: &ActionParams,
    gamma_weight: f64,
    step: f64,
    rho_bar: f64,
    w: &mut [f64],
) -> Result<f64> {
    let s = norm(w);
    let g = gamma_weight;
    let fail = || WotError::ProxBracket {
        rho_bar,
        w_norm: s,
        step,
        gamma_weight,
    };
    if !(step > 0.0) || !(g > 0.0) || !rho_bar.is_finite() || !s.is_finite() {
        return Err(fail());
    }
    let (x, r) = prox_unit(params, step / g, rho_bar / g, s / g).ok_or_else(fail)?;
    if s > 0.0 {
        let f = g * r / s;
        w.iter_mut().for_each(|v| *v *= f);
    }
    Ok(g * x)
}

/// Density of the reference measure with respect to Lebesgue measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReferenceKind {
    Lebesgue,
    Gibbs,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeasure {
    pub kind: ReferenceKind,
    pub g: Vec<f64>,
    pub g_min: f64,
}

pub const DEFAULT_G_MIN: f64 = 1e-12;

impl ReferenceMeasure {
    pub fn lebesgue(grid: &SpaceGrid) -> Self {
        ReferenceMeasure {
            kind: ReferenceKind::Lebesgue,
            g: vec![1.0; grid.ncells()],
            g_min: DEFAULT_G_MIN,
        }
    }

    /// `g = exp(-V)` from potential values per cell, floored at `g_min`.
    pub fn gibbs(grid: &SpaceGrid, potential: &[f64]) -> Result<Self> {
        if potential.len() != grid.ncells() {
            return Err(WotError::Shape {
                what: "potential",
                expected: grid.ncells(),
                got: potential.len(),
            });
        }
        Ok(ReferenceMeasure {
            kind: ReferenceKind::Gibbs,
            g: potential.iter().map(|v| (-v).exp().max(DEFAULT_G_MIN)).collect(),
            g_min: DEFAULT_G_MIN,
        })
    }

    /// Arbitrary strictly positive density values.
    pub fn custom(grid: &SpaceGrid, g: Vec<f64>) -> Result<Self> {
        if g.len() != grid.ncells() {
            return Err(WotError::Shape {
                what: "reference density",
                expected: grid.ncells(),
                got: g.len(),
            });
        }
        if let Some(i) = g.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(WotError::Precondition(format!(
                "reference density must be strictly positive, got {} at index {i}",
                g[i]
            )));
        }
        Ok(ReferenceMeasure {
            kind: ReferenceKind::Custom,
            g: g.into_iter().map(|v| v.max(DEFAULT_G_MIN)).collect(),
            g_min: DEFAULT_G_MIN,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ReferenceMeasure {
            kind: if factor == 1.0 { self.kind.clone() } else { ReferenceKind::Custom },
            g: self.g.iter().map(|v| (v * factor).max(self.g_min)).collect(),
            g_min: self.g_min,
        }
    }

    /// Total mass `gamma(box)`.
    pub fn total_mass(&self, grid: &SpaceGrid) -> f64 {
        self.g.iter().sum::<f64>() * grid.vol()
    }
}

/// `psi_alpha(u) = u^(2 - alpha) / ((2 - alpha)(1 - alpha))`.
pub fn psi_density(alpha: f64, u: f64) -> f64 {
    u.max(0.0).powf(2.0 - alpha) / ((2.0 - alpha) * (1.0 - alpha))
}

/// Entropy `Psi_alpha(mu)` relative to Lebesgue measure.
pub fn entropy_psi(alpha: f64, mu: &MeasureField) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WotError::Params(format!("entropy needs alpha in (0, 1), got {alpha}")));
    }
    Ok(mu.values.iter().map(|&u| psi_density(alpha, u)).sum::<f64>() * mu.grid.vol())
}

/// Moment `sum u(c) * max(1, |x_c|)^r * vol`.
pub fn moment(mu: &MeasureField, r: f64) -> f64 {
    let vol = mu.grid.vol();
    mu.values
        .iter()
        .enumerate()
        .map(|(c, &u)| {
            let [x, y] = mu.grid.cell_center(c);
            u * (x.hypot(y).max(1.0)).powf(r)
        })
        .sum::<f64>()
        * vol
}
