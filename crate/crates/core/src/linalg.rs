//! Matrix-free Krylov and fast-transform kernels.

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WotError};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradient for a symmetric positive (semi)definite
/// operator. `x` holds the initial guess on entry and the solution on exit.
/// Stops once `|b - A x| <= tol * |b|`.
pub fn conjugate_gradient(
    apply: impl FnMut(&[f64], &mut [f64]),
    precond: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    conjugate_gradient_scaled(apply, precond, b, x, tol, max_iter, 0.0)
}

/// As [`conjugate_gradient`], measuring residuals against `max(|b|, scale)`.
/// A warm start worse than zero is discarded.
pub fn conjugate_gradient_scaled(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    scale: f64,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = norm(b).max(scale);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    if norm(&r) > norm(b) {
        x.iter_mut().for_each(|v| *v = 0.0);
        r.copy_from_slice(b);
    }
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: res,
        });
    }
    let mut z = vec![0.0; n];
    match precond.as_mut() {
        Some(m) => m(&r, &mut z),
        None => z.copy_from_slice(&r),
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(WotError::CgStagnation {
                iterations: it,
                residual: res,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(CgOutcome {
                iterations: it,
                relative_residual: res,
            });
        }
        match precond.as_mut() {
            Some(m) => m(&r, &mut z),
            None => z.copy_from_slice(&r),
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(WotError::CgStagnation {
        iterations: max_iter,
        residual: res,
    })
}

/// Thomas factorisation of the constant tridiagonal matrix `tridiag(off, diag, off)`.
#[derive(Clone, Debug)]
pub(crate) struct ConstTridiag {
    off: f64,
    cprime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl ConstTridiag {
    pub fn new(n: usize, off: f64, diag: f64) -> Self {
        let mut cprime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let denom = diag - off * prev;
            inv_denom[i] = 1.0 / denom;
            cprime[i] = off / denom;
            prev = cprime[i];
        }
        ConstTridiag { off, cprime, inv_denom }
    }

    pub fn len(&self) -> usize {
        self.cprime.len()
    }

    /// Solves in place for the entries `data[start + i * stride]`, `i < len`.
    pub fn solve_strided(&self, data: &mut [f64], start: usize, stride: usize) {
        let n = self.len();
        if n == 0 {
            return;
        }
        let mut prev = 0.0;
        for i in 0..n {
            let idx = start + i * stride;
            let v = (data[idx] - self.off * prev) * self.inv_denom[i];
            data[idx] = v;
            prev = v;
        }
        for i in (0..n - 1).rev() {
            let idx = start + i * stride;
            data[idx] -= self.cprime[i] * data[idx + stride];
        }
    }
}

/// Solves `(shift + L) x = b` on a tensor grid where `L` is the sum over axes of
/// the negative Neumann second difference (cell-centred, spacing `h`).
/// With `shift == 0` the constant mode is projected out (pseudo-inverse).
pub struct NeumannSolver {
    dims: Vec<usize>,
    plans: Vec<Arc<dyn TransformType2And3<f64>>>,
    eig: Vec<Vec<f64>>,
    scale: f64,
    shift: f64,
}

impl NeumannSolver {
    /// `axes` lists `(points, spacing)` from the outermost axis to the innermost.
    pub fn new(axes: &[(usize, f64)], shift: f64) -> Self {
        let mut planner = DctPlanner::new();
        let dims: Vec<usize> = axes.iter().map(|a| a.0).collect();
        let plans = dims.iter().map(|&n| planner.plan_dct2(n)).collect();
        let eig = axes
            .iter()
            .map(|&(n, h)| {
                (0..n)
                    .map(|k| {
                        let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
                        4.0 * s * s / (h * h)
                    })
                    .collect()
            })
            .collect();
        let scale = dims.iter().map(|&n| 2.0 / n as f64).product();
        NeumannSolver {
            dims,
            plans,
            eig,
            scale,
            shift,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn transform(&self, data: &mut [f64], forward: bool) {
        let total = self.len();
        let mut line = Vec::new();
        for (ax, &n) in self.dims.iter().enumerate() {
            let stride: usize = self.dims[ax + 1..].iter().product();
            let outer = total / (n * stride);
            line.resize(n, 0.0);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for i in 0..n {
                        line[i] = data[base + i * stride];
                    }
                    if forward {
                        self.plans[ax].process_dct2(&mut line);
                    } else {
                        self.plans[ax].process_dct3(&mut line);
                    }
                    for i in 0..n {
                        data[base + i * stride] = line[i];
                    }
                }
            }
        }
    }

    pub fn solve_in_place(&self, data: &mut [f64]) {
        self.transform(data, true);
        let total = self.len();
        let mut idx = vec![0usize; self.dims.len()];
        for v in data.iter_mut().take(total) {
            let lam: f64 = self.shift + idx.iter().zip(&self.eig).map(|(&k, e)| e[k]).sum::<f64>();
            if lam == 0.0 {
                *v = 0.0;
            } else {
                *v /= lam;
            }
            for a in (0..idx.len()).rev() {
                idx[a] += 1;
                if idx[a] < self.dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        self.transform(data, false);
        data.iter_mut().for_each(|v| *v *= self.scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Applies `shift + L` directly with the Neumann stencil.
    fn apply_neumann(dims: &[(usize, f64)], shift: f64, x: &[f64]) -> Vec<f64> {
        let total: usize = dims.iter().map(|d| d.0).product();
        let mut out: Vec<f64> = x.iter().map(|v| shift * v).collect();
        for (ax, &(n, h)) in dims.iter().enumerate() {
            let stride: usize = dims[ax + 1..].iter().map(|d| d.0).product();
            for idx in 0..total {
                let i = (idx / stride) % n;
                let mut acc = 0.0;
                if i > 0 {
                    acc += x[idx] - x[idx - stride];
                }
                if i + 1 < n {
                    acc += x[idx] - x[idx + stride];
                }
                out[idx] += acc / (h * h);
            }
        }
        out
    }

    #[test]
    fn neumann_pseudo_inverse_matches_stencil() {
        let dims = [(5, 0.3), (4, 0.7), (6, 1.1)];
        let total = 5 * 4 * 6;
        let mut b: Vec<f64> = (0..total).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let mean = b.iter().sum::<f64>() / total as f64;
        b.iter_mut().for_each(|v| *v -= mean);
        let solver = NeumannSolver::new(&dims, 0.0);
        let mut x = b.clone();
        solver.solve_in_place(&mut x);
        let back = apply_neumann(&dims, 0.0, &x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn shifted_neumann_solve() {
        let dims = [(7, 0.1)];
        let b: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let solver = NeumannSolver::new(&dims, 2.5);
        let mut x = b.clone();
        solver.solve_in_place(&mut x);
        let back = apply_neumann(&dims, 2.5, &x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let t = ConstTridiag::new(n, 0.25, 1.5);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut data = vec![0.0; 2 * n];
        for i in 0..n {
            let mut v = 1.5 * x[i];
            if i > 0 {
                v += 0.25 * x[i - 1];
            }
            if i + 1 < n {
                v += 0.25 * x[i + 1];
            }
            data[1 + 2 * i] = v;
        }
        t.solve_strided(&mut data, 1, 2);
        for i in 0..n {
            assert!((data[1 + 2 * i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 30;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = 3.0 * x[i];
                if i > 0 {
                    y[i] -= x[i - 1];
                }
                if i + 1 < n {
                    y[i] -= x[i + 1];
                }
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut x = vec![0.0; n];
        let out = conjugate_gradient(apply, None, &b, &mut x, 1e-12, 200).unwrap();
        assert!(out.relative_residual <= 1e-12);
        let mut y = vec![0.0; n];
        apply(&x, &mut y);
        for i in 0..n {
            assert!((y[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_reports_stagnation() {
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                y[i] = (i as f64 + 1.0) * x[i];
            }
        };
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let err = conjugate_gradient(apply, None, &b, &mut x, 1e-14, 3).unwrap_err();
        assert!(matches!(err, WotError::CgStagnation { iterations: 3, .. }));
    }
}
