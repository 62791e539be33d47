//! The affine feasible set: discrete continuity equation, endpoint data,
//! zero-flux boundary faces and the staggered-to-centered coupling, together
//! with the Euclidean projection onto it.
//!
//! The projection eliminates the coupling rows exactly. Writing `Q = Id + I*I`
//! for the free staggered unknowns (a constant tridiagonal matrix along time
//! for densities and along each axis for momenta), the multiplier of the
//! continuity rows solves `C Q^-1 C* lambda = C Q^-1 r - rhs`. That system is
//! solved by conjugate gradient preconditioned with the exact inverse of
//! `C C*`, a space-time Neumann Laplacian diagonalised by the DCT.

use crate::error::{Result, WotError};
use crate::grid::{
    divergence_adjoint_add, divergence_into, interpolate_adjoint_into, interpolate_into, CenteredVariables,
    GridSpec, MeasureField, PathVariables, Point,
};
use crate::linalg::{conjugate_gradient_scaled, dot, CgOutcome, ConstTridiag, NeumannSolver};

/// Relative tolerance on the endpoint mass mismatch.
pub const MASS_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub grid: GridSpec,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    boundary_faces: Vec<Vec<usize>>,
}

/// Output of the linear constraint operator, block by block.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintValues {
    /// `(u[k+1] - u[k]) / dt + div m[k]`, `nt * ncells`.
    pub continuity: Vec<f64>,
    /// `u[0]`, `u[nt]`, then the boundary-face momenta per axis and interval.
    pub endpoint: Vec<f64>,
    /// `V - I(U)`.
    pub coupling: CenteredVariables,
}

impl ConstraintValues {
    pub fn dot(&self, other: &ConstraintValues) -> f64 {
        let mut s = dot(&self.continuity, &other.continuity) + dot(&self.endpoint, &other.endpoint);
        s += dot(&self.coupling.a, &other.coupling.a);
        for (a, b) in self.coupling.b.iter().zip(&other.coupling.b) {
            s += dot(a, b);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualNorms {
    pub continuity: f64,
    pub endpoint: f64,
    pub coupling: f64,
}

impl ResidualNorms {
    pub fn max(&self) -> f64 {
        self.continuity.max(self.endpoint).max(self.coupling)
    }
}

impl ConstraintSystem {
    pub fn new(grid: &GridSpec, mu0: &MeasureField, mu1: &MeasureField) -> Result<Self> {
        for mu in [mu0, mu1] {
            if mu.grid != grid.space {
                return Err(WotError::Precondition("endpoint measure grid differs from the solver grid".into()));
            }
        }
        let (m0, m1) = (mu0.mass(), mu1.mass());
        if (m0 - m1).abs() > MASS_TOLERANCE * m0.abs().max(m1.abs()) {
            return Err(WotError::MassMismatch { mass0: m0, mass1: m1 });
        }
        let s = &grid.space;
        let boundary_faces = (0..s.dim)
            .map(|ax| (0..s.nfaces(ax)).filter(|&f| s.is_boundary_face(ax, f)).collect())
            .collect();
        Ok(ConstraintSystem {
            grid: grid.clone(),
            u0: mu0.values.clone(),
            u1: mu1.values.clone(),
            boundary_faces,
        })
    }

    fn endpoint_len(&self) -> usize {
        2 * self.grid.ncells() + self.boundary_faces.iter().map(|b| b.len() * self.grid.nt).sum::<usize>()
    }

    /// The linear part `A X`.
    pub fn apply(&self, x: &Point) -> ConstraintValues {
        let g = &self.grid;
        let n = g.ncells();
        let mut continuity = vec![0.0; g.nt * n];
        continuity_apply(g, &x.path, &mut continuity);
        let mut endpoint = Vec::with_capacity(self.endpoint_len());
        endpoint.extend_from_slice(x.path.slice(g, 0));
        endpoint.extend_from_slice(x.path.slice(g, g.nt));
        for (ax, faces) in self.boundary_faces.iter().enumerate() {
            let nf = g.space.nfaces(ax);
            for k in 0..g.nt {
                endpoint.extend(faces.iter().map(|&f| x.path.m[ax][k * nf + f]));
            }
        }
        let mut coupling = CenteredVariables::zeros(g);
        interpolate_into(&x.path, g, &mut coupling);
        coupling.a.iter_mut().zip(&x.centered.a).for_each(|(c, v)| *c = v - *c);
        for ax in 0..g.dim() {
            coupling.b[ax]
                .iter_mut()
                .zip(&x.centered.b[ax])
                .for_each(|(c, v)| *c = v - *c);
        }
        ConstraintValues {
            continuity,
            endpoint,
            coupling,
        }
    }

    /// The adjoint `A* Lambda`.
    pub fn apply_adjoint(&self, v: &ConstraintValues) -> Point {
        let g = &self.grid;
        let n = g.ncells();
        let mut out = Point::zeros(g);
        interpolate_adjoint_into(&v.coupling, g, &mut out.path);
        out.path.u.iter_mut().for_each(|x| *x = -*x);
        for m in out.path.m.iter_mut() {
            m.iter_mut().for_each(|x| *x = -*x);
        }
        out.centered = v.coupling.clone();
        continuity_adjoint_add(g, &v.continuity, &mut out.path);
        for c in 0..n {
            out.path.u[c] += v.endpoint[c];
            out.path.u[g.nt * n + c] += v.endpoint[n + c];
        }
        let mut off = 2 * n;
        for (ax, faces) in self.boundary_faces.iter().enumerate() {
            let nf = g.space.nfaces(ax);
            for k in 0..g.nt {
                for &f in faces {
                    out.path.m[ax][k * nf + f] += v.endpoint[off];
                    off += 1;
                }
            }
        }
        out
    }

    /// Right-hand side of `A X = rhs`.
    pub fn rhs(&self) -> ConstraintValues {
        let g = &self.grid;
        let mut endpoint = vec![0.0; self.endpoint_len()];
        let n = g.ncells();
        endpoint[..n].copy_from_slice(&self.u0);
        endpoint[n..2 * n].copy_from_slice(&self.u1);
        ConstraintValues {
            continuity: vec![0.0; g.nt * n],
            endpoint,
            coupling: CenteredVariables::zeros(g),
        }
    }

    /// Euclidean norms of the blocks of `A X - rhs`.
    pub fn residual(&self, x: &Point) -> ResidualNorms {
        let mut v = self.apply(x);
        let n = self.grid.ncells();
        for c in 0..n {
            v.endpoint[c] -= self.u0[c];
            v.endpoint[n + c] -= self.u1[c];
        }
        let mut coupling = dot(&v.coupling.a, &v.coupling.a);
        for b in &v.coupling.b {
            coupling += dot(b, b);
        }
        ResidualNorms {
            continuity: dot(&v.continuity, &v.continuity).sqrt(),
            endpoint: dot(&v.endpoint, &v.endpoint).sqrt(),
            coupling: coupling.sqrt(),
        }
    }

    /// Mass of each density slice.
    pub fn slice_masses(&self, path: &PathVariables) -> Vec<f64> {
        let vol = self.grid.space.vol();
        (0..=self.grid.nt)
            .map(|k| path.slice(&self.grid, k).iter().sum::<f64>() * vol)
            .collect()
    }
}

fn continuity_apply(g: &GridSpec, path: &PathVariables, out: &mut [f64]) {
    let n = g.ncells();
    let inv_dt = 1.0 / g.dt();
    let mut div = vec![0.0; n];
    for k in 0..g.nt {
        let ms = path.momenta_at(g, k);
        divergence_into(&ms, &g.space, &mut div);
        let (lo, hi) = (path.slice(g, k), path.slice(g, k + 1));
        for c in 0..n {
            out[k * n + c] = (hi[c] - lo[c]) * inv_dt + div[c];
        }
    }
}

fn continuity_adjoint_add(g: &GridSpec, lambda: &[f64], out: &mut PathVariables) {
    let n = g.ncells();
    let inv_dt = 1.0 / g.dt();
    for k in 0..g.nt {
        let l = &lambda[k * n..(k + 1) * n];
        for c in 0..n {
            out.u[k * n + c] -= l[c] * inv_dt;
            out.u[(k + 1) * n + c] += l[c] * inv_dt;
        }
        for ax in 0..g.dim() {
            let nf = g.space.nfaces(ax);
            divergence_adjoint_add(l, &g.space, ax, &mut out.m[ax][k * nf..(k + 1) * nf]);
        }
    }
}

/// Buffers and warm-start state for repeated projections onto one constraint set.
pub struct ProjectionWorkspace {
    pub tol: f64,
    pub max_iter: usize,
    lambda: Vec<f64>,
    precond: NeumannSolver,
    tri_time: ConstTridiag,
    tri_space: Vec<ConstTridiag>,
    boundary_faces: Vec<Vec<usize>>,
    grid: GridSpec,
    pub last: CgOutcome,
    pub total_cg_iterations: usize,
}

pub const DEFAULT_CG_TOL: f64 = 1e-11;
pub const DEFAULT_CG_MAX_ITER: usize = 500;

impl ProjectionWorkspace {
    pub fn new(grid: &GridSpec, tol: f64, max_iter: usize) -> Self {
        let s = &grid.space;
        let mut axes = vec![(grid.nt, grid.dt()), (s.nx, s.dx())];
        if s.dim == 2 {
            axes.push((s.ny, s.dy()));
        }
        ProjectionWorkspace {
            tol,
            max_iter,
            lambda: vec![0.0; grid.nt * s.ncells()],
            precond: NeumannSolver::new(&axes, 0.0),
            tri_time: ConstTridiag::new(grid.nt - 1, 0.25, 1.5),
            tri_space: (0..s.dim)
                .map(|ax| ConstTridiag::new(s.cells_along(ax) - 1, 0.25, 1.5))
                .collect(),
            boundary_faces: (0..s.dim)
                .map(|ax| (0..s.nfaces(ax)).filter(|&f| s.is_boundary_face(ax, f)).collect())
                .collect(),
            grid: grid.clone(),
            last: CgOutcome {
                iterations: 0,
                relative_residual: 0.0,
            },
            total_cg_iterations: 0,
        }
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.lambda.iter_mut().for_each(|v| *v = 0.0);
    }

    fn zero_fixed(&self, p: &mut PathVariables) {
        let g = &self.grid;
        let n = g.ncells();
        p.u[..n].iter_mut().for_each(|v| *v = 0.0);
        p.u[g.nt * n..].iter_mut().for_each(|v| *v = 0.0);
        for (ax, faces) in self.boundary_faces.iter().enumerate() {
            let nf = g.space.nfaces(ax);
            for k in 0..g.nt {
                for &f in faces {
                    p.m[ax][k * nf + f] = 0.0;
                }
            }
        }
    }

    /// Applies `(Id + I*I)^-1` to the free entries of `p`.
    fn q_inverse(&self, p: &mut PathVariables) {
        let g = &self.grid;
        let s = &g.space;
        let n = s.ncells();
        for c in 0..n {
            self.tri_time.solve_strided(&mut p.u, n + c, n);
        }
        for k in 0..g.nt {
            let nf0 = s.nfaces(0);
            for j in 0..s.ny {
                self.tri_space[0].solve_strided(&mut p.m[0], k * nf0 + s.ny + j, s.ny);
            }
            if s.dim == 2 {
                let nf1 = s.nfaces(1);
                for i in 0..s.nx {
                    self.tri_space[1].solve_strided(&mut p.m[1], k * nf1 + i * (s.ny + 1) + 1, 1);
                }
            }
        }
    }

    fn schur_apply(&self, v: &[f64], out: &mut [f64], scratch: &mut PathVariables) {
        scratch.u.iter_mut().for_each(|x| *x = 0.0);
        scratch.m.iter_mut().for_each(|m| m.iter_mut().for_each(|x| *x = 0.0));
        continuity_adjoint_add(&self.grid, v, scratch);
        self.zero_fixed(scratch);
        self.q_inverse(scratch);
        continuity_apply(&self.grid, scratch, out);
    }

    /// Euclidean projection of `x` onto the feasible set of `sys`.
    pub fn project(&mut self, sys: &ConstraintSystem, x: &Point) -> Result<Point> {
        let mut out = Point::zeros(&sys.grid);
        self.project_into(sys, x, &mut out)?;
        Ok(out)
    }

    pub fn project_into(&mut self, sys: &ConstraintSystem, x: &Point, out: &mut Point) -> Result<CgOutcome> {
        if sys.grid != self.grid {
            return Err(WotError::Precondition("projection workspace built for a different grid".into()));
        }
        x.check_shape(&self.grid)?;
        out.check_shape(&self.grid)?;
        let g = &self.grid;
        let n = g.ncells();
        let nt = g.nt;
        let inv_dt = 1.0 / g.dt();

        // r = U + I*(V) on the free entries, minus the fixed-endpoint coupling terms.
        let r = &mut out.path;
        interpolate_adjoint_into(&x.centered, g, r);
        r.u.iter_mut().zip(&x.path.u).for_each(|(a, b)| *a += b);
        for ax in 0..g.dim() {
            r.m[ax].iter_mut().zip(&x.path.m[ax]).for_each(|(a, b)| *a += b);
        }
        for c in 0..n {
            r.u[n + c] -= 0.25 * sys.u0[c];
            r.u[(nt - 1) * n + c] -= 0.25 * sys.u1[c];
        }
        self.zero_fixed(r);
        self.q_inverse(r);

        let mut rhs = vec![0.0; nt * n];
        continuity_apply(g, r, &mut rhs);
        let scale = (dot(&rhs, &rhs) + (dot(&sys.u0, &sys.u0) + dot(&sys.u1, &sys.u1)) * inv_dt * inv_dt).sqrt();
        for c in 0..n {
            rhs[c] -= sys.u0[c] * inv_dt;
            rhs[(nt - 1) * n + c] += sys.u1[c] * inv_dt;
        }
        let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
        rhs.iter_mut().for_each(|v| *v -= mean);

        let mut scratch = PathVariables::zeros(g);
        let mut lambda = std::mem::take(&mut self.lambda);
        let precond = &self.precond;
        let mut pc = |v: &[f64], z: &mut [f64]| {
            z.copy_from_slice(v);
            precond.solve_in_place(z);
        };
        let this = &*self;
        let outcome = conjugate_gradient_scaled(
            |v, o| this.schur_apply(v, o, &mut scratch),
            Some(&mut pc),
            &rhs,
            &mut lambda,
            self.tol,
            self.max_iter,
            scale,
        );
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                self.lambda = vec![0.0; nt * n];
                return Err(e);
            }
        };

        // x = Q^-1 r - Q^-1 C* lambda
        scratch.u.iter_mut().for_each(|v| *v = 0.0);
        scratch.m.iter_mut().for_each(|m| m.iter_mut().for_each(|v| *v = 0.0));
        continuity_adjoint_add(g, &lambda, &mut scratch);
        self.zero_fixed(&mut scratch);
        self.q_inverse(&mut scratch);
        let r = &mut out.path;
        r.u.iter_mut().zip(&scratch.u).for_each(|(a, b)| *a -= b);
        for ax in 0..g.dim() {
            r.m[ax].iter_mut().zip(&scratch.m[ax]).for_each(|(a, b)| *a -= b);
        }
        r.u[..n].copy_from_slice(&sys.u0);
        r.u[nt * n..].copy_from_slice(&sys.u1);
        interpolate_into(&out.path, g, &mut out.centered);

        self.lambda = lambda;
        self.last = outcome;
        self.total_cg_iterations += outcome.iterations;
        Ok(outcome)
    }
}
