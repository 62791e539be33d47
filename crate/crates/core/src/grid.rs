//! Staggered space-time grids on a rectangular box.
//!
//! Densities live on time slices `k = 0..=nt` at cell centers, momenta on
//! time intervals `k = 0..nt` at cell faces. Cells are indexed row-major
//! with x outer and y inner. Faces along an axis are numbered by their
//! position: face `i` along x sits at `x0 + i*dx` and separates cells `i-1`
//! and `i`, so faces `0` and `nx` are the (zero-flux) boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WotError};

/// Spatial part of a grid: a 1D interval or a 2D rectangle split into cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub dim: usize,
    pub nx: usize,
    /// Always 1 when `dim == 1`.
    pub ny: usize,
    pub x_extent: (f64, f64),
    /// Ignored when `dim == 1`.
    pub y_extent: (f64, f64),
}

impl SpaceGrid {
    pub fn new_1d(nx: usize, x_extent: (f64, f64)) -> Result<Self> {
        let g = SpaceGrid {
            dim: 1,
            nx,
            ny: 1,
            x_extent,
            y_extent: (0.0, 1.0),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn new_2d(nx: usize, ny: usize, x_extent: (f64, f64), y_extent: (f64, f64)) -> Result<Self> {
        let g = SpaceGrid {
            dim: 2,
            nx,
            ny,
            x_extent,
            y_extent,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(WotError::Grid(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        if self.nx < 2 {
            return Err(WotError::Grid(format!("nx must be >= 2, got {}", self.nx)));
        }
        if !(self.x_extent.1 - self.x_extent.0 > 0.0) {
            return Err(WotError::Grid("x extent must have positive length".into()));
        }
        if self.dim == 2 {
            if self.ny < 2 {
                return Err(WotError::Grid(format!("ny must be >= 2, got {}", self.ny)));
            }
            if !(self.y_extent.1 - self.y_extent.0 > 0.0) {
                return Err(WotError::Grid("y extent must have positive length".into()));
            }
        } else if self.ny != 1 {
            return Err(WotError::Grid("ny must be 1 for a 1D grid".into()));
        }
        Ok(())
    }

    pub fn ncells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dx(&self) -> f64 {
        (self.x_extent.1 - self.x_extent.0) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            (self.y_extent.1 - self.y_extent.0) / self.ny as f64
        }
    }

    /// Cell width along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.dx()
        } else {
            self.dy()
        }
    }

    pub fn vol(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Number of cells along `axis`.
    pub fn cells_along(&self, axis: usize) -> usize {
        if axis == 0 {
            self.nx
        } else {
            self.ny
        }
    }

    pub fn nfaces(&self, axis: usize) -> usize {
        if axis == 0 {
            (self.nx + 1) * self.ny
        } else {
            self.nx * (self.ny + 1)
        }
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// Face indices below and above cell `(i, j)` along `axis`.
    #[inline]
    pub fn cell_faces(&self, axis: usize, i: usize, j: usize) -> (usize, usize) {
        if axis == 0 {
            (i * self.ny + j, (i + 1) * self.ny + j)
        } else {
            let f = i * (self.ny + 1) + j;
            (f, f + 1)
        }
    }

    pub fn is_boundary_face(&self, axis: usize, f: usize) -> bool {
        if axis == 0 {
            let i = f / self.ny;
            i == 0 || i == self.nx
        } else {
            let j = f % (self.ny + 1);
            j == 0 || j == self.ny
        }
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let i = c / self.ny;
        let j = c % self.ny;
        let x = self.x_extent.0 + (i as f64 + 0.5) * self.dx();
        let y = if self.dim == 1 {
            0.0
        } else {
            self.y_extent.0 + (j as f64 + 0.5) * self.dy()
        };
        [x, y]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.ncells()).map(|c| self.cell_center(c)).collect()
    }

    pub fn box_volume(&self) -> f64 {
        let lx = self.x_extent.1 - self.x_extent.0;
        if self.dim == 1 {
            lx
        } else {
            lx * (self.y_extent.1 - self.y_extent.0)
        }
    }
}

/// Space grid plus the number of time intervals on the unit horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub space: SpaceGrid,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(space: SpaceGrid, nt: usize) -> Result<Self> {
        space.validate()?;
        if nt < 2 {
            return Err(WotError::Grid(format!("nt must be >= 2, got {nt}")));
        }
        Ok(GridSpec { space, nt })
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn ncells(&self) -> usize {
        self.space.ncells()
    }
}

/// A nonnegative Lebesgue density sampled per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureField {
    pub grid: SpaceGrid,
    pub values: Vec<f64>,
}

impl MeasureField {
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.ncells() {
            return Err(WotError::Shape {
                what: "measure values",
                expected: grid.ncells(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(WotError::Precondition(format!(
                "measure value at index {i} is {} (must be finite and >= 0)",
                values[i]
            )));
        }
        Ok(MeasureField { grid, values })
    }

    /// Builds a field by sampling `density` at cell centers.
    pub fn from_fn(grid: SpaceGrid, density: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = grid.centers().into_iter().map(&density).collect();
        MeasureField::new(grid, values)
    }

    pub fn zeros(grid: SpaceGrid) -> Self {
        let n = grid.ncells();
        MeasureField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.vol()
    }

    pub fn scaled(&self, factor: f64) -> MeasureField {
        MeasureField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Rescales so that the total mass equals `mass`.
    pub fn normalized(&self, mass: f64) -> MeasureField {
        let m = self.mass();
        self.scaled(mass / m)
    }

    pub fn plus(&self, other: &MeasureField) -> MeasureField {
        MeasureField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    /// `(1 - tau) * self + tau * other`.
    pub fn lerp(&self, other: &MeasureField, tau: f64) -> MeasureField {
        MeasureField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - tau) * a + tau * b)
                .collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Staggered unknowns: densities on slices, momenta on faces per interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PathVariables {
    /// `(nt + 1) * ncells`, slice-major.
    pub u: Vec<f64>,
    /// One vector per axis, each `nt * nfaces(axis)`, interval-major.
    pub m: Vec<Vec<f64>>,
}

/// Copies of the unknowns at space-time cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredVariables {
    /// `nt * ncells`.
    pub a: Vec<f64>,
    /// One vector per axis, each `nt * ncells`.
    pub b: Vec<Vec<f64>>,
}

impl PathVariables {
    pub fn zeros(grid: &GridSpec) -> Self {
        let s = &grid.space;
        PathVariables {
            u: vec![0.0; (grid.nt + 1) * s.ncells()],
            m: (0..s.dim).map(|ax| vec![0.0; grid.nt * s.nfaces(ax)]).collect(),
        }
    }

    pub fn check_shape(&self, grid: &GridSpec) -> Result<()> {
        let s = &grid.space;
        check_len("u", (grid.nt + 1) * s.ncells(), self.u.len())?;
        check_len("momentum axes", s.dim, self.m.len())?;
        for (ax, m) in self.m.iter().enumerate() {
            check_len("m", grid.nt * s.nfaces(ax), m.len())?;
        }
        Ok(())
    }

    pub fn slice(&self, grid: &GridSpec, k: usize) -> &[f64] {
        let n = grid.ncells();
        &self.u[k * n..(k + 1) * n]
    }

    /// Momenta of interval `k`, one slice per axis.
    pub fn momenta_at(&self, grid: &GridSpec, k: usize) -> Vec<&[f64]> {
        self.m
            .iter()
            .enumerate()
            .map(|(ax, m)| {
                let nf = grid.space.nfaces(ax);
                &m[k * nf..(k + 1) * nf]
            })
            .collect()
    }
}

impl CenteredVariables {
    pub fn zeros(grid: &GridSpec) -> Self {
        let n = grid.nt * grid.ncells();
        CenteredVariables {
            a: vec![0.0; n],
            b: vec![vec![0.0; n]; grid.dim()],
        }
    }

    pub fn check_shape(&self, grid: &GridSpec) -> Result<()> {
        let n = grid.nt * grid.ncells();
        check_len("a", n, self.a.len())?;
        check_len("centered momentum axes", grid.dim(), self.b.len())?;
        for b in &self.b {
            check_len("b", n, b.len())?;
        }
        Ok(())
    }
}

/// A full primal point: staggered unknowns together with their centered copies.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub path: PathVariables,
    pub centered: CenteredVariables,
}

impl Point {
    pub fn zeros(grid: &GridSpec) -> Self {
        Point {
            path: PathVariables::zeros(grid),
            centered: CenteredVariables::zeros(grid),
        }
    }

    pub fn check_shape(&self, grid: &GridSpec) -> Result<()> {
        self.path.check_shape(grid)?;
        self.centered.check_shape(grid)
    }

    fn parts(&self) -> impl Iterator<Item = &Vec<f64>> {
        std::iter::once(&self.path.u)
            .chain(self.path.m.iter())
            .chain(std::iter::once(&self.centered.a))
            .chain(self.centered.b.iter())
    }

    fn parts_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        std::iter::once(&mut self.path.u)
            .chain(self.path.m.iter_mut())
            .chain(std::iter::once(&mut self.centered.a))
            .chain(self.centered.b.iter_mut())
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.parts()
            .zip(other.parts())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Point) {
        for (a, b) in self.parts_mut().zip(other.parts()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
    }

    /// `self = alpha * x + beta * y`.
    pub fn assign_combination(&mut self, alpha: f64, x: &Point, beta: f64, y: &Point) {
        for ((s, a), b) in self.parts_mut().zip(x.parts()).zip(y.parts()) {
            for ((v, p), q) in s.iter_mut().zip(a).zip(b) {
                *v = alpha * p + beta * q;
            }
        }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.parts()
            .zip(other.parts())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(WotError::Shape { what, expected, got });
    }
    Ok(())
}

/// Spatial divergence of the face momenta of one time interval.
pub fn divergence(m: &[&[f64]], grid: &SpaceGrid) -> Result<Vec<f64>> {
    check_len("momentum axes", grid.dim, m.len())?;
    for (ax, mi) in m.iter().enumerate() {
        check_len("m", grid.nfaces(ax), mi.len())?;
    }
    let mut out = vec![0.0; grid.ncells()];
    divergence_into(m, grid, &mut out);
    Ok(out)
}

/// Unchecked divergence, overwriting `out`.
pub(crate) fn divergence_into(m: &[&[f64]], grid: &SpaceGrid, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (ax, mi) in m.iter().enumerate() {
        let inv = 1.0 / grid.spacing(ax);
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let (lo, hi) = grid.cell_faces(ax, i, j);
                out[grid.cell_index(i, j)] += (mi[hi] - mi[lo]) * inv;
            }
        }
    }
}

/// Adjoint of [`divergence_into`] restricted to one axis: accumulates into face values.
pub(crate) fn divergence_adjoint_add(lambda: &[f64], grid: &SpaceGrid, axis: usize, out: &mut [f64]) {
    let inv = 1.0 / grid.spacing(axis);
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let (lo, hi) = grid.cell_faces(axis, i, j);
            let l = lambda[grid.cell_index(i, j)] * inv;
            out[hi] += l;
            out[lo] -= l;
        }
    }
}

/// Averages staggered unknowns onto space-time cell centers.
pub fn interpolate(path: &PathVariables, grid: &GridSpec) -> Result<CenteredVariables> {
    path.check_shape(grid)?;
    let mut out = CenteredVariables::zeros(grid);
    interpolate_into(path, grid, &mut out);
    Ok(out)
}

pub(crate) fn interpolate_into(path: &PathVariables, grid: &GridSpec, out: &mut CenteredVariables) {
    let s = &grid.space;
    let n = s.ncells();
    for k in 0..grid.nt {
        let (lo, hi) = (&path.u[k * n..(k + 1) * n], &path.u[(k + 1) * n..(k + 2) * n]);
        for (c, a) in out.a[k * n..(k + 1) * n].iter_mut().enumerate() {
            *a = 0.5 * (lo[c] + hi[c]);
        }
    }
    for ax in 0..s.dim {
        let nf = s.nfaces(ax);
        for k in 0..grid.nt {
            let m = &path.m[ax][k * nf..(k + 1) * nf];
            let b = &mut out.b[ax][k * n..(k + 1) * n];
            for i in 0..s.nx {
                for j in 0..s.ny {
                    let (f0, f1) = s.cell_faces(ax, i, j);
                    b[s.cell_index(i, j)] = 0.5 * (m[f0] + m[f1]);
                }
            }
        }
    }
}

/// Exact adjoint of [`interpolate`] under the Euclidean inner products.
pub fn interpolate_adjoint(centered: &CenteredVariables, grid: &GridSpec) -> Result<PathVariables> {
    centered.check_shape(grid)?;
    let mut out = PathVariables::zeros(grid);
    interpolate_adjoint_into(centered, grid, &mut out);
    Ok(out)
}

pub(crate) fn interpolate_adjoint_into(centered: &CenteredVariables, grid: &GridSpec, out: &mut PathVariables) {
    let s = &grid.space;
    let n = s.ncells();
    out.u.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..grid.nt {
        for c in 0..n {
            let a = 0.5 * centered.a[k * n + c];
            out.u[k * n + c] += a;
            out.u[(k + 1) * n + c] += a;
        }
    }
    for ax in 0..s.dim {
        let nf = s.nfaces(ax);
        out.m[ax].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..grid.nt {
            let b = &centered.b[ax][k * n..(k + 1) * n];
            let m = &mut out.m[ax][k * nf..(k + 1) * nf];
            for i in 0..s.nx {
                for j in 0..s.ny {
                    let (f0, f1) = s.cell_faces(ax, i, j);
                    let v = 0.5 * b[s.cell_index(i, j)];
                    m[f0] += v;
                    m[f1] += v;
                }
            }
        }
    }
}
