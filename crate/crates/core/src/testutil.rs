use rand::{Rng, RngExt};

use crate::grid::{CenteredVariables, GridSpec, PathVariables};

pub fn rand_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random staggered field; boundary faces zeroed when requested.
pub fn rand_path<R: Rng>(grid: &GridSpec, rng: &mut R, zero_boundary: bool) -> PathVariables {
    let mut p = PathVariables::zeros(grid);
    p.u = rand_vec(rng, p.u.len());
    let s = &grid.space;
    for ax in 0..s.dim {
        let nf = s.nfaces(ax);
        for (idx, v) in p.m[ax].iter_mut().enumerate() {
            *v = rng.random_range(-1.0..1.0);
            if zero_boundary && s.is_boundary_face(ax, idx % nf) {
                *v = 0.0;
            }
        }
    }
    p
}

pub fn rand_centered<R: Rng>(grid: &GridSpec, rng: &mut R) -> CenteredVariables {
    let mut c = CenteredVariables::zeros(grid);
    c.a = rand_vec(rng, c.a.len());
    for b in c.b.iter_mut() {
        *b = rand_vec(rng, b.len());
    }
    c
}
