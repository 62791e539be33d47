use wot_core::action::{ActionParams, ReferenceMeasure};
use wot_core::experiments::{
    bump, check_convolution_monotonicity, check_geodesic_properties, check_gradient_structure, entropy,
    translate_pair, uniform, ExperimentConfig,
};
use wot_core::grid::{GridSpec, MeasureField, SpaceGrid};
use wot_core::solver::{extract_geodesic, solve_distance, GeodesicResult};

fn solve_with(a: &MeasureField, b: &MeasureField, gamma: &ReferenceMeasure, alpha: f64, nt: usize) -> GeodesicResult {
    let grid = GridSpec::new(a.grid.clone(), nt).unwrap();
    let params = ActionParams::new(2.0, alpha).unwrap();
    let r = solve_distance(a, b, gamma, &params, &grid, &ExperimentConfig::default().solver).unwrap();
    assert!(r.converged, "solve did not converge");
    r
}

fn gaussian(s: &SpaceGrid, center: [f64; 2], sd: f64) -> MeasureField {
    let f = MeasureField::from_fn(s.clone(), |x| {
        let r2 = (0..s.dim).map(|ax| (x[ax] - center[ax]).powi(2)).sum::<f64>();
        (-r2 / (2.0 * sd * sd)).exp()
    })
    .unwrap();
    f.normalized(1.0)
}

fn solve(a: &MeasureField, b: &MeasureField, alpha: f64, nt: usize) -> GeodesicResult {
    solve_with(a, b, &ReferenceMeasure::lebesgue(&a.grid), alpha, nt)
}

#[test]
fn collinear_translates_saturate_the_triangle() {
    let s = SpaceGrid::new_1d(48, (0.0, 1.0)).unwrap();
    let at = |c: f64| bump(&s, [c, 0.5], 0.12).unwrap();
    let (x, y, z) = (at(0.2), at(0.5), at(0.8));
    let d = |a: &MeasureField, b: &MeasureField| solve(a, b, 1.0, 16).distance;
    let (xy, yz, xz) = (d(&x, &y), d(&y, &z), d(&x, &z));
    assert!((xy + yz - xz).abs() <= 0.02 * xz, "{xy} + {yz} vs {xz}");
}

#[test]
fn background_mass_shortens_the_distance() {
    let s = SpaceGrid::new_1d(48, (0.0, 1.0)).unwrap();
    let (a, b) = translate_pair(&s, 0.25, 0.15).unwrap();
    let sigma = uniform(&s).unwrap();
    let bare = solve(&a, &b, 0.5, 16).distance;
    let lifted = solve(&a.plus(&sigma), &b.plus(&sigma), 0.5, 16).distance;
    assert!(lifted < bare, "{lifted} vs {bare}");
}

#[test]
fn doubling_the_reference_does_not_increase_the_distance() {
    let s = SpaceGrid::new_1d(48, (0.0, 1.0)).unwrap();
    let (a, b) = translate_pair(&s, 0.25, 0.15).unwrap();
    let base = solve(&a, &b, 0.5, 16).distance;
    let heavy = ReferenceMeasure::custom(&s, vec![2.0; s.ncells()]).unwrap();
    let doubled = solve_with(&a, &b, &heavy, 0.5, 16).distance;
    assert!(doubled <= base * (1.0 + 1e-3), "{doubled} vs {base}");
}

#[test]
fn entropy_midpoint_lies_below_the_chord() {
    let s = SpaceGrid::new_1d(48, (0.0, 1.0)).unwrap();
    let a = gaussian(&s, [0.35, 0.5], 0.06);
    let b = gaussian(&s, [0.62, 0.5], 0.1);
    let r = solve(&a, &b, 1.0, 16);
    let geo = extract_geodesic(&r, 17).unwrap();
    let e = |m: &MeasureField| entropy(1.0, m).unwrap();
    assert!(e(&geo.slices[8]) < 0.5 * (e(&a) + e(&b)));
    let records = check_geodesic_properties(&r, 0, "alpha 1").unwrap();
    assert!(records.iter().all(|c| c.pass), "{records:?}");
}

#[test]
fn translate_in_two_dimensions_is_curl_free() {
    let s = SpaceGrid::new_2d(16, 16, (0.0, 1.0), (0.0, 1.0)).unwrap();
    let a = bump(&s, [0.38, 0.5], 0.22).unwrap();
    let b = bump(&s, [0.62, 0.5], 0.22).unwrap();
    let r = solve(&a, &b, 1.0, 8);
    // At alpha = 1 the velocity in near-vacuum cells is roundoff; evaluate on the resolved support.
    let max = r.densities.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    let record = check_gradient_structure(&r, Some(1e-3 * max), 0, "translate").unwrap();
    assert!(record.pass, "{record:?}");
    assert!(record.left <= 1e-2, "{record:?}");
}

#[test]
fn repeated_smoothing_is_monotone() {
    let s = SpaceGrid::new_1d(48, (0.0, 1.0)).unwrap();
    let (a, b) = translate_pair(&s, 0.25, 0.15).unwrap();
    let grid = GridSpec::new(s.clone(), 16).unwrap();
    let params = ActionParams::new(2.0, 0.5).unwrap();
    let leb = MeasureField::from_fn(s.clone(), |_| 1.0).unwrap();
    let cfg = ExperimentConfig::default();
    let records = check_convolution_monotonicity(&a, &b, &leb, &params, &grid, 2, 0, &cfg).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|c| c.pass), "{records:?}");
    let none = check_convolution_monotonicity(&a, &b, &leb, &params, &grid, 0, 0, &cfg).unwrap();
    assert!(none.is_empty());
}
