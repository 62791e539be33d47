//! Acceptance battery. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wot_core::action::{prox_phi, ActionParams, ReferenceMeasure};
use wot_core::constraint::{ConstraintSystem, ProjectionWorkspace, DEFAULT_CG_MAX_ITER};
use wot_core::experiments::{bump, run_suite, translate_pair, ExperimentConfig, SuiteReport, SUITES};
use wot_core::grid::{interpolate, interpolate_adjoint, GridSpec, MeasureField, Point, SpaceGrid};
use wot_core::io::{format_measure, parse_measure_str};
use wot_core::oracles::{
    brute_force_prox, dilation_curve_length, sobolev_dual_12, wasserstein_1d, SearchBox,
};
use wot_core::solver::{solve_distance, GeodesicResult, SolverConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Verdict { pass, detail }
    }
}

struct Line {
    id: usize,
    title: &'static str,
    verdict: Verdict,
    seconds: f64,
}

fn run(lines: &mut Vec<Line>, id: usize, title: &'static str, f: impl FnOnce() -> Verdict) {
    eprintln!("criterion {id:2}: {title} ...");
    let start = Instant::now();
    let verdict = f();
    let seconds = start.elapsed().as_secs_f64();
    eprintln!(
        "criterion {id:2}: {} ({seconds:.1}s) {}",
        if verdict.pass { "PASS" } else { "FAIL" },
        verdict.detail
    );
    lines.push(Line {
        id,
        title,
        verdict,
        seconds,
    });
}

fn single_threaded() -> SolverConfig {
    SolverConfig {
        threads: Some(1),
        ..SolverConfig::default()
    }
}

fn solve(a: &MeasureField, b: &MeasureField, params: ActionParams, nt: usize) -> GeodesicResult {
    let grid = GridSpec::new(a.grid.clone(), nt).unwrap();
    solve_distance(a, b, &ReferenceMeasure::lebesgue(&a.grid), &params, &grid, &single_threaded()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn flatness(r: &GeodesicResult) -> f64 {
    let max = r.per_time_action.iter().cloned().fold(0.0, f64::max);
    let min = r.per_time_action.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

fn mass_spread(r: &GeodesicResult) -> f64 {
    let m0 = r.mass_per_slice[0];
    r.mass_per_slice.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0
}

fn criterion_classical(runs: &mut Vec<(String, GeodesicResult)>) -> Verdict {
    let params = ActionParams::new(2.0, 1.0).unwrap();
    let s = SpaceGrid::new_1d(64, (0.0, 1.0)).unwrap();
    let (a, b) = translate_pair(&s, 0.25, 0.15).unwrap();
    let start = Instant::now();
    let r = solve(&a, &b, params, 32);
    let secs = start.elapsed().as_secs_f64();
    let err_t = rel(r.distance, 0.25);
    let within_budget = r.iterations <= 20_000;

    let mix = |parts: &[(f64, f64, f64)]| {
        let mut acc = MeasureField::zeros(s.clone());
        for &(w, c, rad) in parts {
            acc = acc.plus(&bump(&s, [c, 0.5], rad).unwrap().scaled(w));
        }
        acc.normalized(1.0)
    };
    let c = mix(&[(0.6, 0.3, 0.1), (0.4, 0.42, 0.08)]);
    let d = mix(&[(0.3, 0.6, 0.08), (0.7, 0.72, 0.12)]);
    let r2 = solve(&c, &d, params, 32);
    let oracle = wasserstein_1d(&c, &d, 2.0).unwrap();
    let err_a = rel(r2.distance, oracle);
    let pass = r.converged && r2.converged && within_budget && err_t <= 0.02 && secs <= 60.0 && err_a <= 0.02;
    let detail = format!(
        "translate W = {:.6} (rel err {:.2e}, {} its, {secs:.1}s); asymmetric W = {:.6} vs quantile {:.6} (rel err {:.2e})",
        r.distance, err_t, r.iterations, r2.distance, oracle, err_a
    );
    runs.push(("translate alpha=1".into(), r));
    runs.push(("asymmetric alpha=1".into(), r2));
    Verdict::new(pass, detail)
}

fn criterion_sobolev(runs: &mut Vec<(String, GeodesicResult)>) -> Verdict {
    let params = ActionParams::new(2.0, 0.0).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for s in [
        SpaceGrid::new_1d(64, (0.0, 1.0)).unwrap(),
        SpaceGrid::new_2d(32, 32, (0.0, 1.0), (0.0, 1.0)).unwrap(),
    ] {
        let a = bump(&s, [0.35, 0.4], 0.2).unwrap();
        let b = bump(&s, [0.62, 0.58], 0.25).unwrap();
        let r = solve(&a, &b, params, 8);
        let oracle = sobolev_dual_12(&a, &b).unwrap().norm;
        let e = rel(r.distance, oracle);
        pass &= r.converged && e <= 0.02;
        parts.push(format!("{}d W = {:.6} vs {:.6} (rel err {:.2e})", s.dim, r.distance, oracle, e));
        runs.push((format!("sobolev {}d", s.dim), r));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_prox() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..1000 {
        let p = [1.5, 2.0, 3.0][i % 3];
        let alpha = [0.0, 0.3, 0.7, 1.0][(i / 3) % 4];
        let params = ActionParams::new(p, alpha).unwrap();
        let g = rng.random_range(0.5..2.0);
        let step = rng.random_range(0.1..2.0);
        let rho = rng.random_range(-1.0..2.0);
        let d = 1 + i % 2;
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (r1, w1) = prox_phi(&params, g, step, rho, &w).unwrap();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let search = SearchBox::around(&params, g, step, rho, norm);
        match brute_force_prox(&params, g, step, rho, &w, search, 100) {
            Ok((r2, w2)) => {
                let e = w1.iter().zip(&w2).map(|(a, b)| (a - b).abs()).fold((r1 - r2).abs(), f64::max);
                worst = worst.max(e);
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        failures == 0 && worst <= 1e-6 && secs <= 30.0,
        format!("max error {worst:.2e} over 1000 inputs, {failures} oracle failures, {secs:.1}s"),
    )
}

fn suite<'a>(reports: &'a [SuiteReport], name: &str) -> &'a SuiteReport {
    reports.iter().find(|r| r.suite == name).expect("suite was run")
}

fn suite_verdict(report: &SuiteReport) -> (bool, String) {
    let passed = report.records.iter().filter(|r| r.pass).count();
    let worst = report
        .records
        .iter()
        .map(|r| r.margin)
        .fold(f64::INFINITY, f64::min);
    (
        report.pass && passed == report.records.len(),
        format!(
            "{}: {passed}/{} pass, min margin {worst:.2e}",
            report.suite,
            report.records.len()
        ),
    )
}

fn records_verdict(reports: &[&SuiteReport], prefix: &str, extra: impl Fn(f64) -> bool) -> Verdict {
    let mut pass = true;
    let mut count = 0;
    let mut worst_left = f64::NEG_INFINITY;
    for rep in reports {
        for r in rep.records.iter().filter(|r| r.name.starts_with(prefix)) {
            count += 1;
            pass &= r.pass && extra(r.left);
            worst_left = worst_left.max(r.left);
        }
    }
    Verdict::new(pass && count > 0, format!("{count} `{prefix}` records, worst left side {worst_left:.4e}"))
}

fn criterion_infrastructure(all_secs: f64, all_pass: bool) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_adj = 0.0f64;
    let mut worst_idem = 0.0f64;
    let grids = [
        GridSpec::new(SpaceGrid::new_1d(9, (0.0, 1.0)).unwrap(), 5).unwrap(),
        GridSpec::new(SpaceGrid::new_2d(6, 5, (0.0, 2.0), (0.0, 1.0)).unwrap(), 4).unwrap(),
    ];
    let randomize = |v: &mut Vec<f64>, rng: &mut ChaCha8Rng| v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    for grid in &grids {
        let s = &grid.space;
        let mu0 = MeasureField::from_fn(s.clone(), |x| 1.0 + x[0]).unwrap();
        let mu1 = mu0.normalized(mu0.mass());
        let mu1 = MeasureField::from_fn(s.clone(), |x| 2.0 - x[0] / s.x_extent.1)
            .unwrap()
            .normalized(mu1.mass());
        let sys = ConstraintSystem::new(grid, &mu0, &mu1).unwrap();
        let mut ws = ProjectionWorkspace::new(grid, 1e-13, DEFAULT_CG_MAX_ITER);
        for _ in 0..5 {
            let mut x = Point::zeros(grid);
            randomize(&mut x.path.u, &mut rng);
            x.path.m.iter_mut().for_each(|m| randomize(m, &mut rng));
            randomize(&mut x.centered.a, &mut rng);
            x.centered.b.iter_mut().for_each(|b| randomize(b, &mut rng));

            let mut c = interpolate(&x.path, grid).unwrap();
            randomize(&mut c.a, &mut rng);
            c.b.iter_mut().for_each(|b| randomize(b, &mut rng));
            let ic = interpolate(&x.path, grid).unwrap();
            let lhs: f64 = ic.a.iter().zip(&c.a).map(|(a, b)| a * b).sum::<f64>()
                + ic.b.iter().zip(&c.b).map(|(p, q)| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>();
            let adj = interpolate_adjoint(&c, grid).unwrap();
            let rhs: f64 = x.path.u.iter().zip(&adj.u).map(|(a, b)| a * b).sum::<f64>()
                + x.path.m.iter().zip(&adj.m).map(|(p, q)| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>();
            worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));

            let mut l = sys.apply(&x);
            randomize(&mut l.continuity, &mut rng);
            randomize(&mut l.endpoint, &mut rng);
            randomize(&mut l.coupling.a, &mut rng);
            l.coupling.b.iter_mut().for_each(|b| randomize(b, &mut rng));
            let lhs = sys.apply(&x).dot(&l);
            let rhs = x.dot(&sys.apply_adjoint(&l));
            worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));

            let px = ws.project(&sys, &x).unwrap();
            let ppx = ws.project(&sys, &px).unwrap();
            worst_idem = worst_idem.max(px.distance(&ppx) / px.norm().max(1.0));
            worst_idem = worst_idem.max(sys.residual(&px).max() / px.norm().max(1.0));
        }
    }

    let mut round_trip = true;
    for i in 0..50 {
        let s = if i % 2 == 0 {
            SpaceGrid::new_1d(3 + i, (-0.5, 0.25 + i as f64)).unwrap()
        } else {
            SpaceGrid::new_2d(2 + i % 5, 3 + i % 4, (0.1, 0.7), (-3.0, 1e-3)).unwrap()
        };
        let values = (0..s.ncells())
            .map(|_| match rng.random_range(0..3) {
                0 => 0.0,
                1 => rng.random_range(0.0..1e6),
                _ => rng.random_range(0.0..1.0) * 1e-300,
            })
            .collect();
        let f = MeasureField::new(s, values).unwrap();
        round_trip &= parse_measure_str(&format_measure(&f)).as_ref() == Ok(&f);
    }

    let pass = worst_adj <= 1e-10 && worst_idem <= 1e-10 && round_trip && all_pass && all_secs <= 900.0;
    Verdict::new(
        pass,
        format!(
            "adjoint {worst_adj:.1e}, projection idempotence/feasibility {worst_idem:.1e}, round trip {}, verify all {} in {all_secs:.0}s",
            if round_trip { "exact" } else { "BROKEN" },
            if all_pass { "passes" } else { "FAILS" }
        ),
    )
}

fn main() {
    let mut lines = Vec::new();
    let mut runs: Vec<(String, GeodesicResult)> = Vec::new();

    run(&mut lines, 1, "classical limit vs quantile oracle", || criterion_classical(&mut runs));
    run(&mut lines, 2, "Sobolev limit vs Poisson oracle", || criterion_sobolev(&mut runs));
    run(&mut lines, 3, "prox vs brute-force minimizer", criterion_prox);

    let mut cfg = ExperimentConfig::default();
    cfg.solver.threads = Some(1);
    eprintln!("running all suites at default grids (seed 1) ...");
    let start = Instant::now();
    let reports: Vec<SuiteReport> = SUITES.iter().map(|s| run_suite(s, 1, &cfg).unwrap()).collect();
    let all_secs = start.elapsed().as_secs_f64();
    for r in &reports {
        let (ok, d) = suite_verdict(r);
        eprintln!("  {} {d}", if ok { "pass" } else { "FAIL" });
    }
    let all_pass = reports.iter().all(|r| suite_verdict(r).0);

    let geodesic_suites = [suite(&reports, "geodesic"), suite(&reports, "gradient2d")];
    run(&mut lines, 4, "constant speed on converged benchmarks", || {
        let mut worst = 1.0f64;
        let mut pass = true;
        for (_, r) in runs.iter().filter(|(_, r)| r.converged) {
            worst = worst.max(flatness(r));
        }
        pass &= worst <= 1.05;
        let v = records_verdict(&geodesic_suites, "geodesic/constant-speed", |l| l <= 1.05);
        Verdict::new(pass && v.pass, format!("benchmark runs max ratio {worst:.4}; suites: {}", v.detail))
    });
    run(&mut lines, 5, "mass conservation", || {
        let worst = runs.iter().map(|(_, r)| mass_spread(r)).fold(0.0, f64::max);
        let v = records_verdict(&geodesic_suites, "geodesic/mass", |l| l <= 1e-8);
        Verdict::new(worst <= 1e-8 && v.pass, format!("benchmark runs spread {worst:.2e}; suites: {}", v.detail))
    });
    run(&mut lines, 6, "metric, convexity, scaling on seeds 1..5", || {
        let mut pass = true;
        let mut worst_identity = 0.0f64;
        let mut count = 0;
        for seed in 1..=5u64 {
            for name in ["metric", "convexity", "scaling"] {
                let owned;
                let rep = if seed == 1 {
                    suite(&reports, name)
                } else {
                    owned = run_suite(name, seed, &cfg).unwrap();
                    &owned
                };
                let (ok, d) = suite_verdict(rep);
                if !ok {
                    eprintln!("  seed {seed} {d}");
                }
                pass &= ok;
                count += rep.records.len();
                for r in rep.records.iter().filter(|r| r.name == "scaling/identity") {
                    worst_identity = worst_identity.max(r.left);
                }
            }
        }
        pass &= worst_identity <= 0.02;
        Verdict::new(pass, format!("{count} records; worst scaling-identity deviation {worst_identity:.2e}"))
    });
    run(&mut lines, 7, "comparison inequalities", || {
        let (ok, d) = suite_verdict(suite(&reports, "comparisons"));
        let slack_ok = suite(&reports, "comparisons").records.iter().all(|r| r.rel_tol <= 0.05);
        Verdict::new(ok && slack_ok, d)
    });
    run(&mut lines, 8, "entropy convexity along geodesics", || {
        records_verdict(&[suite(&reports, "geodesic")], "geodesic/entropy-convexity", |_| true)
    });
    run(&mut lines, 9, "heat flow contraction, energy identity, EVI", || {
        let (ok, d) = suite_verdict(suite(&reports, "heat"));
        Verdict::new(ok, d)
    });
    run(&mut lines, 10, "dilation-curve exponent", || {
        let mut pass = true;
        let mut parts = Vec::new();
        let profile = |x: [f64; 2]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < 0.04 {
                (1.0 - r2 / 0.04).powi(2)
            } else {
                0.0
            }
        };
        for (grid, params) in [
            (SpaceGrid::new_1d(4000, (-1.0, 1.0)).unwrap(), ActionParams::new(2.0, 0.5).unwrap()),
            (SpaceGrid::new_2d(300, 300, (-1.0, 1.0), (-1.0, 1.0)).unwrap(), ActionParams::new(2.0, 0.9).unwrap()),
        ] {
            let c = dilation_curve_length(&profile, &grid, &params, 1.2, 13).unwrap();
            let e = rel(c.fitted_slope, c.expected_slope);
            pass &= e <= 0.01;
            parts.push(format!(
                "d={} alpha={}: slope {:.5} vs {:.5} (rel err {e:.1e})",
                grid.dim, params.alpha, c.fitted_slope, c.expected_slope
            ));
        }
        Verdict::new(pass, parts.join("; "))
    });
    run(&mut lines, 11, "gradient structure of the optimal velocity", || {
        records_verdict(&[suite(&reports, "gradient2d")], "gradient2d/curl-ratio", |l| l <= 0.1)
    });
    run(&mut lines, 12, "convolution monotonicity", || {
        let (ok, d) = suite_verdict(suite(&reports, "convolution"));
        Verdict::new(ok && suite(&reports, "convolution").records.len() == 2, d)
    });
    run(&mut lines, 13, "infrastructure", || criterion_infrastructure(all_secs, all_pass));

    println!();
    println!("acceptance summary");
    lines.sort_by_key(|l| l.id);
    for l in &lines {
        println!(
            "[{}] {:2} {:<44} {:7.1}s  {}",
            if l.verdict.pass { "PASS" } else { "FAIL" },
            l.id,
            l.title,
            l.seconds,
            l.verdict.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.verdict.pass).count();
    println!("{} of {} criteria pass", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
