use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use wot_core::action::{ActionParams, ReferenceMeasure};
use wot_core::experiments::{run_suite, CheckRecord, ExperimentConfig, SUITES};
use wot_core::grid::GridSpec;
use wot_core::io::{parse_measure, slice_path, write_measure, ClipDiagnostics, RunReport};
use wot_core::solver::{extract_geodesic, solve_distance, SolverConfig, CLIP_REPORT_LIMIT};

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "wot", version, about = "Weighted dynamic Wasserstein distances on space-time grids")]
struct Cli {
    /// Worker threads; overrides WOT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distance and geodesic between two measure files.
    Dist(DistArgs),
    /// Runs a verification suite and prints its records as JSON.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct DistArgs {
    #[arg(long)]
    mu0: PathBuf,
    #[arg(long)]
    mu1: PathBuf,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    nt: usize,
    /// `lebesgue` or a measure file with strictly positive values.
    #[arg(long, default_value = "lebesgue")]
    gamma: String,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long = "tol-obj")]
    tol_obj: Option<f64>,
    #[arg(long = "tol-con")]
    tol_con: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    relax: Option<f64>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base path for geodesic slices, written as `<stem>_tNNN<.ext>`.
    #[arg(long)]
    geodesic: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// One of the suite names or `all`.
    suite: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Relative solver accuracy used for slack.
    #[arg(long = "tol-solver")]
    tol_solver: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("WOT_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("WOT_THREADS must be a positive integer, got `{v}`")),
        _ => Ok(None),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn dist(args: DistArgs, threads: Option<usize>) -> Result<u8, String> {
    let mu0 = parse_measure(&args.mu0).map_err(|e| format!("{}: {e}", args.mu0.display()))?;
    let mu1 = parse_measure(&args.mu1).map_err(|e| format!("{}: {e}", args.mu1.display()))?;
    let params = ActionParams::new(args.p, args.alpha).map_err(|e| e.to_string())?;
    let grid = GridSpec::new(mu0.grid.clone(), args.nt).map_err(|e| e.to_string())?;
    let gamma = if args.gamma == "lebesgue" {
        ReferenceMeasure::lebesgue(&grid.space)
    } else {
        let path = Path::new(&args.gamma);
        let g = parse_measure(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if g.grid != grid.space {
            return Err(format!("{}: reference grid differs from the endpoint grid", path.display()));
        }
        ReferenceMeasure::custom(&grid.space, g.values).map_err(|e| format!("{}: {e}", path.display()))?
    };

    let mut cfg = SolverConfig {
        threads,
        ..SolverConfig::default()
    };
    if let Some(v) = args.iters {
        cfg.max_iters = v;
    }
    if let Some(v) = args.tol_obj {
        cfg.tol_objective = v;
    }
    if let Some(v) = args.tol_con {
        cfg.tol_constraint = v;
    }
    if let Some(v) = args.step {
        cfg.step = v;
    }
    if let Some(v) = args.relax {
        cfg.relaxation = v;
    }

    let start = Instant::now();
    let result = solve_distance(&mu0, &mu1, &gamma, &params, &grid, &cfg).map_err(|e| e.to_string())?;
    let mut report = RunReport::from_result(&result, &args.gamma, args.seed, start.elapsed().as_secs_f64());

    if let Some(base) = &args.geodesic {
        if result.converged {
            let samples = extract_geodesic(&result, grid.nt + 1).map_err(|e| e.to_string())?;
            for (k, slice) in samples.slices.iter().enumerate() {
                let path = slice_path(base, k);
                write_measure(&path, slice).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            if samples.clipped_mass > CLIP_REPORT_LIMIT {
                eprintln!("warning: clipped {:e} negative mass from geodesic slices", samples.clipped_mass);
            }
            report.clip = Some(ClipDiagnostics {
                slices: samples.slices.len(),
                clipped_mass: samples.clipped_mass,
            });
        } else {
            eprintln!("warning: solver did not converge; geodesic slices not written");
        }
    }

    emit(args.out.as_deref(), &report.to_json())?;
    if result.converged {
        Ok(0)
    } else {
        eprintln!(
            "warning: not converged after {} iterations (gap {:e}, objective change {:e})",
            result.iterations, result.residuals.splitting_gap, result.residuals.objective_change
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn verify(args: VerifyArgs, threads: Option<usize>) -> Result<u8, String> {
    let names: Vec<&str> = if args.suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&args.suite.as_str()) {
        vec![args.suite.as_str()]
    } else {
        return Err(format!(
            "unknown suite `{}`; valid suites: {}, all",
            args.suite,
            SUITES.join(", ")
        ));
    };
    let mut cfg = ExperimentConfig::default();
    cfg.solver.threads = threads;
    if let Some(v) = args.nx {
        cfg.nx = v;
    }
    if let Some(v) = args.nt {
        cfg.nt = v;
    }
    if let Some(v) = args.iters {
        cfg.solver.max_iters = v;
    }
    if let Some(v) = args.tol_solver {
        cfg.tol_solver = v;
    }

    let mut records: Vec<CheckRecord> = Vec::new();
    let mut all_pass = true;
    for name in names {
        let start = Instant::now();
        let report = run_suite(name, args.seed, &cfg).map_err(|e| format!("suite {name}: {e}"))?;
        let passed = report.records.iter().filter(|r| r.pass).count();
        eprintln!(
            "{:<12} {} {}/{} records, inconclusive {:.0}%, {:.1}s",
            name,
            if report.pass { "PASS" } else { "FAIL" },
            passed,
            report.records.len(),
            100.0 * report.inconclusive_rate,
            start.elapsed().as_secs_f64()
        );
        all_pass &= report.pass && passed == report.records.len();
        records.extend(report.records);
    }
    let json = serde_json::to_string_pretty(&records).map_err(|e| e.to_string())?;
    emit(args.out.as_deref(), &json)?;
    Ok(if all_pass { 0 } else { EXIT_NOT_CONVERGED })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_INPUT);
        }
        Err(e) => e.exit(),
    };
    let outcome = threads(cli.threads).and_then(|t| match cli.command {
        Command::Dist(args) => dist(args, t),
        Command::Verify(args) => verify(args, t),
    });
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
