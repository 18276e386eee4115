//! Command-line front end. Exit codes: 0 success, 1 error, 2 input rejected
//! by the admissibility checks or a failed verification suite.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{load_kernel, load_problem, load_symbols};
use crate::diagnostics::{
    calibrate_nirenberg, identities_suite, manufactured_residual, nirenberg_check, random_trials, verify_thm21,
    verify_thm22, Bump, EstimateReport, EstimateSettings, ExactSolution, NirenbergExponents, TimeProfile,
};
use crate::error::{Error, Result};
use crate::grid::SpectralGrid;
use crate::io::{
    termination_record, write_diagnostics_csv, write_estimate_csv, write_identity_csv, write_norms_csv, write_run_csv,
    write_snapshot, write_table_csv, NormRow,
};
use crate::linear::solve_linear;
use crate::nonlinear::solve_nonlinear;
use crate::nonlocal::{check_admissibility, NonlocalKernel};
use crate::norms::NormSuite;
use crate::propagator::PropagatorTable;
use crate::symbols::{check_condition21, preset_symbols, SymbolSet};

#[derive(Debug, Parser)]
#[command(
    name = "bqsolve",
    version,
    about = "Generalized Boussinesq solver with integral initial conditions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan symbols on a grid and report the admissibility conditions.
    CheckSymbols {
        #[arg(long, conflicts_with = "preset")]
        symbols: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 2.0)]
        s: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Points per axis, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "64")]
        points: Vec<usize>,
        #[arg(long, default_value_t = 8.0)]
        half_width: f64,
    },
    /// Print the invertibility margin of a kernel pair.
    CheckKernels {
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long)]
        beta: Option<PathBuf>,
    },
    /// Solve the linear problem and write snapshots and norms.
    SolveLinear {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the nonlinear problem by windowed Picard iteration.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a diagnostics suite and print a pass/fail summary.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "classical_boussinesq_1")]
        preset: String,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long, default_value_t = 8.0)]
        half_width: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Thm21,
    Thm22,
    Nirenberg,
    Manufactured,
    Identities,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InadmissibleSymbols { .. } | Error::InadmissibleKernels { .. } => 2,
                _ => 1,
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::CheckSymbols {
            symbols,
            preset,
            s,
            p,
            points,
            half_width,
        } => {
            let set = match (symbols, preset) {
                (Some(path), _) => load_symbols(&path)?,
                (None, Some(name)) => preset_symbols(&name)?,
                (None, None) => return Err(Error::Config("give --symbols or --preset".into())),
            };
            check_symbols(&set, s, p, &points, half_width)
        }
        Command::CheckKernels { alpha, beta } => check_kernels(alpha.as_deref(), beta.as_deref()),
        Command::SolveLinear { problem, out } => run_linear(&problem, &out),
        Command::Solve { problem, horizon, out } => run_nonlinear(&problem, horizon, &out),
        Command::Verify {
            suite,
            trials,
            seed,
            out,
            preset,
            points,
            half_width,
            horizon,
        } => {
            let symbols = preset_symbols(&preset)?;
            let n = symbols.n();
            let grid = SpectralGrid::new(n, &vec![points; n], half_width)?;
            run_verify(suite, trials, seed, out.as_deref(), &symbols, &grid, horizon)
        }
    }
}

fn check_symbols(set: &SymbolSet, s: f64, p: f64, points: &[usize], half_width: f64) -> Result<i32> {
    let grid = SpectralGrid::new(set.n(), points, half_width)?;
    let report = check_condition21(set, s, p, &grid);
    println!(
        "symbols: n = {}, orders (L0, L1, L2) = {:?}, s = {s}, p = {p}, grid = {:?}",
        set.n(),
        set.orders(),
        points
    );
    match report.violation() {
        Some((hypothesis, xi)) => println!("REJECTED: {hypothesis} fails at xi = {xi:?}"),
        None => println!("admissible"),
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!("---");
    print!("{}", report.to_key_values());
    Ok(if report.violation().is_some() { 2 } else { 0 })
}

fn check_kernels(alpha: Option<&Path>, beta: Option<&Path>) -> Result<i32> {
    let a = alpha.map(load_kernel).transpose()?;
    let b = beta.map(load_kernel).transpose()?;
    let horizon = a
        .as_ref()
        .or(b.as_ref())
        .map(NonlocalKernel::horizon)
        .ok_or_else(|| Error::Config("give --alpha and/or --beta".into()))?;
    let a = match a {
        Some(k) => k,
        None => NonlocalKernel::zero(horizon)?,
    };
    let b = match b {
        Some(k) => k,
        None => NonlocalKernel::zero(horizon)?,
    };
    let adm = check_admissibility(&a, &b)?;
    // adding zero folds -0.0 into 0.0
    println!("horizon = {horizon}");
    println!("tv_alpha = {:.12e}", adm.tv_alpha + 0.0);
    println!("tv_beta = {:.12e}", adm.tv_beta + 0.0);
    println!("product = {:.12e}", adm.product + 0.0);
    println!("margin = {:.12e}", adm.margin + 0.0);
    println!("admissible = {}", adm.admissible);
    Ok(if adm.admissible { 0 } else { 2 })
}

fn snapshot_name(kind: &str, index: usize) -> String {
    format!("{kind}_{index:04}.bqf")
}

fn run_linear(problem: &Path, out: &Path) -> Result<i32> {
    let cfg = load_problem(problem)?;
    // the gate runs inside the solver; nothing is created before it passes
    let sol = solve_linear(&cfg.linear, &cfg.linear_controls)?;
    let suite = NormSuite::new(cfg.linear.grid().clone(), cfg.linear_controls.s, cfg.linear_controls.p)?;
    let rows: Vec<NormRow> = sol
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| NormRow::from_fields(&suite, t, &sol.u[i], &sol.ut[i]))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out)?;
    for i in 0..sol.times.len() {
        write_snapshot(&out.join(snapshot_name("u", i)), &sol.u[i])?;
        write_snapshot(&out.join(snapshot_name("ut", i)), &sol.ut[i])?;
    }
    write_norms_csv(&out.join("norms.csv"), &rows)?;
    write_diagnostics_csv(&out.join("diagnostics.csv"), &sol.diagnostics)?;
    let d = &sol.diagnostics;
    println!(
        "solved {} output time(s); residual_u = {:.3e}, residual_ut = {:.3e}, min|D| = {:.6e}",
        sol.times.len(),
        d.residual_u,
        d.residual_ut,
        d.min_det
    );
    Ok(0)
}

fn run_nonlinear(problem: &Path, horizon: f64, out: &Path) -> Result<i32> {
    let cfg = load_problem(problem)?;
    let controls = cfg.nonlinear_controls;
    let run = solve_nonlinear(&cfg.nonlinear(), horizon, &controls)?;
    let grid = run.grid.clone();
    let suite = NormSuite::new(grid.clone(), 2.0, controls.p)?;
    let mut fields = Vec::with_capacity(run.outputs.len());
    let mut rows = Vec::with_capacity(run.outputs.len());
    for s in &run.outputs {
        let u = run.field(&s.u)?;
        let ut = run.field(&s.ut)?;
        if !u.is_finite() || !ut.is_finite() {
            break;
        }
        rows.push(NormRow::from_fields(&suite, s.t, &u, &ut)?);
        fields.push((u, ut));
    }
    let monitor: Vec<Vec<f64>> = run
        .trajectory
        .iter()
        .filter(|s| s.monitor.is_finite())
        .map(|s| vec![s.t, s.monitor])
        .collect();
    std::fs::create_dir_all(out)?;
    for (i, (u, ut)) in fields.iter().enumerate() {
        write_snapshot(&out.join(snapshot_name("u", i)), u)?;
        write_snapshot(&out.join(snapshot_name("ut", i)), ut)?;
    }
    write_norms_csv(&out.join("norms.csv"), &rows)?;
    write_run_csv(&out.join("run.csv"), &run.windows)?;
    write_table_csv(&out.join("monitor.csv"), &["t", "monitor"], &monitor)?;
    let record = termination_record(&run.termination, run.windows.len(), run.t_end);
    std::fs::write(out.join("termination.txt"), &record)?;
    print!("{record}");
    Ok(0)
}

fn report_line(report: &EstimateReport) -> String {
    format!(
        "max_ratio = {:.6e}, refined = {:.6e}, change = {:.2}%",
        report.max_ratio,
        report.refined_max_ratio,
        100.0 * report.relative_change
    )
}

fn run_verify(
    suite: Suite,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
    symbols: &SymbolSet,
    grid: &Arc<SpectralGrid>,
    horizon: f64,
) -> Result<i32> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let csv = |name: &str| out.map(|d| d.join(name));
    let pass = match suite {
        Suite::Thm21 | Suite::Thm22 => {
            let list = random_trials(trials, seed, grid.n(), grid.half_width()[0], horizon);
            let settings = EstimateSettings::default();
            let report = if suite == Suite::Thm21 {
                verify_thm21(&list, symbols, grid, &settings)?
            } else {
                verify_thm22(&list, symbols, grid, &settings)?
            };
            if let Some(path) = csv(&format!("{}.csv", report.estimate.label())) {
                write_estimate_csv(&path, &report)?;
            }
            let skipped = report.rows.iter().filter(|r| r.skipped.is_some()).count();
            println!(
                "{}: {} trials ({skipped} skipped), {}",
                report.estimate.label(),
                trials,
                report_line(&report)
            );
            report.stable
        }
        Suite::Nirenberg => {
            let cases = [
                NirenbergExponents {
                    i: 1,
                    m: 2,
                    p: 2.0,
                    q: 2.0,
                    r: 2.0,
                    mu: 0.5,
                },
                NirenbergExponents {
                    i: 0,
                    m: 2,
                    p: 2.0,
                    q: 2.0,
                    r: 2.0,
                    mu: 0.0,
                },
            ];
            let mut rows = Vec::new();
            let mut all = true;
            let bumps = random_trials(trials, seed, grid.n(), grid.half_width()[0], horizon);
            for (ci, e) in cases.iter().enumerate() {
                if e.validate(grid.n()).is_err() {
                    continue;
                }
                let c_est = calibrate_nirenberg(grid, e)?;
                for (ti, t) in bumps.iter().enumerate() {
                    let b: &Bump = t.phi.as_ref().expect("random trials carry data");
                    let u = b.field(grid);
                    let o = nirenberg_check(&u, e, c_est)?;
                    all &= o.ok;
                    rows.push(vec![
                        ci as f64,
                        ti as f64,
                        o.lhs,
                        o.rhs,
                        o.c_est,
                        f64::from(u8::from(o.ok)),
                    ]);
                }
            }
            if let Some(path) = csv("nirenberg.csv") {
                write_table_csv(&path, &["case", "trial", "lhs", "rhs", "c_est", "ok"], &rows)?;
            }
            println!("nirenberg: {} checks", rows.len());
            all
        }
        Suite::Manufactured => {
            let zero = NonlocalKernel::zero(horizon)?;
            let table = PropagatorTable::new(symbols, grid.clone())?;
            // lowest nonzero lattice mode along the first axis
            let mut k = vec![0.0; grid.n()];
            k[0] = std::f64::consts::PI / grid.half_width()[0] * 2.0;
            let mode = grid
                .mode_index(&{
                    let mut j = vec![0i64; grid.n()];
                    j[0] = 2;
                    j
                })
                .ok_or_else(|| Error::InvalidParameter("grid too coarse".into()))?;
            let q = table.q(mode);
            let free = ExactSolution {
                terms: vec![(
                    k.clone(),
                    TimeProfile::Harmonic {
                        amplitude: 1.0,
                        omega: q.re.max(0.0).sqrt(),
                    },
                )],
            };
            let times: Vec<f64> = (1..=4).map(|i| horizon * i as f64 / 4.0).collect();
            let a = manufactured_residual(symbols, &zero, &zero, grid, &free, &times, &[9])?;
            let poly = ExactSolution {
                terms: vec![(k, TimeProfile::Polynomial(vec![0.3, 0.0, 0.5, 0.0, 0.0, 0.4]))],
            };
            let b = manufactured_residual(symbols, &zero, &zero, grid, &poly, &[horizon], &[5, 9, 17, 33])?;
            let order = b.observed_order().unwrap_or(f64::NAN);
            let mut rows = vec![vec![0.0, 9.0, a.errors[0], 0.0]];
            for (i, (&n, &e)) in b.nodes.iter().zip(&b.errors).enumerate() {
                let o = if i == 0 { 0.0 } else { b.orders[i - 1] };
                rows.push(vec![1.0, n as f64, e, o]);
            }
            if let Some(path) = csv("manufactured.csv") {
                write_table_csv(&path, &["case", "nodes", "error", "order"], &rows)?;
            }
            println!(
                "manufactured: free mode error = {:.3e}, polynomial order = {order:.3}, adaptive error = {:.3e}",
                a.errors[0], b.adaptive_error
            );
            a.errors[0] <= 1e-9 && order >= 3.5
        }
        Suite::Identities => {
            let table = PropagatorTable::new(symbols, grid.clone())?;
            let checks = identities_suite(&table, trials.max(1) * 100, seed)?;
            if let Some(path) = csv("identities.csv") {
                write_identity_csv(&path, &checks)?;
            }
            for c in &checks {
                println!(
                    "{}: max_error = {:.3e} (tol {:.0e}) {}",
                    c.name,
                    c.max_error,
                    c.tolerance,
                    if c.passed() { "PASS" } else { "FAIL" }
                );
            }
            checks.iter().all(|c| c.passed())
        }
    };
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { 0 } else { 2 })
}
