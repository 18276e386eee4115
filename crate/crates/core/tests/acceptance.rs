//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Built with `harness = false` so the summary
//! is always printed.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bqsolve::diagnostics::{random_trials, trig_identity_check, verify_thm21, verify_thm22, EstimateSettings};
use bqsolve::duhamel::{GaussianPulse, ZeroSource};
use bqsolve::error::Error;
use bqsolve::grid::{Domain, SpectralField, SpectralGrid};
use bqsolve::io::read_snapshot;
use bqsolve::linear::{solve_linear, LinearControls, LinearProblem};
use bqsolve::nonlinear::{
    solve_nonlinear, NonlinearControls, NonlinearProblem, NonlinearRun, Nonlinearity, Termination, WindowPolicy,
};
use bqsolve::nonlocal::{determinant_unchecked, Atom, DensityProfile, NonlocalKernel, DEFAULT_NODES};
use bqsolve::propagator::PropagatorTable;
use bqsolve::symbols::{classical_boussinesq, OperatorSymbol, SymbolSet};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn gaussian(grid: &Arc<SpectralGrid>, amplitude: f64, center: f64, width: f64) -> SpectralField {
    SpectralField::from_fn(grid.clone(), |x| {
        let r2: f64 = x.iter().map(|v| (v - center) * (v - center)).sum();
        c(amplitude * (-r2 / (width * width)).exp())
    })
}

fn atoms(horizon: f64, list: &[(f64, f64)]) -> NonlocalKernel {
    NonlocalKernel::atoms(
        horizon,
        list.iter()
            .map(|&(location, weight)| Atom { location, weight })
            .collect(),
    )
    .unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    match (out, limit) {
        (Ok(d), Some(l)) if took > l => Err(format!("{d}; took {took:.2?} > {l:?}")),
        (Ok(d), _) => Ok(format!("{d}; {took:.2?}")),
        (Err(d), _) => Err(format!("{d}; {took:.2?}")),
    }
}

fn trig_identity() -> Outcome {
    let grid = SpectralGrid::new(1, &[256], 4.0).map_err(|e| e.to_string())?;
    let table = PropagatorTable::new(&classical_boussinesq(1).unwrap(), grid).map_err(|e| e.to_string())?;
    let r = trig_identity_check(&table, 10_000, 1).map_err(|e| e.to_string())?;
    check(
        r.max_error <= 1e-9,
        format!("max error {:.2e} over 1e4 samples", r.max_error),
    )
}

fn classical_single_mode() -> Outcome {
    let grid = SpectralGrid::new(1, &[32], std::f64::consts::PI).unwrap();
    let times: Vec<f64> = (0..=50).map(|i| 0.1 * i as f64).collect();
    let mut worst = 0.0f64;
    for k in [1.0f64, 2.0, 4.0] {
        let phi = SpectralField::from_fn(grid.clone(), |x| c((k * x[0]).cos()));
        let psi = SpectralField::zeros(grid.clone(), Domain::Physical);
        let mut p = LinearProblem::classical(classical_boussinesq(1).unwrap(), phi, psi, 5.0).unwrap();
        p.output_times = times.clone();
        let sol = solve_linear(&p, &LinearControls::default()).map_err(|e| e.to_string())?;
        let omega = (k * k / (1.0 + k * k)).sqrt();
        for (t, u) in sol.times.iter().zip(&sol.u) {
            for (j, v) in u.values().iter().enumerate() {
                let x = grid.position(j)[0];
                worst = worst.max((v - c((k * x).cos() * (t * omega).cos())).norm());
            }
        }
    }
    check(worst <= 1e-9, format!("max error {worst:.2e} for k in 1,2,4 on [0,5]"))
}

fn density_problem(grid: &Arc<SpectralGrid>, nodes: usize) -> LinearProblem {
    let dens = |a: f64| {
        NonlocalKernel::from_profile(
            1.0,
            DensityProfile::GaussianBump {
                amplitude: a,
                center: 0.5,
                width: 0.3,
            },
            nodes,
        )
        .unwrap()
    };
    LinearProblem {
        symbols: classical_boussinesq(1).unwrap(),
        alpha: dens(0.25),
        beta: dens(-0.2),
        phi: gaussian(grid, 1.0, 0.0, 1.0),
        psi: gaussian(grid, 0.5, 1.0, 1.5),
        source: Arc::new(ZeroSource),
        horizon: 1.0,
        output_times: vec![0.0],
    }
}

fn nonlocal_recovery() -> Outcome {
    let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut atom_worst = 0.0f64;
    for _ in 0..10 {
        let draw = |rng: &mut ChaCha8Rng| {
            let count = rng.gen_range(1..=3);
            let budget: f64 = rng.gen_range(0.05..0.3);
            let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let total: f64 = raw.iter().map(|v: &f64| v.abs()).sum();
            let list: Vec<(f64, f64)> = raw
                .iter()
                .map(|w| (rng.gen_range(0.0..1.0), budget * w / total))
                .collect();
            atoms(1.0, &list)
        };
        let p = LinearProblem {
            symbols: classical_boussinesq(1).unwrap(),
            alpha: draw(&mut rng),
            beta: draw(&mut rng),
            phi: gaussian(&grid, rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), 1.0),
            psi: gaussian(&grid, rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), 1.2),
            source: Arc::new(GaussianPulse {
                amplitude: rng.gen_range(-1.0..1.0),
                center: vec![0.0],
                width: 1.0,
                omega: 2.0,
            }),
            horizon: 1.0,
            output_times: vec![0.0],
        };
        let d = solve_linear(&p, &LinearControls::default())
            .map_err(|e| e.to_string())?
            .diagnostics;
        atom_worst = atom_worst.max(d.residual_u).max(d.residual_ut);
    }
    let residual = |nodes: usize| -> Result<f64, String> {
        let d = solve_linear(&density_problem(&grid, nodes), &LinearControls::default())
            .map_err(|e| e.to_string())?
            .diagnostics;
        Ok(d.residual_u.max(d.residual_ut))
    };
    let density = residual(DEFAULT_NODES)?;
    // least-squares slope of log residual against log interval count
    let pts: Vec<(f64, f64)> = [9usize, 17, 33, 65]
        .iter()
        .map(|&n| Ok((((n - 1) as f64).ln(), residual(n)?.ln())))
        .collect::<Result<_, String>>()?;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = -pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    check(
        atom_worst <= 1e-10 && density <= 1e-7 && slope >= 3.5,
        format!("atom residual {atom_worst:.2e}, density residual {density:.2e}, slope {slope:.2}"),
    )
}

fn random_kernel(rng: &mut ChaCha8Rng, horizon: f64) -> NonlocalKernel {
    if rng.gen_bool(0.5) {
        let count = rng.gen_range(1..=4);
        let list: Vec<(f64, f64)> = (0..count)
            .map(|_| (rng.gen_range(0.0..horizon), rng.gen_range(-0.5..0.5)))
            .collect();
        atoms(horizon, &list)
    } else {
        let nodes = 2 * rng.gen_range(2..40) + 1;
        NonlocalKernel::density(horizon, (0..nodes).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }
}

fn determinant_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = SpectralGrid::new(1, &[8], 1.0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let horizon = rng.gen_range(0.2..4.0);
        let q: Vec<Complex64> = (0..8).map(|_| c(rng.gen_range(0.0..20.0))).collect();
        let table = PropagatorTable::from_values(grid.clone(), q.clone(), q.clone()).map_err(|e| e.to_string())?;
        let a = random_kernel(&mut rng, horizon);
        let b = random_kernel(&mut rng, horizon);
        let dt = determinant_unchecked(&a, &b, &table).map_err(|e| e.to_string())?;
        for (m, qm) in q.iter().enumerate() {
            let root = qm.re.sqrt();
            let mut d = 1.0;
            for (s, w) in a.measure().into_iter().chain(b.measure()) {
                d -= w * (root * s).cos();
            }
            for (s, wa) in a.measure() {
                for (tau, wb) in b.measure() {
                    d += wa * wb * (root * (s - tau)).cos();
                }
            }
            worst = worst.max((dt.matrix(m)[0] * dt.matrix(m)[3] - dt.matrix(m)[1] * dt.matrix(m)[2] - d).norm());
        }
    }
    let zero = NonlocalKernel::zero(1.0).unwrap();
    let big = SpectralGrid::new(2, &[16, 16], 5.0).unwrap();
    let table = PropagatorTable::new(&classical_boussinesq(2).unwrap(), big).map_err(|e| e.to_string())?;
    let unit = determinant_unchecked(&zero, &zero, &table).map_err(|e| e.to_string())?;
    let exact = (0..unit.len()).all(|m| {
        let [a11, a12, a21, a22] = unit.matrix(m);
        a11 * a22 - a12 * a21 == c(1.0)
    });
    check(
        worst <= 1e-9 && exact,
        format!("max |D - double integral| {worst:.2e} over 1000 draws; zero kernels give D = 1: {exact}"),
    )
}

fn classical_nonlinear(
    grid: &Arc<SpectralGrid>,
    f: Nonlinearity,
    phi: SpectralField,
    psi: SpectralField,
    times: Vec<f64>,
) -> NonlinearProblem {
    let horizon = times.last().copied().unwrap_or(1.0);
    NonlinearProblem {
        symbols: classical_boussinesq(grid.n()).unwrap(),
        alpha: NonlocalKernel::zero(horizon).unwrap(),
        beta: NonlocalKernel::zero(horizon).unwrap(),
        phi,
        psi,
        nonlinearity: f,
        output_times: times,
    }
}

fn contraction_certificate() -> Outcome {
    let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio = 0.0f64;
    let mut worst_iters = 0;
    let mut windows = 0;
    for _ in 0..20 {
        let phi = gaussian(
            &grid,
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.8..1.5),
        );
        let psi = gaussian(
            &grid,
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.8..1.5),
        );
        let p = classical_nonlinear(&grid, Nonlinearity::quadratic(), phi, psi, vec![0.5]);
        let run = solve_nonlinear(&p, 0.5, &NonlinearControls::default()).map_err(|e| e.to_string())?;
        if run.termination != Termination::HorizonReached {
            return Err(format!("run ended with {}", run.termination.label()));
        }
        for w in &run.windows {
            worst_ratio = worst_ratio.max(w.max_ratio().unwrap_or(0.0));
            worst_iters = worst_iters.max(w.iterations);
            windows += 1;
        }
    }
    check(
        worst_ratio <= 0.55 && worst_iters <= 50,
        format!("max ratio {worst_ratio:.2e}, max iterations {worst_iters}, {windows} windows over 20 runs"),
    )
}

/// Classical symbols `Q = L = |xi|^2 / (1 + |xi|^2)` integrated in frequency
/// space with RK4, the nonlinear term taken pseudo-spectrally.
fn rk4_reference(
    grid: &Arc<SpectralGrid>,
    f: impl Fn(Complex64) -> Complex64,
    phi: &SpectralField,
    psi: &SpectralField,
    times: &[f64],
    dt: f64,
) -> Vec<SpectralField> {
    let sym: Vec<f64> = (0..grid.len())
        .map(|m| grid.xi_norm_sq(m) / (1.0 + grid.xi_norm_sq(m)))
        .collect();
    let rhs = |u: &[Complex64], v: &[Complex64]| -> (Vec<Complex64>, Vec<Complex64>) {
        let phys = SpectralField::new(grid.clone(), u.to_vec(), Domain::Frequency)
            .unwrap()
            .to_physical()
            .unwrap();
        let fu: Vec<Complex64> = phys.values().iter().map(|&x| f(x)).collect();
        let fh = SpectralField::new(grid.clone(), fu, Domain::Physical)
            .unwrap()
            .to_frequency()
            .unwrap();
        let acc = (0..u.len()).map(|m| sym[m] * (fh.values()[m] - u[m])).collect();
        (v.to_vec(), acc)
    };
    let axpy = |x: &[Complex64], a: f64, y: &[Complex64]| -> Vec<Complex64> {
        x.iter().zip(y).map(|(p, q)| p + a * q).collect()
    };
    let mut u = phi.to_frequency().unwrap().into_values();
    let mut v = psi.to_frequency().unwrap().into_values();
    let mut t = 0.0;
    let mut out = Vec::new();
    for &target in times {
        let steps = ((target - t) / dt).round().max(0.0) as usize;
        let h = if steps > 0 { (target - t) / steps as f64 } else { 0.0 };
        for _ in 0..steps {
            let (k1u, k1v) = rhs(&u, &v);
            let (k2u, k2v) = rhs(&axpy(&u, h / 2.0, &k1u), &axpy(&v, h / 2.0, &k1v));
            let (k3u, k3v) = rhs(&axpy(&u, h / 2.0, &k2u), &axpy(&v, h / 2.0, &k2v));
            let (k4u, k4v) = rhs(&axpy(&u, h, &k3u), &axpy(&v, h, &k3v));
            for m in 0..u.len() {
                u[m] += h / 6.0 * (k1u[m] + 2.0 * k2u[m] + 2.0 * k3u[m] + k4u[m]);
                v[m] += h / 6.0 * (k1v[m] + 2.0 * k2v[m] + 2.0 * k3v[m] + k4v[m]);
            }
        }
        t = target;
        out.push(
            SpectralField::new(grid.clone(), u.clone(), Domain::Frequency)
                .unwrap()
                .to_physical()
                .unwrap(),
        );
    }
    out
}

fn oracle_gap(grid: &Arc<SpectralGrid>, f: Nonlinearity, g: impl Fn(Complex64) -> Complex64) -> Result<f64, String> {
    let times = vec![0.125, 0.25, 0.375, 0.5];
    let phi = gaussian(grid, 1.0, 0.5, 1.5);
    let psi = gaussian(grid, 0.2, -1.0, 1.2);
    let p = classical_nonlinear(grid, f, phi.clone(), psi.clone(), times.clone());
    let run = solve_nonlinear(&p, 0.5, &NonlinearControls::default()).map_err(|e| e.to_string())?;
    if run.outputs.len() != times.len() {
        return Err(format!("{} outputs, expected {}", run.outputs.len(), times.len()));
    }
    let reference = rk4_reference(grid, g, &phi, &psi, &times, 1e-3);
    let mut worst = 0.0f64;
    for (s, r) in run.outputs.iter().zip(&reference) {
        let u = run.field(&s.u).map_err(|e| e.to_string())?;
        let diff = u.combine(c(1.0), r, c(-1.0)).map_err(|e| e.to_string())?;
        worst = worst.max(diff.max_abs());
    }
    Ok(worst)
}

fn nonlinear_oracle() -> Outcome {
    let line = SpectralGrid::new(1, &[32], 8.0).unwrap();
    let plane = SpectralGrid::new(2, &[16, 16], 6.0).unwrap();
    let cases: Vec<(&str, f64)> = vec![
        ("linear", oracle_gap(&line, Nonlinearity::linear(-1.0), |u| -u)?),
        ("quadratic", oracle_gap(&line, Nonlinearity::quadratic(), |u| u * u)?),
        ("cubic", oracle_gap(&line, Nonlinearity::cubic(), |u| u * u * u)?),
        (
            "quadratic 2d",
            oracle_gap(&plane, Nonlinearity::quadratic(), |u| u * u)?,
        ),
    ];
    let worst = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    let detail = cases
        .iter()
        .map(|(name, e)| format!("{name} {e:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(worst <= 1e-5, format!("max L-inf gap vs RK4: {detail}"))
}

fn splice_gap(f: Nonlinearity) -> Result<f64, String> {
    let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
    let times = vec![0.1, 0.2, 0.3, 0.4];
    let p = classical_nonlinear(
        &grid,
        f,
        gaussian(&grid, 0.3, 0.0, 1.0),
        gaussian(&grid, 0.1, 1.0, 1.0),
        times,
    );
    let solve = |len: f64| -> Result<NonlinearRun, String> {
        let controls = NonlinearControls {
            policy: WindowPolicy::Fixed(len),
            ..NonlinearControls::default()
        };
        solve_nonlinear(&p, 0.4, &controls).map_err(|e| e.to_string())
    };
    let one = solve(0.4)?;
    let two = solve(0.2)?;
    if one.windows.len() != 1 || two.windows.len() != 2 {
        return Err(format!("{} and {} windows", one.windows.len(), two.windows.len()));
    }
    let mut worst = 0.0f64;
    for (a, b) in one.outputs.iter().zip(&two.outputs) {
        for (x, y) in a.u.iter().zip(&b.u).chain(a.ut.iter().zip(&b.ut)) {
            worst = worst.max((x - y).norm());
        }
    }
    Ok(worst)
}

fn continuation_splice() -> Outcome {
    let zero = splice_gap(Nonlinearity::zero())?;
    let quad = splice_gap(Nonlinearity::quadratic())?;
    check(
        zero <= 1e-9 && quad <= 1e-6,
        format!("two vs one window: f = 0 gap {zero:.2e}, quadratic gap {quad:.2e}"),
    )
}

fn estimate_stability() -> Outcome {
    let grid = SpectralGrid::new(1, &[64], 8.0).unwrap();
    let symbols = classical_boussinesq(1).unwrap();
    let trials = random_trials(100, 2024, 1, 8.0, 1.0);
    let settings = EstimateSettings::default();
    let mut details = Vec::new();
    let mut ok = true;
    for report in [
        verify_thm21(&trials, &symbols, &grid, &settings).map_err(|e| e.to_string())?,
        verify_thm22(&trials, &symbols, &grid, &settings).map_err(|e| e.to_string())?,
    ] {
        ok &= report.max_ratio.is_finite() && report.stable && report.relative_change < 0.2;
        details.push(format!(
            "{} max {:.4} refined {:.4} change {:.1}%",
            report.estimate.label(),
            report.max_ratio,
            report.refined_max_ratio,
            100.0 * report.relative_change
        ));
    }
    check(ok, details.join(", "))
}

fn admissibility_gate() -> Outcome {
    let grid = SpectralGrid::new(1, &[16], std::f64::consts::PI).unwrap();
    let phi = gaussian(&grid, 1.0, 0.0, 1.0);
    let mut p = LinearProblem::classical(classical_boussinesq(1).unwrap(), phi.clone(), phi.clone(), 1.0).unwrap();
    p.alpha = atoms(1.0, &[(0.5, 0.7)]);
    p.beta = atoms(1.0, &[(0.2, 0.6)]);
    let mut notes = Vec::new();
    match solve_linear(&p, &LinearControls::default()) {
        Err(e @ Error::InadmissibleKernels { margin }) if margin < 0.0 => notes.push(e.to_string()),
        other => return Err(format!("kernel violation not rejected: {other:?}")),
    }
    let nl = NonlinearProblem {
        symbols: p.symbols.clone(),
        alpha: p.alpha.clone(),
        beta: p.beta.clone(),
        phi: phi.clone(),
        psi: phi.clone(),
        nonlinearity: Nonlinearity::quadratic(),
        output_times: vec![1.0],
    };
    if !matches!(
        solve_nonlinear(&nl, 1.0, &NonlinearControls::default()),
        Err(Error::InadmissibleKernels { .. })
    ) {
        return Err("nonlinear solve accepted inadmissible kernels".into());
    }

    // L1 = 1 - xi^2 vanishes on the grid at xi = 1
    p.alpha = NonlocalKernel::zero(1.0).unwrap();
    p.beta = NonlocalKernel::zero(1.0).unwrap();
    let l1 = OperatorSymbol::constant(1, 1.0).with_term(&[2], c(1.0)).unwrap();
    p.symbols = SymbolSet::new(OperatorSymbol::neg_laplacian(1), l1, OperatorSymbol::neg_laplacian(1)).unwrap();
    match solve_linear(&p, &LinearControls::default()) {
        Err(e @ Error::InadmissibleSymbols { .. }) => {
            let Error::InadmissibleSymbols { xi, hypothesis } = &e else {
                unreachable!()
            };
            if (xi[0].abs() - 1.0).abs() > 1e-12 || hypothesis.is_empty() {
                return Err(format!("bad witness: {e}"));
            }
            notes.push(e.to_string());
        }
        other => return Err(format!("symbol violation not rejected: {other:?}")),
    }

    // the CLI must not create any output for a rejected problem
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("a.toml"),
        "type = \"atoms\"\nhorizon = 1.0\n[[atoms]]\nlocation = 0.5\nweight = 0.7\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("b.toml"),
        "type = \"atoms\"\nhorizon = 1.0\n[[atoms]]\nlocation = 0.2\nweight = 0.6\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("p.toml"),
        "preset = \"classical_boussinesq_1\"\nalpha = \"a.toml\"\nbeta = \"b.toml\"\nhorizon = 1.0\n\
         nonlinearity = \"quadratic\"\n[grid]\npoints = [16]\nhalf_width = 3.0\n[phi]\nkind = \"gaussian\"\n\
         amplitude = 1.0\nwidth = 1.0\n",
    )
    .unwrap();
    for args in [vec!["solve-linear", "--out"], vec!["solve", "--horizon", "1", "--out"]] {
        let out = dir.path().join(format!("out-{}", args[0]));
        let res = Command::new(env!("CARGO_BIN_EXE_bqsolve"))
            .args(&args)
            .arg(&out)
            .arg("--problem")
            .arg(dir.path().join("p.toml"))
            .output()
            .map_err(|e| e.to_string())?;
        let stderr = String::from_utf8_lossy(&res.stderr);
        if res.status.code() != Some(2) || out.exists() || !stderr.contains("margin") {
            return Err(format!(
                "cli {} exit {:?}, output exists {}: {stderr}",
                args[0],
                res.status.code(),
                out.exists()
            ));
        }
    }
    check(true, format!("rejected with: {}", notes.join(" | ")))
}

fn finite_outputs(dir: &Path) -> Result<usize, String> {
    let mut cells = 0;
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
                for record in reader.records() {
                    for cell in record.map_err(|e| e.to_string())?.iter() {
                        let v: f64 = cell.parse().map_err(|_| format!("{}: cell '{cell}'", path.display()))?;
                        if !v.is_finite() {
                            return Err(format!("{}: non-finite {cell}", path.display()));
                        }
                        cells += 1;
                    }
                }
            }
            Some("bqf") => {
                let snap = read_snapshot(&path).map_err(|e| e.to_string())?;
                if !snap.values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                    return Err(format!("{}: non-finite snapshot", path.display()));
                }
                cells += snap.values.len();
            }
            _ => {
                let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
                let lower = text.to_ascii_lowercase();
                if lower.contains("nan") || lower.contains("inf") {
                    return Err(format!("{}: {text}", path.display()));
                }
            }
        }
    }
    Ok(cells)
}

fn blow_up_handling() -> Outcome {
    let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
    let phi = gaussian(&grid, 6.0, 0.0, 1.0);
    let psi = SpectralField::zeros(grid.clone(), Domain::Physical);
    let p = classical_nonlinear(&grid, Nonlinearity::quadratic(), phi, psi, vec![0.0, 0.5, 1.0, 5.0]);
    let controls = NonlinearControls {
        policy: WindowPolicy::Adaptive,
        ..NonlinearControls::default()
    };
    let run = solve_nonlinear(&p, 5.0, &controls).map_err(|e| e.to_string())?;
    let Termination::BlowUpDetected {
        crossing_time, monitor, ..
    } = &run.termination
    else {
        return Err(format!("run ended with {}", run.termination.label()));
    };
    let Some(t) = crossing_time.filter(|t| t.is_finite()) else {
        return Err("no crossing time recorded".into());
    };
    let finite = run
        .trajectory
        .iter()
        .chain(&run.outputs)
        .all(|s| s.monitor.is_finite() && s.u.iter().chain(&s.ut).all(|v| v.re.is_finite() && v.im.is_finite()));
    if !finite {
        return Err("non-finite values in the run".into());
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("p.toml"),
        "preset = \"classical_boussinesq_1\"\nhorizon = 5.0\nnonlinearity = \"quadratic\"\n\
         output_times = [0.0, 0.5, 1.0, 5.0]\n[grid]\npoints = [32]\nhalf_width = 8.0\n[phi]\n\
         kind = \"gaussian\"\namplitude = 6.0\nwidth = 1.0\n[controls]\npolicy = \"adaptive\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = Command::new(env!("CARGO_BIN_EXE_bqsolve"))
        .args(["solve", "--horizon", "5", "--problem"])
        .arg(dir.path().join("p.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !res.status.success() {
        return Err(format!("cli failed: {}", String::from_utf8_lossy(&res.stderr)));
    }
    let record = std::fs::read_to_string(out.join("termination.txt")).map_err(|e| e.to_string())?;
    if !record.contains("reason = blow_up_detected") || !record.contains("crossing_time") {
        return Err(format!("termination record: {record}"));
    }
    let cells = finite_outputs(&out)?;
    check(
        true,
        format!(
            "blow_up_detected after {} windows, crossing at t = {t:.4}, monitor {monitor:.3e}; {cells} output values finite",
            run.windows.len()
        ),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 trig identity", Some(5), trig_identity),
        ("2 classical single mode", Some(5), classical_single_mode),
        ("3 nonlocal recovery", None, nonlocal_recovery),
        ("4 determinant oracle", None, determinant_oracle),
        ("5 contraction certificate", None, contraction_certificate),
        ("6 nonlinear RK4 oracle", Some(60), nonlinear_oracle),
        ("7 continuation splice", None, continuation_splice),
        ("8 estimate ratio stability", None, estimate_stability),
        ("9 admissibility gate", None, admissibility_gate),
        ("10 blow-up handling", None, blow_up_handling),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let outcome = timed(limit.map(Duration::from_secs), run);
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
