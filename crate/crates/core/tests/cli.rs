use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bqsolve::io::read_snapshot;

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn bqsolve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bqsolve"))
        .current_dir(problems())
        .args(args)
        .output()
        .expect("spawn bqsolve")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| {
            r.unwrap()
                .iter()
                .map(|c| match c {
                    "true" => 1.0,
                    "false" => 0.0,
                    _ => c.parse::<f64>().unwrap(),
                })
                .collect()
        })
        .collect()
}

#[test]
fn check_symbols_reports_admissible_sets() {
    let o = bqsolve(&[
        "check-symbols",
        "--preset",
        "app1_2d",
        "--points",
        "16,16",
        "--half-width",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("admissible = true"));
    let o = bqsolve(&["check-symbols", "--symbols", "symbols_1d.toml"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn check_kernels_exit_codes() {
    let o = bqsolve(&[
        "check-kernels",
        "--alpha",
        "alpha_atoms.toml",
        "--beta",
        "beta_density.toml",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("admissible = true"));
    let o = bqsolve(&["check-kernels", "--alpha", "alpha_bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("admissible = false"));
    assert!(!text.contains("-0.0"), "{text}");
}

#[test]
fn solve_linear_writes_snapshots_and_norms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bqsolve(&[
        "solve-linear",
        "--problem",
        "classical.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let norms = csv_rows(&out.join("norms.csv"));
    assert_eq!(norms.len(), 4);
    assert_eq!(norms[3][0], 5.0);
    // u(x, 5) = cos(2x) cos(5 sqrt(4/5))
    let snap = read_snapshot(&out.join("u_0003.bqf")).unwrap();
    assert_eq!(snap.points, vec![32]);
    let amp = (5.0 * (0.8f64).sqrt()).cos();
    for (j, v) in snap.values.iter().enumerate() {
        let x = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / 32.0;
        assert!((v.re - (2.0 * x).cos() * amp).abs() < 1e-10);
    }
    assert!((norms[3][1] - amp.abs()).abs() < 1e-10);
    assert_eq!(csv_rows(&out.join("diagnostics.csv")).len(), 1);
}

#[test]
fn solve_linear_nonlocal_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bqsolve(&[
        "solve-linear",
        "--problem",
        "nonlocal.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let d = &csv_rows(&out.join("diagnostics.csv"))[0];
    assert!(d[0] < 1e-7 && d[1] < 1e-7, "{d:?}");
    assert!(d[2] > 0.5);
}

#[test]
fn inadmissible_problem_creates_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.toml");
    let text = std::fs::read_to_string(problems().join("quadratic.toml")).unwrap();
    let bad = problems().join("alpha_bad.toml");
    std::fs::write(
        &problem,
        format!(
            "alpha = {:?}\n{}",
            bad.to_str().unwrap(),
            text.replace("horizon = 2.0", "horizon = 1.0")
                .replace("1.0, 2.0]", "1.0]")
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    for args in [
        vec![
            "solve-linear",
            "--problem",
            problem.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        vec![
            "solve",
            "--problem",
            problem.to_str().unwrap(),
            "--horizon",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
    ] {
        let o = bqsolve(&args);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("margin"));
        assert!(!out.exists());
    }
}

#[test]
fn nonlinear_solve_reaches_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bqsolve(&[
        "solve",
        "--problem",
        "quadratic.toml",
        "--horizon",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let record = std::fs::read_to_string(out.join("termination.txt")).unwrap();
    assert!(record.contains("reason = horizon_reached"), "{record}");
    let windows = csv_rows(&out.join("run.csv"));
    assert!(!windows.is_empty());
    assert!(windows.iter().all(|w| w[4] <= 0.55 && w[3] <= 50.0));
    let end: f64 = windows.iter().map(|w| w[1] + w[2]).fold(0.0, f64::max);
    assert!((end - 2.0).abs() < 1e-9);
    assert_eq!(csv_rows(&out.join("norms.csv")).len(), 3);
    assert!(out.join("ut_0002.bqf").exists());
}

#[test]
fn nonlinear_solve_flags_blow_up() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bqsolve(&[
        "solve",
        "--problem",
        "blowup.toml",
        "--horizon",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let record = std::fs::read_to_string(out.join("termination.txt")).unwrap();
    assert!(record.contains("reason = blow_up_detected"));
    let crossing = record
        .lines()
        .find_map(|l| l.strip_prefix("crossing_time = "))
        .and_then(|v| v.parse::<f64>().ok())
        .unwrap();
    assert!(crossing > 0.5 && crossing < 5.0);
    let monitor = csv_rows(&out.join("monitor.csv"));
    assert!(monitor.iter().flatten().all(|v| v.is_finite()));
    assert!((monitor.last().unwrap()[0] - crossing).abs() < 1e-12);
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (suite, trials, file) in [
        ("identities", "10", "identities.csv"),
        ("nirenberg", "10", "nirenberg.csv"),
        ("manufactured", "1", "manufactured.csv"),
        ("thm21", "8", "thm21.csv"),
        ("thm22", "8", "thm22.csv"),
    ] {
        let o = bqsolve(&[
            "verify", "--suite", suite, "--trials", trials, "--seed", "3", "--out", out,
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{suite}: {}{}",
            stdout(&o),
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(stdout(&o).trim_end().ends_with("PASS"), "{suite}: {}", stdout(&o));
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn usage_and_config_errors() {
    // exit code 2 is reserved for rejected input
    assert_eq!(bqsolve(&["solve"]).status.code(), Some(1));
    assert_eq!(bqsolve(&["--help"]).status.code(), Some(0));
    let o = bqsolve(&["solve-linear", "--problem", "missing.toml", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new("/tmp/never").exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
}
