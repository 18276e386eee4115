//! TOML files for symbols, kernels and problems.
//!
//! A problem file names its symbols (a preset or a symbol file), optional
//! kernels (file paths relative to the problem file, or inline tables), the
//! grid, the initial data, the source and, for nonlinear runs, the
//! nonlinearity and Picard controls. See `problems/` in the repository root
//! for complete files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::Deserialize;

use crate::duhamel::{DuhamelControls, GaussianPulse, SourceTerm, ZeroSource};
use crate::error::{Error, Result};
use crate::grid::{Domain, SpectralField, SpectralGrid};
use crate::linear::{LinearControls, LinearProblem};
use crate::nonlinear::{
    parse_nonlinearity, NonlinearControls, NonlinearProblem, Nonlinearity, StartIterate, WindowPolicy,
};
use crate::nonlocal::{Atom, DensityProfile, NonlocalKernel, DEFAULT_NODES};
use crate::symbols::{preset_symbols, Convention, OperatorSymbol, SymbolSet};

fn parse<'de, T: Deserialize<'de>>(text: &'de str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermEntry {
    alpha: Vec<u32>,
    re: f64,
    #[serde(default)]
    im: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymbolFile {
    preset: Option<String>,
    n: Option<usize>,
    convention: Option<String>,
    #[serde(default)]
    l0: Vec<TermEntry>,
    #[serde(default)]
    l1: Vec<TermEntry>,
    #[serde(default)]
    l2: Vec<TermEntry>,
}

/// Either `preset = "name"` or `n`, an optional `convention`
/// (`fourier`, the default, maps `D^alpha` to `(i xi)^alpha`; `plain` to
/// `xi^alpha`) and `[[l0]]`, `[[l1]]`, `[[l2]]` term lists.
pub fn parse_symbols(text: &str) -> Result<SymbolSet> {
    let f: SymbolFile = parse(text, "symbol file")?;
    if let Some(name) = f.preset {
        if f.n.is_some() || !f.l0.is_empty() || !f.l1.is_empty() || !f.l2.is_empty() {
            return Err(Error::Config("symbol file mixes a preset with explicit terms".into()));
        }
        return preset_symbols(&name);
    }
    let n =
        f.n.ok_or_else(|| Error::Config("symbol file needs `n` or `preset`".into()))?;
    let convention = match f.convention.as_deref().unwrap_or("fourier") {
        "fourier" => Convention::Fourier,
        "plain" => Convention::Plain,
        other => return Err(Error::Config(format!("unknown convention '{other}'"))),
    };
    let build = |terms: &[TermEntry]| -> Result<OperatorSymbol> {
        let mut s = OperatorSymbol::zero(n, convention);
        for t in terms {
            s.add_term(&t.alpha, Complex64::new(t.re, t.im))?;
        }
        Ok(s)
    };
    SymbolSet::new(build(&f.l0)?, build(&f.l1)?, build(&f.l2)?)
}

pub fn load_symbols(path: &Path) -> Result<SymbolSet> {
    parse_symbols(&read(path)?)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomEntry {
    location: f64,
    weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(rename = "type")]
    kind: String,
    horizon: f64,
    profile: Option<String>,
    #[serde(default)]
    params: Vec<f64>,
    nodes: Option<usize>,
    samples: Option<Vec<f64>>,
    #[serde(default)]
    atoms: Vec<AtomEntry>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<NonlocalKernel> {
        match self.kind.as_str() {
            "zero" => NonlocalKernel::zero(self.horizon),
            "atoms" => NonlocalKernel::atoms(
                self.horizon,
                self.atoms
                    .iter()
                    .map(|a| Atom {
                        location: a.location,
                        weight: a.weight,
                    })
                    .collect(),
            ),
            "density" => match (&self.profile, &self.samples) {
                (Some(name), None) => {
                    let p = &self.params;
                    let want = |k: usize| {
                        if p.len() == k {
                            Ok(())
                        } else {
                            Err(Error::Config(format!(
                                "profile '{name}' takes {k} parameter(s), got {}",
                                p.len()
                            )))
                        }
                    };
                    let profile = match name.as_str() {
                        "constant" => want(1).map(|_| DensityProfile::Constant { value: p[0] })?,
                        "linear" => want(2).map(|_| DensityProfile::Linear {
                            intercept: p[0],
                            slope: p[1],
                        })?,
                        "gaussian-bump" => want(3).map(|_| DensityProfile::GaussianBump {
                            amplitude: p[0],
                            center: p[1],
                            width: p[2],
                        })?,
                        other => {
                            return Err(Error::Unknown {
                                kind: "density profile",
                                name: other.to_string(),
                            })
                        }
                    };
                    NonlocalKernel::from_profile(self.horizon, profile, self.nodes.unwrap_or(DEFAULT_NODES))
                }
                (None, Some(samples)) => NonlocalKernel::density(self.horizon, samples.clone()),
                _ => Err(Error::Config(
                    "density kernel needs exactly one of `profile` or `samples`".into(),
                )),
            },
            other => Err(Error::Config(format!("unknown kernel type '{other}'"))),
        }
    }
}

/// `type = "zero" | "density" | "atoms"`, `horizon`, and for densities a
/// `profile` (`constant`, `linear`, `gaussian-bump`) with `params` or
/// explicit `samples`; for atoms a list of `[[atoms]]` tables.
pub fn parse_kernel(text: &str) -> Result<NonlocalKernel> {
    parse::<KernelSpec>(text, "kernel file")?.build()
}

pub fn load_kernel(path: &Path) -> Result<NonlocalKernel> {
    parse_kernel(&read(path)?)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum KernelRef {
    Path(String),
    Inline(KernelSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum HalfWidth {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridEntry {
    points: Vec<usize>,
    half_width: HalfWidth,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum DataEntry {
    Zero,
    Gaussian {
        amplitude: f64,
        #[serde(default)]
        center: Vec<f64>,
        width: f64,
    },
    /// `amplitude cos(k . x)` with physical wavenumbers `k`.
    Cosine {
        k: Vec<f64>,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Samples {
        re: Vec<f64>,
        im: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl DataEntry {
    fn field(&self, grid: &Arc<SpectralGrid>) -> Result<SpectralField> {
        match self {
            DataEntry::Zero => Ok(SpectralField::zeros(grid.clone(), Domain::Physical)),
            DataEntry::Gaussian {
                amplitude,
                center,
                width,
            } => {
                if *width <= 0.0 {
                    return Err(Error::Config(format!("gaussian width {width}")));
                }
                Ok(SpectralField::from_fn(grid.clone(), |x| {
                    let r2: f64 = x
                        .iter()
                        .zip(center.iter().chain(std::iter::repeat(&0.0)))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    Complex64::new(amplitude * (-r2 / (width * width)).exp(), 0.0)
                }))
            }
            DataEntry::Cosine { k, amplitude } => {
                if k.len() != grid.n() {
                    return Err(Error::DimensionMismatch {
                        expected: grid.n(),
                        got: k.len(),
                    });
                }
                Ok(SpectralField::from_fn(grid.clone(), |x| {
                    let phase: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
                    Complex64::new(amplitude * phase.cos(), 0.0)
                }))
            }
            DataEntry::Samples { re, im } => {
                if re.len() != grid.len() || im.as_ref().is_some_and(|im| im.len() != grid.len()) {
                    return Err(Error::DimensionMismatch {
                        expected: grid.len(),
                        got: re.len(),
                    });
                }
                let values = re
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| Complex64::new(r, im.as_ref().map_or(0.0, |im| im[i])))
                    .collect();
                SpectralField::new(grid.clone(), values, Domain::Physical)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum SourceEntry {
    Zero,
    GaussianPulse {
        amplitude: f64,
        #[serde(default)]
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        omega: f64,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadratureEntry {
    initial_nodes: Option<usize>,
    max_nodes: Option<usize>,
    rel_tol: Option<f64>,
    adaptive: Option<bool>,
    residual_refine: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsEntry {
    tol_fp: Option<f64>,
    #[serde(alias = "N_t")]
    nodes: Option<usize>,
    #[serde(alias = "C0")]
    c0: Option<f64>,
    #[serde(alias = "C1")]
    c1: Option<f64>,
    blowup_ceiling: Option<f64>,
    max_iterations: Option<usize>,
    max_windows: Option<usize>,
    min_window: Option<f64>,
    policy: Option<String>,
    window: Option<f64>,
    start: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    symbols: Option<String>,
    preset: Option<String>,
    alpha: Option<KernelRef>,
    beta: Option<KernelRef>,
    horizon: f64,
    #[serde(default)]
    output_times: Vec<f64>,
    s: Option<f64>,
    p: Option<f64>,
    #[serde(default)]
    force: bool,
    grid: GridEntry,
    phi: Option<DataEntry>,
    psi: Option<DataEntry>,
    source: Option<SourceEntry>,
    nonlinearity: Option<String>,
    #[serde(default)]
    quadrature: QuadratureEntry,
    #[serde(default)]
    controls: ControlsEntry,
}

/// A fully resolved problem file.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub linear: LinearProblem,
    pub linear_controls: LinearControls,
    pub nonlinearity: Nonlinearity,
    pub nonlinear_controls: NonlinearControls,
}

impl ProblemConfig {
    pub fn nonlinear(&self) -> NonlinearProblem {
        NonlinearProblem {
            symbols: self.linear.symbols.clone(),
            alpha: self.linear.alpha.clone(),
            beta: self.linear.beta.clone(),
            phi: self.linear.phi.clone(),
            psi: self.linear.psi.clone(),
            nonlinearity: self.nonlinearity.clone(),
            output_times: self.linear.output_times.clone(),
        }
    }
}

/// Parses a problem file; relative paths resolve against `base`.
pub fn parse_problem(text: &str, base: &Path) -> Result<ProblemConfig> {
    let f: ProblemFile = parse(text, "problem file")?;
    let symbols = match (&f.symbols, &f.preset) {
        (Some(path), None) => load_symbols(&resolve(base, path))?,
        (None, Some(name)) => preset_symbols(name)?,
        _ => {
            return Err(Error::Config(
                "problem needs exactly one of `symbols` or `preset`".into(),
            ))
        }
    };
    let n = symbols.n();
    if f.grid.points.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: f.grid.points.len(),
        });
    }
    let widths = match &f.grid.half_width {
        HalfWidth::Uniform(l) => vec![*l; n],
        HalfWidth::PerAxis(v) => v.clone(),
    };
    let grid = SpectralGrid::with_half_widths(n, &f.grid.points, &widths)?;
    let kernel = |k: &Option<KernelRef>| -> Result<NonlocalKernel> {
        match k {
            None => NonlocalKernel::zero(f.horizon),
            Some(KernelRef::Path(p)) => load_kernel(&resolve(base, p)),
            Some(KernelRef::Inline(spec)) => spec.build(),
        }
    };
    let alpha = kernel(&f.alpha)?;
    let beta = kernel(&f.beta)?;
    let zero = DataEntry::Zero;
    let phi = f.phi.as_ref().unwrap_or(&zero).field(&grid)?;
    let psi = f.psi.as_ref().unwrap_or(&zero).field(&grid)?;
    let source: Arc<dyn SourceTerm> = match f.source.clone().unwrap_or(SourceEntry::Zero) {
        SourceEntry::Zero => Arc::new(ZeroSource),
        SourceEntry::GaussianPulse {
            amplitude,
            center,
            width,
            omega,
        } => Arc::new(GaussianPulse {
            amplitude,
            center,
            width,
            omega,
        }),
    };
    let linear = LinearProblem {
        symbols,
        alpha,
        beta,
        phi,
        psi,
        source,
        horizon: f.horizon,
        output_times: f.output_times.clone(),
    };

    let mut lc = LinearControls {
        force: f.force,
        ..Default::default()
    };
    if let Some(s) = f.s {
        lc.s = s;
    }
    if let Some(p) = f.p {
        lc.p = p;
    }
    let q = &f.quadrature;
    let d: &mut DuhamelControls = &mut lc.duhamel;
    if let Some(v) = q.initial_nodes {
        d.initial_nodes = v;
    }
    if let Some(v) = q.max_nodes {
        d.max_nodes = v;
    }
    if let Some(v) = q.rel_tol {
        d.rel_tol = v;
    }
    if let Some(v) = q.adaptive {
        d.adaptive = v;
    }
    if let Some(v) = q.residual_refine {
        lc.residual_refine = v;
    }

    let nonlinearity = match &f.nonlinearity {
        Some(spec) => parse_nonlinearity(spec)?,
        None => Nonlinearity::zero(),
    };
    let c = &f.controls;
    let mut nc = NonlinearControls {
        s: lc.s,
        p: lc.p,
        force: f.force,
        ..Default::default()
    };
    if let Some(v) = c.tol_fp {
        nc.tol_fp = v;
    }
    if let Some(v) = c.nodes {
        nc.nodes = v;
    }
    if let Some(v) = c.c0 {
        nc.c0 = v;
    }
    if let Some(v) = c.c1 {
        nc.c1 = v;
    }
    if let Some(v) = c.blowup_ceiling {
        nc.blowup_ceiling = v;
    }
    if let Some(v) = c.max_iterations {
        nc.max_iterations = v;
    }
    if let Some(v) = c.max_windows {
        nc.max_windows = v;
    }
    if let Some(v) = c.min_window {
        nc.min_window = v;
    }
    nc.policy = match (c.policy.as_deref(), c.window) {
        (None | Some("certified"), None) => WindowPolicy::Certified,
        (Some("adaptive"), None) => WindowPolicy::Adaptive,
        (Some("fixed") | None, Some(w)) => WindowPolicy::Fixed(w),
        (Some(other), _) => {
            return Err(Error::Config(format!(
                "bad window policy '{other}' (or stray `window`)"
            )))
        }
    };
    nc.start = match c.start.as_deref() {
        None | Some("linear") => StartIterate::Linear,
        Some("zero") => StartIterate::Zero,
        Some(other) => return Err(Error::Config(format!("unknown start iterate '{other}'"))),
    };
    for (name, v) in [("c0", nc.c0), ("c1", nc.c1)] {
        if !(v >= 1.0) {
            return Err(Error::Config(format!("{name} = {v} must be at least 1")));
        }
    }
    if !(nc.tol_fp > 0.0) || !(nc.blowup_ceiling > 0.0) {
        return Err(Error::Config("tol_fp and blowup_ceiling must be positive".into()));
    }

    Ok(ProblemConfig {
        linear,
        linear_controls: lc,
        nonlinearity,
        nonlinear_controls: nc,
    })
}

pub fn load_problem(path: &Path) -> Result<ProblemConfig> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_problem(&read(path)?, &base)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
