//! The nonlinear problem `u_tt + L0 u_tt + L1 u = L2 f(u)` by Picard
//! iteration of
//!
//! ```text
//! G(u)(t) = S1(t) phi + S2(t) psi + int_0^t F^{-1}[S(t - tau) L f(u)^(tau)] dtau
//! ```
//!
//! on short windows, restarting each window from the end state of the last.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Domain, SpectralField, SpectralGrid};
use crate::linear::{admissibility_gate, LinearSystem};
use crate::nonlocal::{solve_initial_pair, NonlocalKernel};
use crate::norms::NormSuite;
use crate::propagator::PropagatorTable;
use crate::quadrature::{cumulative_weights, lagrange4, simpson_weights};
use crate::symbols::SymbolSet;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

type CustomFn = dyn Fn(&[f64], f64, Complex64) -> Complex64 + Send + Sync;
type MajorantFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Zero,
    Linear(f64),
    Quadratic,
    Cubic,
    Sine,
    Custom,
}

/// A nonlinearity `f` with a majorant
/// `fbar(r) >= max_{|x| <= r} max(|f'(x)|, |f''(x)|)`.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    kind: Kind,
    custom: Option<Arc<CustomFn>>,
    majorant: Option<Arc<MajorantFn>>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity").field("name", &self.name).finish()
    }
}

impl Nonlinearity {
    fn builtin(name: String, kind: Kind) -> Self {
        Self {
            name,
            kind,
            custom: None,
            majorant: None,
        }
    }

    pub fn zero() -> Self {
        Self::builtin("zero".into(), Kind::Zero)
    }

    pub fn linear(c: f64) -> Self {
        Self::builtin(format!("linear({c})"), Kind::Linear(c))
    }

    pub fn quadratic() -> Self {
        Self::builtin("quadratic".into(), Kind::Quadratic)
    }

    pub fn cubic() -> Self {
        Self::builtin("cubic".into(), Kind::Cubic)
    }

    pub fn sine() -> Self {
        Self::builtin("sine".into(), Kind::Sine)
    }

    /// `f(x, t, u)` with a caller-supplied majorant.
    pub fn custom(
        name: &str,
        f: impl Fn(&[f64], f64, Complex64) -> Complex64 + Send + Sync + 'static,
        majorant: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind: Kind::Custom,
            custom: Some(Arc::new(f)),
            majorant: Some(Arc::new(majorant)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_zero(&self) -> bool {
        self.kind == Kind::Zero
    }

    pub fn eval(&self, x: &[f64], t: f64, u: Complex64) -> Complex64 {
        match self.kind {
            Kind::Zero => ZERO,
            Kind::Linear(c) => c * u,
            Kind::Quadratic => u * u,
            Kind::Cubic => u * u * u,
            Kind::Sine => u.sin(),
            Kind::Custom => (self.custom.as_ref().expect("custom evaluator"))(x, t, u),
        }
    }

    /// `f^(k)(u)` for `k` in 1..=3; `None` for custom evaluators.
    pub fn derivative(&self, k: u32, u: Complex64) -> Option<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        Some(match (self.kind, k) {
            (Kind::Zero, _) => ZERO,
            (Kind::Linear(c), 1) => Complex64::new(c, 0.0),
            (Kind::Linear(_), _) => ZERO,
            (Kind::Quadratic, 1) => 2.0 * u,
            (Kind::Quadratic, 2) => 2.0 * one,
            (Kind::Quadratic, _) => ZERO,
            (Kind::Cubic, 1) => 3.0 * u * u,
            (Kind::Cubic, 2) => 6.0 * u,
            (Kind::Cubic, _) => 6.0 * one,
            (Kind::Sine, 1) => u.cos(),
            (Kind::Sine, 2) => -u.sin(),
            (Kind::Sine, _) => -u.cos(),
            (Kind::Custom, _) => return None,
        })
    }

    pub fn majorant(&self, r: f64) -> f64 {
        let r = r.abs();
        match self.kind {
            Kind::Zero => 0.0,
            Kind::Linear(c) => c.abs(),
            Kind::Quadratic => (2.0 * r).max(2.0),
            Kind::Cubic => (3.0 * r * r).max(6.0 * r),
            Kind::Sine => 1.0,
            Kind::Custom => (self.majorant.as_ref().expect("custom majorant"))(r),
        }
    }
}

/// Registry lookup: `zero`, `linear` (one parameter), `quadratic`, `cubic`, `sine`.
pub fn register_nonlinearity(name: &str, params: &[f64]) -> Result<Nonlinearity> {
    let arity = |n: usize| {
        if params.len() == n {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "nonlinearity '{name}' takes {n} parameter(s), got {}",
                params.len()
            )))
        }
    };
    match name {
        "zero" => arity(0).map(|_| Nonlinearity::zero()),
        "linear" => arity(1).map(|_| Nonlinearity::linear(params[0])),
        "quadratic" => arity(0).map(|_| Nonlinearity::quadratic()),
        "cubic" => arity(0).map(|_| Nonlinearity::cubic()),
        "sine" => arity(0).map(|_| Nonlinearity::sine()),
        _ => Err(Error::Unknown {
            kind: "nonlinearity",
            name: name.to_string(),
        }),
    }
}

/// Parses `name` or `name(p1, p2, ...)`.
pub fn parse_nonlinearity(spec: &str) -> Result<Nonlinearity> {
    let spec = spec.trim();
    let (name, params) = match spec.find('(') {
        Some(open) => {
            let close = spec
                .rfind(')')
                .filter(|&c| c > open && c == spec.len() - 1)
                .ok_or_else(|| Error::Config(format!("malformed nonlinearity '{spec}'")))?;
            let inner = &spec[open + 1..close];
            let params = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad parameter '{s}' in '{spec}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            (spec[..open].trim(), params)
        }
        None => (spec, Vec::new()),
    };
    register_nonlinearity(name, &params)
}

/// Largest window for which `G` maps the ball of radius `M + 1` into itself
/// and contracts with factor one half, for constants `C0`, `C1`.
pub fn max_window(m: f64, c0: f64, c1: f64, fbar: impl Fn(f64) -> f64) -> f64 {
    let r = m + 1.0;
    let f = fbar(r);
    let first = 1.0 / (r * (1.0 + 2.0 * c0 * r * f));
    let second = 0.5 / (1.0 + c1 * r * r * f);
    first.min(second)
}

/// `||u||_{Y^{2,p}} + ||u||_inf + ||u_t||_{Y^{2,p}} + ||u_t||_inf`;
/// infinite when any value is non-finite.
pub fn blowup_monitor(u: &SpectralField, ut: &SpectralField, p: f64) -> Result<f64> {
    if !u.is_finite() || !ut.is_finite() {
        return Ok(f64::INFINITY);
    }
    let suite = NormSuite::new(u.grid().clone(), 2.0, p)?;
    Ok(suite.ysp(u)? + suite.linf(u)? + suite.ysp(ut)? + suite.linf(ut)?)
}

fn monitor_hat(suite: &NormSuite, u: &[Complex64], ut: &[Complex64]) -> Result<f64> {
    if u.iter().chain(ut).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let (a, _, b) = suite.triple_hat(u)?;
    let (c, _, d) = suite.triple_hat(ut)?;
    Ok(a + b + c + d)
}

/// Data of the full nonlinear problem.
#[derive(Debug, Clone)]
pub struct NonlinearProblem {
    pub symbols: SymbolSet,
    pub alpha: NonlocalKernel,
    pub beta: NonlocalKernel,
    pub phi: SpectralField,
    pub psi: SpectralField,
    pub nonlinearity: Nonlinearity,
    /// Times at which the solution is sampled exactly.
    pub output_times: Vec<f64>,
}

impl NonlinearProblem {
    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.phi.grid()
    }

    pub fn kernels_active(&self) -> bool {
        !(self.alpha.is_zero() && self.beta.is_zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowPolicy {
    /// Window length from [`max_window`] at the current data size.
    Certified,
    /// Start certified; double after a window whose largest measured
    /// contraction ratio stays below `grow_below`.
    Adaptive,
    /// Constant window length.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartIterate {
    /// Homogeneous evolution of the window data.
    Linear,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearControls {
    /// Uniform trajectory nodes per window.
    pub nodes: usize,
    pub tol_fp: f64,
    pub max_iterations: usize,
    pub c0: f64,
    pub c1: f64,
    pub blowup_ceiling: f64,
    pub max_windows: usize,
    /// Smallest window length tried after repeated contraction failures.
    pub min_window: f64,
    pub policy: WindowPolicy,
    pub grow_below: f64,
    pub start: StartIterate,
    /// Exponent of the Y^{2,p} norms.
    pub p: f64,
    /// Sobolev index for the symbol admissibility scan.
    pub s: f64,
    pub force: bool,
}

impl Default for NonlinearControls {
    fn default() -> Self {
        Self {
            nodes: 33,
            tol_fp: 1e-10,
            max_iterations: 50,
            c0: 1.0,
            c1: 1.0,
            blowup_ceiling: 1e8,
            max_windows: 100_000,
            min_window: 1e-9,
            policy: WindowPolicy::Certified,
            grow_below: 0.25,
            start: StartIterate::Linear,
            p: 2.0,
            s: 2.0,
            force: false,
        }
    }
}

/// Initial data of one window, in frequency space.
#[derive(Debug, Clone)]
pub struct WindowData {
    pub t_start: f64,
    pub u0: Vec<Complex64>,
    pub u1: Vec<Complex64>,
    /// The integral conditions bind on this window.
    pub nonlocal: bool,
}

/// Classical data for the next window from the end state of the last.
pub fn continuation_step(u_end: &[Complex64], ut_end: &[Complex64], t_end: f64) -> Result<WindowData> {
    if u_end
        .iter()
        .chain(ut_end)
        .any(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(Error::NonFinite(format!("end state at t = {t_end}")));
    }
    Ok(WindowData {
        t_start: t_end,
        u0: u_end.to_vec(),
        u1: ut_end.to_vec(),
        nonlocal: false,
    })
}

/// `u` and `u_t` on the window nodes, node-major, frequency space.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: Vec<Vec<Complex64>>,
    pub ut: Vec<Vec<Complex64>>,
}

impl Trajectory {
    pub fn zeros(nodes: usize, modes: usize) -> Self {
        Self {
            u: vec![vec![ZERO; modes]; nodes],
            ut: vec![vec![ZERO; modes]; nodes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .chain(&self.ut)
            .flatten()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Everything needed to apply `G` on one window.
pub struct PicardWindow<'a> {
    system: &'a LinearSystem,
    nonlinearity: &'a Nonlinearity,
    data: WindowData,
    length: f64,
    nodes: usize,
    h: f64,
    weights: Vec<Vec<f64>>,
    /// `C(d h)`, `S(d h)` for lags `d = 0..nodes`, mode-major.
    lag_c: Vec<Complex64>,
    lag_s: Vec<Complex64>,
    alpha_w: Vec<f64>,
    beta_w: Vec<f64>,
}

impl<'a> PicardWindow<'a> {
    pub fn new(
        system: &'a LinearSystem,
        nonlinearity: &'a Nonlinearity,
        data: WindowData,
        length: f64,
        nodes: usize,
    ) -> Result<Self> {
        if nodes < 4 {
            return Err(Error::InvalidParameter("need at least four trajectory nodes".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("window length {length}")));
        }
        let table = system.table();
        let modes = table.len();
        let h = length / (nodes - 1) as f64;
        let lags: Vec<(Complex64, Complex64)> = (0..modes * nodes)
            .into_par_iter()
            .map(|i| table.cos_sin(i / nodes, (i % nodes) as f64 * h))
            .collect::<Result<_>>()?;
        let (lag_c, lag_s) = lags.into_iter().unzip();
        let (alpha_w, beta_w) = if data.nonlocal {
            let horizon = system.alpha().horizon();
            if (horizon - length).abs() > 1e-12 * horizon {
                return Err(Error::HorizonMismatch(horizon, length));
            }
            (system.alpha().functional_on(nodes), system.beta().functional_on(nodes))
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            system,
            nonlinearity,
            data,
            length,
            nodes,
            h,
            weights: cumulative_weights(nodes, h),
            lag_c,
            lag_s,
            alpha_w,
            beta_w,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn node_time(&self, k: usize) -> f64 {
        self.data.t_start + k as f64 * self.h
    }

    fn table(&self) -> &PropagatorTable {
        self.system.table()
    }

    fn grid(&self) -> &Arc<SpectralGrid> {
        self.table().grid()
    }

    /// `L f(u)^` at every node.
    pub fn forcing(&self, traj: &Trajectory) -> Vec<Vec<Complex64>> {
        let grid = self.grid();
        let table = self.table();
        (0..self.nodes)
            .into_par_iter()
            .map(|k| {
                if self.nonlinearity.is_zero() {
                    return vec![ZERO; table.len()];
                }
                let t = self.node_time(k);
                let mut v = traj.u[k].clone();
                grid.fft_inverse(&mut v);
                for (site, x) in v.iter_mut().enumerate() {
                    *x = self.nonlinearity.eval(grid.position(site), t, *x);
                }
                grid.fft_forward(&mut v);
                for (m, x) in v.iter_mut().enumerate() {
                    *x *= table.l(m);
                }
                v
            })
            .collect()
    }

    /// Duhamel terms `(w, w_t)` at every node from node samples of the forcing.
    fn duhamel(&self, f: &[Vec<Complex64>]) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let modes = self.table().len();
        let n = self.nodes;
        let per_mode: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..modes)
            .into_par_iter()
            .map(|m| {
                let lc = &self.lag_c[m * n..(m + 1) * n];
                let ls = &self.lag_s[m * n..(m + 1) * n];
                let mut w = vec![ZERO; n];
                let mut wt = vec![ZERO; n];
                for j in 1..n {
                    let row = &self.weights[j];
                    for (k, &wk) in row.iter().enumerate() {
                        if wk == 0.0 {
                            continue;
                        }
                        let fk = f[k][m];
                        // S is odd and C even in the lag
                        let (c, s) = if k <= j {
                            (lc[j - k], ls[j - k])
                        } else {
                            (lc[k - j], -ls[k - j])
                        };
                        w[j] += wk * s * fk;
                        wt[j] += wk * c * fk;
                    }
                }
                (w, wt)
            })
            .collect();
        let mut w = vec![vec![ZERO; modes]; n];
        let mut wt = vec![vec![ZERO; modes]; n];
        for (m, (a, b)) in per_mode.into_iter().enumerate() {
            for j in 0..n {
                w[j][m] = a[j];
                wt[j][m] = b[j];
            }
        }
        (w, wt)
    }

    /// Initial pair of the window given the Duhamel terms.
    fn pair(&self, w: &[Vec<Complex64>], wt: &[Vec<Complex64>]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        if !self.data.nonlocal {
            return Ok((self.data.u0.clone(), self.data.u1.clone()));
        }
        let modes = self.table().len();
        let mut f1 = self.data.u0.clone();
        let mut f2 = self.data.u1.clone();
        for k in 0..self.nodes {
            for m in 0..modes {
                f1[m] += self.alpha_w[k] * w[k][m];
                f2[m] += self.beta_w[k] * wt[k][m];
            }
        }
        solve_initial_pair(self.system.determinant(), &f1, &f2)
    }

    fn assemble(&self, u0: &[Complex64], u1: &[Complex64], w: &[Vec<Complex64>], wt: &[Vec<Complex64>]) -> Trajectory {
        let modes = self.table().len();
        let n = self.nodes;
        let mut out = Trajectory::zeros(n, modes);
        for m in 0..modes {
            let q = self.table().q(m);
            for j in 0..n {
                let c = self.lag_c[m * n + j];
                let s = self.lag_s[m * n + j];
                out.u[j][m] = c * u0[m] + s * u1[m] + w[j][m];
                out.ut[j][m] = -q * s * u0[m] + c * u1[m] + wt[j][m];
            }
        }
        out
    }

    /// `G(u)` at the window nodes.
    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        let f = self.forcing(traj);
        let (w, wt) = self.duhamel(&f);
        let (u0, u1) = self.pair(&w, &wt)?;
        Ok(self.assemble(&u0, &u1, &w, &wt))
    }

    /// Solution of the window problem with zero forcing.
    pub fn homogeneous(&self) -> Result<Trajectory> {
        let modes = self.table().len();
        let zero = vec![vec![ZERO; modes]; self.nodes];
        let (u0, u1) = self.pair(&zero, &zero)?;
        Ok(self.assemble(&u0, &u1, &zero, &zero))
    }

    /// `(u_hat, u_t_hat)` at `t_start + tau` for a converged trajectory; the
    /// forcing is interpolated by cubics between nodes.
    pub fn evaluate(&self, traj: &Trajectory, tau: f64) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let tau = tau.clamp(0.0, self.length);
        let pos = tau / self.h;
        if (pos - pos.round()).abs() < 1e-9 {
            let k = pos.round() as usize;
            return Ok((traj.u[k].clone(), traj.ut[k].clone()));
        }
        let f = self.forcing(traj);
        let (w_nodes, wt_nodes) = self.duhamel(&f);
        let (u0, u1) = self.pair(&w_nodes, &wt_nodes)?;
        let table = self.table();
        let sub = 2 * (pos.ceil() as usize).max(2);
        let qw = simpson_weights(sub + 1, 0.0, tau);
        let samples: Vec<Vec<Complex64>> = (0..=sub)
            .map(|i| {
                let s = tau * i as f64 / sub as f64;
                (0..table.len())
                    .map(|m| {
                        let col: Vec<Complex64> = f.iter().map(|fk| fk[m]).collect();
                        lagrange4(0.0, self.h, &col, s)
                    })
                    .collect()
            })
            .collect();
        let mut u = Vec::with_capacity(table.len());
        let mut ut = Vec::with_capacity(table.len());
        for m in 0..table.len() {
            let mut w = ZERO;
            let mut wt = ZERO;
            for (i, wi) in qw.iter().enumerate() {
                let s = tau * i as f64 / sub as f64;
                let (c, sn) = table.cos_sin(m, tau - s)?;
                w += wi * sn * samples[i][m];
                wt += wi * c * samples[i][m];
            }
            let (c, sn) = table.cos_sin(m, tau)?;
            u.push(c * u0[m] + sn * u1[m] + w);
            ut.push(-table.q(m) * sn * u0[m] + c * u1[m] + wt);
        }
        Ok((u, ut))
    }
}

/// `G(u)` on a window.
pub fn picard_map(window: &PicardWindow<'_>, u: &Trajectory) -> Result<Trajectory> {
    window.apply(u)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    HorizonReached,
    BlowUpDetected {
        /// First node time where the monitor exceeded the ceiling, if any.
        crossing_time: Option<f64>,
        monitor: f64,
        detail: String,
    },
    MaxWindows,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::HorizonReached => "horizon_reached",
            Termination::BlowUpDetected { .. } => "blow_up_detected",
            Termination::MaxWindows => "max_windows",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub index: usize,
    pub t_start: f64,
    pub length: f64,
    /// Data size `M` at the window start.
    pub m: f64,
    pub iterations: usize,
    /// Successive-difference ratios from the second iteration on.
    pub ratios: Vec<f64>,
    pub differences: Vec<f64>,
    /// Largest `||G(u)||_{Y(T)}` over the accepted iterates.
    pub max_iterate_norm: f64,
    pub monitor: f64,
    /// Halvings before the window contracted.
    pub retries: usize,
}

impl WindowRecord {
    pub fn final_ratio(&self) -> Option<f64> {
        self.ratios.last().copied()
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub u: Vec<Complex64>,
    pub ut: Vec<Complex64>,
    pub monitor: f64,
}

#[derive(Debug, Clone)]
pub struct NonlinearRun {
    pub grid: Arc<SpectralGrid>,
    pub windows: Vec<WindowRecord>,
    pub termination: Termination,
    /// Every trajectory node, windows spliced, up to termination.
    pub trajectory: Vec<Sample>,
    /// Requested output times reached before termination.
    pub outputs: Vec<Sample>,
    /// Recovered initial pair of the first window.
    pub u0: Vec<Complex64>,
    pub u1: Vec<Complex64>,
    pub t_end: f64,
}

impl NonlinearRun {
    pub fn field(&self, hat: &[Complex64]) -> Result<SpectralField> {
        SpectralField::new(self.grid.clone(), hat.to_vec(), Domain::Frequency)?.to_physical()
    }
}

struct Converged {
    traj: Trajectory,
    iterations: usize,
    ratios: Vec<f64>,
    differences: Vec<f64>,
    max_norm: f64,
}

enum Attempt {
    Converged(Converged),
    Failed(String),
}

fn y_norm(suite: &NormSuite, traj: &[Vec<Complex64>]) -> Result<f64> {
    let mut ysp = 0.0f64;
    let mut linf = 0.0f64;
    for v in traj {
        let (a, _, b) = suite.triple_hat(v)?;
        linf = linf.max(a);
        ysp = ysp.max(b);
    }
    Ok(ysp + linf)
}

fn y_diff(suite: &NormSuite, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let d: Vec<Vec<Complex64>> =
        a.u.iter()
            .zip(&b.u)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
            .collect();
    y_norm(suite, &d)
}

fn iterate(window: &PicardWindow<'_>, suite: &NormSuite, controls: &NonlinearControls) -> Result<Attempt> {
    let mut current = match controls.start {
        StartIterate::Linear => window.homogeneous()?,
        StartIterate::Zero => Trajectory::zeros(window.nodes, window.table().len()),
    };
    let mut ratios = Vec::new();
    let mut differences = Vec::new();
    let mut max_norm = 0.0f64;
    let mut bad_streak = 0;
    for it in 1..=controls.max_iterations {
        let next = window.apply(&current)?;
        if !next.is_finite() {
            return Ok(Attempt::Failed(format!("non-finite iterate at iteration {it}")));
        }
        let norm = y_norm(suite, &next.u)?;
        max_norm = max_norm.max(norm);
        let diff = y_diff(suite, &next, &current)?;
        if !diff.is_finite() {
            return Ok(Attempt::Failed(format!("non-finite difference at iteration {it}")));
        }
        if let Some(&prev) = differences.last() {
            let ratio = if prev > 0.0 { diff / prev } else { 0.0 };
            ratios.push(ratio);
            if ratio >= 1.0 {
                bad_streak += 1;
            } else {
                bad_streak = 0;
            }
        }
        differences.push(diff);
        current = next;
        if diff < controls.tol_fp * norm.max(1.0) {
            return Ok(Attempt::Converged(Converged {
                traj: current,
                iterations: it,
                ratios,
                differences,
                max_norm,
            }));
        }
        if bad_streak >= 3 {
            return Ok(Attempt::Failed(format!(
                "contraction ratio >= 1 for three iterations (last {:.3})",
                ratios.last().copied().unwrap_or(f64::NAN)
            )));
        }
    }
    Ok(Attempt::Failed(format!(
        "no convergence in {} iterations (last difference {:.3e})",
        controls.max_iterations,
        differences.last().copied().unwrap_or(f64::NAN)
    )))
}

fn data_size(suite: &NormSuite, u0: &[Complex64], u1: &[Complex64]) -> Result<f64> {
    let (a, _, b) = suite.triple_hat(u0)?;
    let (c, _, d) = suite.triple_hat(u1)?;
    Ok(a + b + c + d)
}

/// Picard iteration window by window up to `horizon` or blow-up.
pub fn solve_nonlinear(problem: &NonlinearProblem, horizon: f64, controls: &NonlinearControls) -> Result<NonlinearRun> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
    }
    if !problem.phi.same_grid(&problem.psi) {
        return Err(Error::GridMismatch);
    }
    if !problem.phi.is_finite() || !problem.psi.is_finite() {
        return Err(Error::NonFinite("initial data".into()));
    }
    let grid = problem.grid().clone();
    admissibility_gate(
        &problem.symbols,
        &problem.alpha,
        &problem.beta,
        &grid,
        controls.s,
        controls.p,
        controls.force,
    )?;
    let system = LinearSystem::new(&problem.symbols, &problem.alpha, &problem.beta, grid.clone())?;
    let suite = NormSuite::new(grid.clone(), 2.0, controls.p)?;
    let nonlocal = problem.kernels_active();
    if nonlocal && problem.alpha.horizon() > horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} is shorter than the kernel horizon {}",
            problem.alpha.horizon()
        )));
    }

    let phi_hat = problem.phi.to_frequency()?.into_values();
    let psi_hat = problem.psi.to_frequency()?.into_values();
    let mut data = WindowData {
        t_start: 0.0,
        u0: phi_hat,
        u1: psi_hat,
        nonlocal,
    };
    let mut pending: Vec<f64> = problem.output_times.clone();
    pending.sort_by(f64::total_cmp);
    pending.retain(|&t| t >= 0.0 && t <= horizon * (1.0 + 1e-12));
    let mut next_output = 0;

    let mut run = NonlinearRun {
        grid: grid.clone(),
        windows: Vec::new(),
        termination: Termination::MaxWindows,
        trajectory: Vec::new(),
        outputs: Vec::new(),
        u0: Vec::new(),
        u1: Vec::new(),
        t_end: 0.0,
    };
    let mut growth = 1.0f64;
    let end_slack = 1e-12 * horizon;

    while run.windows.len() < controls.max_windows {
        let remaining = horizon - data.t_start;
        if remaining <= end_slack {
            run.termination = Termination::HorizonReached;
            return Ok(run);
        }
        let m = data_size(&suite, &data.u0, &data.u1)?;
        let certified = max_window(m, controls.c0, controls.c1, |r| problem.nonlinearity.majorant(r));
        let mut length = if data.nonlocal {
            problem.alpha.horizon()
        } else {
            match controls.policy {
                WindowPolicy::Certified => certified,
                WindowPolicy::Adaptive => certified * growth,
                WindowPolicy::Fixed(len) => len,
            }
        };
        // avoid a sliver at the end
        if length >= remaining || remaining - length < 1e-9 * horizon {
            length = remaining;
        }
        let mut retries = 0;
        let (window, done) = loop {
            let window = PicardWindow::new(&system, &problem.nonlinearity, data.clone(), length, controls.nodes)?;
            match iterate(&window, &suite, controls)? {
                Attempt::Converged(c) => break (window, c),
                Attempt::Failed(reason) => {
                    if data.nonlocal {
                        return Err(Error::NonContraction(format!(
                            "first window is pinned to the kernel horizon {length}: {reason}"
                        )));
                    }
                    length /= 2.0;
                    retries += 1;
                    growth = (growth / 2.0).max(1.0);
                    if length < controls.min_window {
                        let monitor = monitor_hat(&suite, &data.u0, &data.u1)?;
                        run.termination = Termination::BlowUpDetected {
                            crossing_time: None,
                            monitor,
                            detail: format!(
                                "window shrank below {:.3e} at t = {}: {reason}",
                                controls.min_window, data.t_start
                            ),
                        };
                        return Ok(run);
                    }
                }
            }
        };
        let index = run.windows.len();
        let mut record = WindowRecord {
            index,
            t_start: data.t_start,
            length,
            m,
            iterations: done.iterations,
            ratios: done.ratios,
            differences: done.differences,
            max_iterate_norm: done.max_norm,
            monitor: 0.0,
            retries,
        };
        if index == 0 {
            let (u0, u1) = if data.nonlocal {
                (done.traj.u[0].clone(), done.traj.ut[0].clone())
            } else {
                (data.u0.clone(), data.u1.clone())
            };
            run.u0 = u0;
            run.u1 = u1;
        }
        // the first node repeats the previous window's last node
        let first = if run.trajectory.is_empty() { 0 } else { 1 };
        let mut crossing = None;
        for k in 0..window.nodes {
            let monitor = monitor_hat(&suite, &done.traj.u[k], &done.traj.ut[k])?;
            record.monitor = record.monitor.max(monitor);
            if k >= first {
                run.trajectory.push(Sample {
                    t: window.node_time(k),
                    u: done.traj.u[k].clone(),
                    ut: done.traj.ut[k].clone(),
                    monitor,
                });
            }
            if monitor > controls.blowup_ceiling {
                crossing = Some((k, monitor));
                break;
            }
        }
        let cutoff = match crossing {
            Some((k, _)) => k as f64 * window.h,
            None => length,
        };
        while next_output < pending.len() && pending[next_output] <= data.t_start + cutoff + end_slack {
            let t = pending[next_output];
            let (u, ut) = window.evaluate(&done.traj, t - data.t_start)?;
            let monitor = monitor_hat(&suite, &u, &ut)?;
            run.outputs.push(Sample { t, u, ut, monitor });
            next_output += 1;
        }
        let max_ratio = record.max_ratio();
        run.windows.push(record);
        run.t_end = data.t_start + cutoff;
        if let Some((k, monitor)) = crossing {
            let t = window.node_time(k);
            run.termination = Termination::BlowUpDetected {
                crossing_time: Some(t),
                monitor,
                detail: format!(
                    "monitor {monitor:.3e} exceeded ceiling {:.3e} at t = {t}",
                    controls.blowup_ceiling
                ),
            };
            return Ok(run);
        }
        if controls.policy == WindowPolicy::Adaptive && retries == 0 && max_ratio.unwrap_or(0.0) < controls.grow_below {
            growth *= 2.0;
        }
        let last = window.nodes - 1;
        data = continuation_step(&done.traj.u[last], &done.traj.ut[last], data.t_start + length)?;
    }
    run.termination = Termination::MaxWindows;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{solve_linear, LinearControls, LinearProblem};
    use crate::nonlocal::Atom;
    use crate::symbols::classical_boussinesq;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn gaussian(grid: &Arc<SpectralGrid>, a: f64, w: f64) -> SpectralField {
        SpectralField::from_fn(grid.clone(), |x| c(a * (-(x[0] / w).powi(2)).exp()))
    }

    fn problem(grid: &Arc<SpectralGrid>, f: Nonlinearity, a: f64, horizon: f64) -> NonlinearProblem {
        NonlinearProblem {
            symbols: classical_boussinesq(1).unwrap(),
            alpha: NonlocalKernel::zero(horizon).unwrap(),
            beta: NonlocalKernel::zero(horizon).unwrap(),
            phi: gaussian(grid, a, 1.0),
            psi: gaussian(grid, 0.5 * a, 1.5),
            nonlinearity: f,
            output_times: vec![],
        }
    }

    #[test]
    fn registry() {
        assert_eq!(register_nonlinearity("zero", &[]).unwrap().majorant(5.0), 0.0);
        assert_eq!(register_nonlinearity("sine", &[]).unwrap().majorant(100.0), 1.0);
        let cu = register_nonlinearity("cubic", &[]).unwrap();
        assert_eq!(cu.majorant(1.0), 6.0);
        assert_eq!(cu.majorant(3.0), 27.0);
        let q = parse_nonlinearity("quadratic").unwrap();
        assert_eq!(q.majorant(0.5), 2.0);
        assert_eq!(q.majorant(3.0), 6.0);
        let l = parse_nonlinearity("linear(-0.5)").unwrap();
        assert_eq!(l.eval(&[0.0], 0.0, c(2.0)), c(-1.0));
        assert_eq!(l.majorant(9.0), 0.5);
        assert!(matches!(parse_nonlinearity("quartic"), Err(Error::Unknown { .. })));
        assert!(parse_nonlinearity("linear").is_err());
        assert!(parse_nonlinearity("linear(1").is_err());
    }

    #[test]
    fn majorants_dominate_derivatives() {
        for f in [
            Nonlinearity::zero(),
            Nonlinearity::linear(-1.5),
            Nonlinearity::quadratic(),
            Nonlinearity::cubic(),
            Nonlinearity::sine(),
        ] {
            assert!(f.majorant(0.0) >= f.derivative(1, c(0.0)).unwrap().norm());
            let mut prev = 0.0;
            for i in 0..=40 {
                let r = 0.25 * i as f64;
                let bound = f.majorant(r);
                assert!(bound >= prev);
                prev = bound;
                for x in [-r, r] {
                    let d1 = f.derivative(1, c(x)).unwrap().norm();
                    let d2 = f.derivative(2, c(x)).unwrap().norm();
                    assert!(d1.max(d2) <= bound + 1e-12, "{} at {x}", f.name());
                }
            }
        }
    }

    #[test]
    fn window_bounds() {
        // min(1/3, 1/4): the contraction bound binds
        assert!((max_window(0.0, 1.0, 1.0, |_| 1.0) - 0.25).abs() < 1e-15);
        assert!((max_window(0.0, 2.0, 1.0, |_| 1.0) - 0.2).abs() < 1e-15);
        assert!((max_window(1.0, 1.0, 1.0, |_| 4.0) - 1.0 / 34.0).abs() < 1e-15);
        for m in [0.0, 0.5, 3.0] {
            assert!((max_window(m, 1.0, 1.0, |_| 0.0) - (1.0 / (m + 1.0)).min(0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn monitor_values() {
        let grid = SpectralGrid::new(1, &[16], PI).unwrap();
        let zero = SpectralField::zeros(grid.clone(), Domain::Physical);
        assert_eq!(blowup_monitor(&zero, &zero, 2.0).unwrap(), 0.0);
        let cst = SpectralField::from_fn(grid.clone(), |_| c(-2.0));
        let expected = 2.0 * (2.0 * PI).sqrt() + 2.0;
        assert!((blowup_monitor(&cst, &zero, 2.0).unwrap() - expected).abs() < 1e-12);
        let mode = SpectralField::from_fn(grid.clone(), |x| c((2.0 * x[0]).cos()));
        let one = blowup_monitor(&mode, &mode, 2.0).unwrap();
        let three = blowup_monitor(&mode.scaled(c(3.0)), &mode.scaled(c(3.0)), 2.0).unwrap();
        assert!((three - 3.0 * one).abs() < 1e-12 * three);
        let mut bad = zero.clone();
        bad.values_mut()[0] = c(f64::NAN);
        assert_eq!(blowup_monitor(&bad, &zero, 2.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn zero_nonlinearity_matches_linear_solver() {
        let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
        let mut p = problem(&grid, Nonlinearity::zero(), 0.7, 1.0);
        p.output_times = vec![0.0, 0.3, 0.75, 1.0];
        let run = solve_nonlinear(&p, 1.0, &NonlinearControls::default()).unwrap();
        assert_eq!(run.termination, Termination::HorizonReached);
        assert!(run.windows.iter().all(|w| w.iterations <= 2));
        let mut lp = LinearProblem::classical(p.symbols.clone(), p.phi.clone(), p.psi.clone(), 1.0).unwrap();
        lp.output_times = p.output_times.clone();
        let lin = solve_linear(&lp, &LinearControls::default()).unwrap();
        assert_eq!(run.outputs.len(), 4);
        for (i, s) in run.outputs.iter().enumerate() {
            let u = run.field(&s.u).unwrap();
            assert!(u.combine(c(1.0), &lin.u[i], c(-1.0)).unwrap().max_abs() < 1e-10);
            let ut = run.field(&s.ut).unwrap();
            assert!(ut.combine(c(1.0), &lin.ut[i], c(-1.0)).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn linear_nonlinearity_single_mode_closed_form() {
        // f(u) = u turns the mode equation into u'' + (Q - L) u = 0
        let grid = SpectralGrid::new(1, &[16], PI).unwrap();
        let k = 2.0;
        let phi = SpectralField::from_fn(grid.clone(), |x| c((k * x[0]).cos()));
        let zero = SpectralField::zeros(grid.clone(), Domain::Physical);
        let symbols = SymbolSet::new(
            crate::symbols::OperatorSymbol::neg_laplacian(1),
            crate::symbols::OperatorSymbol::neg_laplacian(1)
                .with_term(&[0], c(1.0))
                .unwrap(),
            crate::symbols::OperatorSymbol::neg_laplacian(1),
        )
        .unwrap();
        let p = NonlinearProblem {
            symbols,
            alpha: NonlocalKernel::zero(0.05).unwrap(),
            beta: NonlocalKernel::zero(0.05).unwrap(),
            phi,
            psi: zero,
            nonlinearity: Nonlinearity::linear(1.0),
            output_times: vec![0.05],
        };
        let controls = NonlinearControls {
            policy: WindowPolicy::Fixed(0.05),
            ..Default::default()
        };
        let run = solve_nonlinear(&p, 0.05, &controls).unwrap();
        let q = (k * k + 1.0) / (1.0 + k * k);
        let l = k * k / (1.0 + k * k);
        let omega = (q - l).sqrt();
        let mode = grid.mode_index(&[2]).unwrap();
        let got = run.outputs[0].u[mode];
        assert!((got - c(0.5 * (omega * 0.05).cos())).norm() < 1e-7);
    }

    #[test]
    fn quadratic_contracts_in_certified_windows() {
        let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
        let p = problem(&grid, Nonlinearity::quadratic(), 0.1, 0.5);
        let run = solve_nonlinear(&p, 0.5, &NonlinearControls::default()).unwrap();
        assert_eq!(run.termination, Termination::HorizonReached);
        for w in &run.windows {
            assert!(w.max_ratio().unwrap_or(0.0) <= 0.55, "{w:?}");
            assert!(w.iterations <= 50);
            assert!(w.max_iterate_norm <= w.m + 1.0, "{w:?}");
        }
    }

    #[test]
    fn zero_and_linear_starts_agree() {
        let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
        let p = problem(&grid, Nonlinearity::quadratic(), 0.2, 0.3);
        let a = solve_nonlinear(&p, 0.3, &NonlinearControls::default()).unwrap();
        let b = solve_nonlinear(
            &p,
            0.3,
            &NonlinearControls {
                start: StartIterate::Zero,
                ..Default::default()
            },
        )
        .unwrap();
        let sa = a.trajectory.last().unwrap();
        let sb = b.trajectory.last().unwrap();
        let d = sa.u.iter().zip(&sb.u).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(d <= 1e-9);
    }

    #[test]
    fn splice_is_continuous() {
        let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
        let p = problem(&grid, Nonlinearity::quadratic(), 0.2, 0.4);
        let controls = NonlinearControls {
            policy: WindowPolicy::Fixed(0.1),
            ..Default::default()
        };
        let run = solve_nonlinear(&p, 0.4, &controls).unwrap();
        assert_eq!(run.windows.len(), 4);
        let times: Vec<f64> = run.trajectory.iter().map(|s| s.t).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!((times.last().unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn nonlocal_first_window() {
        let grid = SpectralGrid::new(1, &[32], 8.0).unwrap();
        let mut p = problem(&grid, Nonlinearity::quadratic(), 0.1, 0.2);
        p.alpha = NonlocalKernel::atoms(
            0.2,
            vec![Atom {
                location: 0.1,
                weight: 0.1,
            }],
        )
        .unwrap();
        p.beta = NonlocalKernel::atoms(
            0.2,
            vec![Atom {
                location: 0.2,
                weight: -0.1,
            }],
        )
        .unwrap();
        p.output_times = vec![0.0, 0.1, 0.2];
        let run = solve_nonlinear(&p, 0.4, &NonlinearControls::default()).unwrap();
        assert_eq!(run.termination, Termination::HorizonReached);
        assert!((run.windows[0].length - 0.2).abs() < 1e-15);
        // u(0) = phi + 0.1 u(0.1)
        let phi = p.phi.to_frequency().unwrap().into_values();
        let u0 = &run.outputs[0].u;
        let u01 = &run.outputs[1].u;
        for m in 0..grid.len() {
            assert!((u0[m] - phi[m] - 0.1 * u01[m]).norm() < 1e-12);
        }
        let psi = p.psi.to_frequency().unwrap().into_values();
        let ut0 = &run.outputs[0].ut;
        let ut2 = &run.outputs[2].ut;
        for m in 0..grid.len() {
            assert!((ut0[m] - psi[m] + 0.1 * ut2[m]).norm() < 1e-12);
        }
    }

    #[test]
    fn evaluate_between_nodes() {
        let grid = SpectralGrid::new(1, &[16], 8.0).unwrap();
        let p = problem(&grid, Nonlinearity::quadratic(), 0.3, 0.2);
        let system = LinearSystem::new(&p.symbols, &p.alpha, &p.beta, grid.clone()).unwrap();
        let data = WindowData {
            t_start: 0.0,
            u0: p.phi.to_frequency().unwrap().into_values(),
            u1: p.psi.to_frequency().unwrap().into_values(),
            nonlocal: false,
        };
        let suite = NormSuite::new(grid.clone(), 2.0, 2.0).unwrap();
        let fine = PicardWindow::new(&system, &p.nonlinearity, data.clone(), 0.2, 65).unwrap();
        let coarse = PicardWindow::new(&system, &p.nonlinearity, data, 0.2, 33).unwrap();
        let Attempt::Converged(cf) = iterate(&fine, &suite, &NonlinearControls::default()).unwrap() else {
            panic!()
        };
        let Attempt::Converged(cc) = iterate(&coarse, &suite, &NonlinearControls::default()).unwrap() else {
            panic!()
        };
        // t = 0.003125 k: node 1 of the fine window lies between coarse nodes 0 and 1
        let (u, ut) = coarse.evaluate(&cc.traj, 0.2 / 64.0).unwrap();
        for m in 0..grid.len() {
            assert!((u[m] - cf.traj.u[1][m]).norm() < 1e-9);
            assert!((ut[m] - cf.traj.ut[1][m]).norm() < 1e-8);
        }
    }

    #[test]
    fn continuation_rejects_non_finite() {
        assert!(continuation_step(&[c(f64::INFINITY)], &[c(0.0)], 1.0).is_err());
        let d = continuation_step(&[c(1.0)], &[c(2.0)], 1.5).unwrap();
        assert!(!d.nonlocal);
        assert_eq!(d.t_start, 1.5);
    }
}
