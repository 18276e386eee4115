//! The linear problem `u_tt + L0 u_tt + L1 u = L2 g` with integral initial
//! conditions, solved mode by mode.
//!
//! Per mode `u_hat(t) = C(t) u0 + S(t) u1 + w(t)` where `w` is the Duhamel
//! term of `F = L g_hat` and `(u0, u1)` solves the 2x2 nonlocal system.

use std::sync::Arc;

use num_complex::Complex64;

use crate::duhamel::{duhamel_all, DuhamelControls, Forcing, SourceForcing, SourceTerm, ZeroSource};
use crate::error::{Error, Result};
use crate::grid::{Domain, SpectralField, SpectralGrid};
use crate::nonlocal::{
    build_determinant, build_rhs_with, check_admissibility, determinant_unchecked, solve_initial_pair, Admissibility,
    DeterminantTable, NonlocalKernel,
};
use crate::propagator::PropagatorTable;
use crate::symbols::{check_condition21, SymbolReport, SymbolSet};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Data of the linear nonlocal problem on one grid.
#[derive(Clone)]
pub struct LinearProblem {
    pub symbols: SymbolSet,
    pub alpha: NonlocalKernel,
    pub beta: NonlocalKernel,
    pub phi: SpectralField,
    pub psi: SpectralField,
    pub source: Arc<dyn SourceTerm>,
    pub horizon: f64,
    pub output_times: Vec<f64>,
}

impl std::fmt::Debug for LinearProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearProblem")
            .field("horizon", &self.horizon)
            .field("output_times", &self.output_times)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl LinearProblem {
    /// Problem with classical data conditions and no source.
    pub fn classical(symbols: SymbolSet, phi: SpectralField, psi: SpectralField, horizon: f64) -> Result<Self> {
        Ok(Self {
            symbols,
            alpha: NonlocalKernel::zero(horizon)?,
            beta: NonlocalKernel::zero(horizon)?,
            phi,
            psi,
            source: Arc::new(ZeroSource),
            horizon,
            output_times: vec![0.0, horizon],
        })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.phi.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.phi.same_grid(&self.psi) {
            return Err(Error::GridMismatch);
        }
        if self.symbols.n() != self.grid().n() {
            return Err(Error::DimensionMismatch {
                expected: self.grid().n(),
                got: self.symbols.n(),
            });
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        for k in [&self.alpha, &self.beta] {
            if (k.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
                return Err(Error::HorizonMismatch(k.horizon(), self.horizon));
            }
        }
        let slack = 1e-12 * self.horizon;
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.output_times {
            if !(t >= -slack && t <= self.horizon + slack) {
                return Err(Error::InvalidParameter(format!(
                    "output time {t} outside [0, {}]",
                    self.horizon
                )));
            }
            if t < prev {
                return Err(Error::InvalidParameter("output times must be sorted".into()));
            }
            prev = t;
        }
        if !self.phi.is_finite() || !self.psi.is_finite() {
            return Err(Error::NonFinite("initial data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearControls {
    /// Smoothness and exponent used by the symbol admissibility scan.
    pub s: f64,
    pub p: f64,
    pub duhamel: DuhamelControls,
    /// Skip the kernel inequality (the determinant is still checked).
    pub force: bool,
    /// Node refinement factor of the reference quadrature for residuals.
    pub residual_refine: usize,
    pub residuals: bool,
}

impl Default for LinearControls {
    fn default() -> Self {
        Self {
            s: 2.0,
            p: 2.0,
            duhamel: DuhamelControls::default(),
            force: false,
            residual_refine: 2,
            residuals: true,
        }
    }
}

/// Outcome of the pre-solve checks.
#[derive(Debug, Clone)]
pub struct GateReport {
    pub symbols: SymbolReport,
    pub kernels: Admissibility,
}

/// Rejects symbols violating the zero conditions and kernels violating the
/// invertibility inequality, naming the hypothesis and its witness.
pub fn admissibility_gate(
    symbols: &SymbolSet,
    alpha: &NonlocalKernel,
    beta: &NonlocalKernel,
    grid: &SpectralGrid,
    s: f64,
    p: f64,
    force: bool,
) -> Result<GateReport> {
    let report = check_condition21(symbols, s, p, grid);
    if let Some((hypothesis, xi)) = report.violation() {
        return Err(Error::InadmissibleSymbols { hypothesis, xi });
    }
    let kernels = check_admissibility(alpha, beta)?;
    if !kernels.admissible && !force {
        return Err(Error::InadmissibleKernels { margin: kernels.margin });
    }
    Ok(GateReport {
        symbols: report,
        kernels,
    })
}

/// Propagators and the determinant table for fixed symbols and kernels.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    table: PropagatorTable,
    det: DeterminantTable,
    alpha: NonlocalKernel,
    beta: NonlocalKernel,
}

impl LinearSystem {
    pub fn new(
        symbols: &SymbolSet,
        alpha: &NonlocalKernel,
        beta: &NonlocalKernel,
        grid: Arc<SpectralGrid>,
    ) -> Result<Self> {
        Self::from_table(PropagatorTable::new(symbols, grid)?, alpha, beta)
    }

    pub fn from_table(table: PropagatorTable, alpha: &NonlocalKernel, beta: &NonlocalKernel) -> Result<Self> {
        let det = build_determinant(alpha, beta, &table)?;
        Ok(Self {
            table,
            det,
            alpha: alpha.clone(),
            beta: beta.clone(),
        })
    }

    pub fn table(&self) -> &PropagatorTable {
        &self.table
    }

    pub fn determinant(&self) -> &DeterminantTable {
        &self.det
    }

    pub fn alpha(&self) -> &NonlocalKernel {
        &self.alpha
    }

    pub fn beta(&self) -> &NonlocalKernel {
        &self.beta
    }

    pub fn is_classical(&self) -> bool {
        self.alpha.is_zero() && self.beta.is_zero()
    }

    /// True initial pair from the nonlocal conditions.
    pub fn initial_pair(
        &self,
        forcing: &dyn Forcing,
        phi_hat: &[Complex64],
        psi_hat: &[Complex64],
        controls: &DuhamelControls,
    ) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        if self.is_classical() {
            return Ok((phi_hat.to_vec(), psi_hat.to_vec()));
        }
        let (f1, f2) = build_rhs_with(
            &self.alpha,
            &self.beta,
            &self.table,
            forcing,
            phi_hat,
            psi_hat,
            controls,
        )?;
        solve_initial_pair(&self.det, &f1, &f2)
    }

    /// `[m1, m2, m1', m2']` with `S1(t) phi = m1 phi_hat` and `S2(t) psi = m2 psi_hat`.
    pub fn multipliers(&self, mode: usize, t: f64) -> Result<[Complex64; 4]> {
        let (c, s) = self.table.cos_sin(mode, t)?;
        let q = self.table.q(mode);
        let d = &self.det;
        let inv = ONE / d.det[mode];
        let (a_c, a_s, b_c, b_qs) = (d.a_c[mode], d.a_s[mode], d.b_c[mode], d.b_qs[mode]);
        Ok([
            (c * (ONE - b_c) - s * b_qs) * inv,
            (c * a_s + s * (ONE - a_c)) * inv,
            (-q * s * (ONE - b_c) - c * b_qs) * inv,
            (-q * s * a_s + c * (ONE - a_c)) * inv,
        ])
    }

    /// `(u_hat, u_t_hat)` at `t` from the initial pair and the Duhamel terms.
    pub fn state(
        &self,
        t: f64,
        u0: &[Complex64],
        u1: &[Complex64],
        w: &[Complex64],
        wt: &[Complex64],
    ) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let mut u = Vec::with_capacity(u0.len());
        let mut ut = Vec::with_capacity(u0.len());
        for m in 0..u0.len() {
            let (c, s) = self.table.cos_sin(m, t)?;
            u.push(c * u0[m] + s * u1[m] + w[m]);
            ut.push(-self.table.q(m) * s * u0[m] + c * u1[m] + wt[m]);
        }
        Ok((u, ut))
    }

    /// Residuals `||u(0) - int alpha u - phi||_inf` and the `u_t` analogue,
    /// measured with a reference quadrature `refine` times finer.
    #[allow(clippy::too_many_arguments)]
    pub fn condition_residuals(
        &self,
        forcing: &dyn Forcing,
        u0: &[Complex64],
        u1: &[Complex64],
        phi_hat: &[Complex64],
        psi_hat: &[Complex64],
        refine: usize,
    ) -> Result<(f64, f64)> {
        let refined = |k: &NonlocalKernel| match k.nodes() {
            Some(n) => k.with_nodes(refine.max(1) * (n - 1) + 1),
            None => Ok(k.clone()),
        };
        let a = refined(&self.alpha)?;
        let b = refined(&self.beta)?;
        let dt = determinant_unchecked(&a, &b, &self.table)?;
        let strict = DuhamelControls {
            initial_nodes: 129,
            max_nodes: 4097,
            rel_tol: 1e-12,
            adaptive: true,
        };
        let (f1, f2) = build_rhs_with(&a, &b, &self.table, forcing, phi_hat, psi_hat, &strict)?;
        let mut r1 = Vec::with_capacity(u0.len());
        let mut r2 = Vec::with_capacity(u0.len());
        for m in 0..u0.len() {
            let [a11, a12, a21, a22] = dt.matrix(m);
            r1.push(a11 * u0[m] + a12 * u1[m] - f1[m]);
            r2.push(a21 * u0[m] + a22 * u1[m] - f2[m]);
        }
        let grid = self.table.grid().clone();
        let sup = |v: Vec<Complex64>| -> Result<f64> {
            Ok(SpectralField::new(grid.clone(), v, Domain::Frequency)?
                .to_physical()?
                .max_abs())
        };
        Ok((sup(r1)?, sup(r2)?))
    }
}

/// Frequency-space data of a problem.
pub struct Transformed<'a> {
    pub phi_hat: Vec<Complex64>,
    pub psi_hat: Vec<Complex64>,
    pub forcing: SourceForcing<'a>,
}

pub fn transform_problem<'a>(p: &'a LinearProblem, table: &'a PropagatorTable) -> Result<Transformed<'a>> {
    if !p.phi.same_grid(&p.psi) || table.grid().points() != p.grid().points() {
        return Err(Error::GridMismatch);
    }
    let hat = |f: &SpectralField| -> Result<Vec<Complex64>> {
        Ok(match f.domain() {
            Domain::Frequency => f.values().to_vec(),
            Domain::Physical => f.to_frequency()?.into_values(),
        })
    };
    Ok(Transformed {
        phi_hat: hat(&p.phi)?,
        psi_hat: hat(&p.psi)?,
        forcing: SourceForcing::new(p.source.as_ref(), table),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearDiagnostics {
    pub residual_u: f64,
    pub residual_ut: f64,
    pub min_det: f64,
    pub margin: f64,
    pub duhamel_nodes: usize,
    pub duhamel_converged: bool,
    pub outside_hypotheses: bool,
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub times: Vec<f64>,
    pub u: Vec<SpectralField>,
    pub ut: Vec<SpectralField>,
    pub u0: Vec<Complex64>,
    pub u1: Vec<Complex64>,
    pub diagnostics: LinearDiagnostics,
}

pub fn solve_linear(p: &LinearProblem, controls: &LinearControls) -> Result<LinearSolution> {
    p.validate()?;
    let gate = admissibility_gate(
        &p.symbols,
        &p.alpha,
        &p.beta,
        p.grid(),
        controls.s,
        controls.p,
        controls.force,
    )?;
    let system = LinearSystem::new(&p.symbols, &p.alpha, &p.beta, p.grid().clone())?;
    let data = transform_problem(p, system.table())?;
    let (u0, u1) = system.initial_pair(&data.forcing, &data.phi_hat, &data.psi_hat, &controls.duhamel)?;

    let grid = p.grid().clone();
    let mut diagnostics = LinearDiagnostics {
        min_det: system.determinant().min_abs(),
        margin: gate.kernels.margin,
        duhamel_converged: true,
        outside_hypotheses: system.table().outside_hypotheses(),
        ..Default::default()
    };
    let mut u = Vec::with_capacity(p.output_times.len());
    let mut ut = Vec::with_capacity(p.output_times.len());
    for &t in &p.output_times {
        let t = t.clamp(0.0, p.horizon);
        let d = duhamel_all(system.table(), &data.forcing, t, &controls.duhamel)?;
        diagnostics.duhamel_nodes = diagnostics.duhamel_nodes.max(d.nodes_used);
        diagnostics.duhamel_converged &= d.converged;
        let (uh, uth) = system.state(t, &u0, &u1, &d.w, &d.wt)?;
        let uf = SpectralField::new(grid.clone(), uh, Domain::Frequency)?.to_physical()?;
        let utf = SpectralField::new(grid.clone(), uth, Domain::Frequency)?.to_physical()?;
        if !uf.is_finite() || !utf.is_finite() {
            return Err(Error::NonFinite(format!("solution at t = {t}")));
        }
        u.push(uf);
        ut.push(utf);
    }
    if controls.residuals {
        let (ru, rut) = system.condition_residuals(
            &data.forcing,
            &u0,
            &u1,
            &data.phi_hat,
            &data.psi_hat,
            controls.residual_refine,
        )?;
        diagnostics.residual_u = ru;
        diagnostics.residual_ut = rut;
    }
    Ok(LinearSolution {
        times: p.output_times.clone(),
        u,
        ut,
        u0,
        u1,
        diagnostics,
    })
}

fn apply_multiplier(p: &LinearProblem, field: &SpectralField, t: f64, which: usize) -> Result<SpectralField> {
    p.validate()?;
    let system = LinearSystem::new(&p.symbols, &p.alpha, &p.beta, p.grid().clone())?;
    let hat = match field.domain() {
        Domain::Frequency => field.values().to_vec(),
        Domain::Physical => field.to_frequency()?.into_values(),
    };
    let mut out = vec![ZERO; hat.len()];
    for (m, (o, h)) in out.iter_mut().zip(&hat).enumerate() {
        *o = system.multipliers(m, t)?[which] * h;
    }
    SpectralField::new(p.grid().clone(), out, Domain::Frequency)?.to_physical()
}

/// `S1(t) phi`: the solution with `psi = 0`, `g = 0`.
pub fn apply_s1(p: &LinearProblem, phi: &SpectralField, t: f64) -> Result<SpectralField> {
    apply_multiplier(p, phi, t, 0)
}

/// `S2(t) psi`: the solution with `phi = 0`, `g = 0`.
pub fn apply_s2(p: &LinearProblem, psi: &SpectralField, t: f64) -> Result<SpectralField> {
    apply_multiplier(p, psi, t, 1)
}

/// Time derivative of `S1(t) phi`.
pub fn apply_s1_t(p: &LinearProblem, phi: &SpectralField, t: f64) -> Result<SpectralField> {
    apply_multiplier(p, phi, t, 2)
}

/// Time derivative of `S2(t) psi`.
pub fn apply_s2_t(p: &LinearProblem, psi: &SpectralField, t: f64) -> Result<SpectralField> {
    apply_multiplier(p, psi, t, 3)
}
