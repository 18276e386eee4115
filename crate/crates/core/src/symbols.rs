//! Constant-coefficient differential operators and their frequency symbols.
//!
//! An operator `sum a_alpha D^alpha` is stored as a multi-index table. Under the
//! [`Convention::Fourier`] convention `D^alpha` maps to `(i xi)^alpha`, so `-Laplacian`
//! has symbol `|xi|^2`; [`Convention::Plain`] evaluates `sum a_alpha xi^alpha` literally.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::SpectralGrid;

/// Relative threshold for treating a symbol value as zero.
pub const EPS_DEN_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Plain,
    #[default]
    Fourier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSymbol {
    n: usize,
    convention: Convention,
    terms: BTreeMap<Vec<u32>, Complex64>,
}

impl OperatorSymbol {
    /// The zero operator in dimension `n`.
    pub fn zero(n: usize, convention: Convention) -> Self {
        Self {
            n,
            convention,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut s = Self::zero(n, Convention::Fourier);
        s.terms.insert(vec![0; n], Complex64::new(c, 0.0));
        s
    }

    /// `-Laplacian`, symbol `|xi|^2` under the Fourier convention.
    pub fn neg_laplacian(n: usize) -> Self {
        let mut s = Self::zero(n, Convention::Fourier);
        for d in 0..n {
            let mut alpha = vec![0; n];
            alpha[d] = 2;
            s.terms.insert(alpha, Complex64::new(-1.0, 0.0));
        }
        s
    }

    /// `Laplacian^2`, symbol `|xi|^4` under the Fourier convention.
    pub fn bilaplacian(n: usize) -> Self {
        let mut s = Self::zero(n, Convention::Fourier);
        for a in 0..n {
            for b in 0..n {
                let mut alpha = vec![0; n];
                alpha[a] += 2;
                alpha[b] += 2;
                *s.terms.entry(alpha).or_insert(Complex64::new(0.0, 0.0)) += 1.0;
            }
        }
        s
    }

    pub fn with_term(mut self, alpha: &[u32], coeff: Complex64) -> Result<Self> {
        self.add_term(alpha, coeff)?;
        Ok(self)
    }

    /// Adds `coeff` to the coefficient of `D^alpha`.
    pub fn add_term(&mut self, alpha: &[u32], coeff: Complex64) -> Result<()> {
        if alpha.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: alpha.len(),
            });
        }
        *self.terms.entry(alpha.to_vec()).or_insert(Complex64::new(0.0, 0.0)) += coeff;
        Ok(())
    }

    pub fn plus(&self, other: &OperatorSymbol) -> Result<OperatorSymbol> {
        if self.n != other.n || self.convention != other.convention {
            return Err(Error::InvalidParameter(
                "cannot add symbols of different dimension or convention".into(),
            ));
        }
        let mut out = self.clone();
        for (alpha, c) in &other.terms {
            out.add_term(alpha, *c)?;
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], Complex64)> {
        self.terms.iter().map(|(a, c)| (a.as_slice(), *c))
    }

    /// Largest `|alpha|` among nonzero terms.
    pub fn order(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(_, c)| c.norm() != 0.0)
            .map(|(a, _)| a.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, xi: &[f64]) -> Result<Complex64> {
        if xi.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: xi.len(),
            });
        }
        Ok(self.eval_unchecked(xi))
    }

    pub(crate) fn eval_unchecked(&self, xi: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (alpha, &c) in &self.terms {
            let mut mono = 1.0;
            for (x, &a) in xi.iter().zip(alpha) {
                mono *= x.powi(a as i32);
            }
            let factor = match self.convention {
                Convention::Plain => Complex64::new(mono, 0.0),
                Convention::Fourier => i_pow(alpha.iter().sum()) * mono,
            };
            acc += c * factor;
        }
        acc
    }
}

fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// The operator triple `(L0, L1, L2)` of `u_tt + L0 u_tt + L1 u = L2 f(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSet {
    pub l0: OperatorSymbol,
    pub l1: OperatorSymbol,
    pub l2: OperatorSymbol,
}

impl SymbolSet {
    pub fn new(l0: OperatorSymbol, l1: OperatorSymbol, l2: OperatorSymbol) -> Result<Self> {
        if l1.n() != l0.n() || l2.n() != l0.n() {
            return Err(Error::DimensionMismatch {
                expected: l0.n(),
                got: if l1.n() != l0.n() { l1.n() } else { l2.n() },
            });
        }
        Ok(Self { l0, l1, l2 })
    }

    pub fn n(&self) -> usize {
        self.l0.n()
    }

    pub fn orders(&self) -> (u32, u32, u32) {
        (self.l0.order(), self.l1.order(), self.l2.order())
    }
}

/// `Q = L1 / (1 + L0)` and `L = L2 / (1 + L0)` at a single frequency.
pub fn compute_ql(set: &SymbolSet, xi: &[f64], eps_den: f64) -> Result<(Complex64, Complex64)> {
    let den = Complex64::new(1.0, 0.0) + set.l0.eval(xi)?;
    if den.norm() <= eps_den {
        return Err(Error::SymbolSingularity { xi: xi.to_vec() });
    }
    Ok((set.l1.eval(xi)? / den, set.l2.eval(xi)? / den))
}

/// Zero-test thresholds derived from the largest symbol magnitudes on the grid.
#[derive(Debug, Clone, Copy)]
pub struct ZeroThresholds {
    pub one_plus_l0: f64,
    pub l1: f64,
    pub l2: f64,
}

impl ZeroThresholds {
    pub fn for_grid(set: &SymbolSet, grid: &SpectralGrid) -> Self {
        let (mut s0, mut s1, mut s2) = (0.0f64, 0.0f64, 0.0f64);
        for m in 0..grid.len() {
            let xi = grid.xi(m);
            s0 = s0.max((1.0 + set.l0.eval_unchecked(xi)).norm());
            s1 = s1.max(set.l1.eval_unchecked(xi).norm());
            s2 = s2.max(set.l2.eval_unchecked(xi).norm());
        }
        Self {
            one_plus_l0: EPS_DEN_REL * (1.0 + s0),
            l1: EPS_DEN_REL * (1.0 + s1),
            l2: EPS_DEN_REL * (1.0 + s2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroKind {
    /// `L1(xi) = 0`
    L1,
    /// `1 + L0(xi) = 0`
    OnePlusL0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroHit {
    pub xi: Vec<f64>,
    pub kind: ZeroKind,
}

/// Outcome of the grid scan of the admissibility bounds.
#[derive(Debug, Clone)]
pub struct SymbolReport {
    pub admissible: bool,
    pub worst_xi: Vec<f64>,
    /// Smallest `M1` with `|Q^{1/2}| <= M1 (1+|xi|)^{s-n/p}` on the grid.
    pub m1_est: f64,
    /// Smallest `M2` with `|L Q^{-1/2}| <= M2 (1+|xi|)^{s-n/p}` on the grid.
    pub m2_est: f64,
    /// Same fit for `|Q^{-1/2}|`, excluding the zero mode.
    pub m1_inverse_est: f64,
    pub zero_hits: Vec<ZeroHit>,
    /// `Q` is negative or complex somewhere, so `C` and `S` are not bounded by 1.
    pub outside_hypotheses: bool,
    pub notes: Vec<String>,
}

impl SymbolReport {
    /// First violated hypothesis with its witness frequency, if any.
    pub fn violation(&self) -> Option<(String, Vec<f64>)> {
        if let Some(hit) = self.zero_hits.first() {
            let what = match hit.kind {
                ZeroKind::L1 => "L1(xi) != 0",
                ZeroKind::OnePlusL0 => "L0(xi) != -1",
            };
            return Some((what.to_string(), hit.xi.clone()));
        }
        if !self.admissible {
            let what = self
                .notes
                .first()
                .cloned()
                .unwrap_or_else(|| "growth bounds".to_string());
            return Some((what, self.worst_xi.clone()));
        }
        None
    }

    /// `key = value` lines for machine consumption.
    pub fn to_key_values(&self) -> String {
        let xi = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        out.push_str(&format!("admissible = {}\n", self.admissible));
        out.push_str(&format!("m1_est = {:e}\n", self.m1_est));
        out.push_str(&format!("m2_est = {:e}\n", self.m2_est));
        out.push_str(&format!("m1_inverse_est = {:e}\n", self.m1_inverse_est));
        out.push_str(&format!("worst_xi = [{}]\n", xi(&self.worst_xi)));
        out.push_str(&format!("zero_hits = {}\n", self.zero_hits.len()));
        for (i, h) in self.zero_hits.iter().enumerate() {
            out.push_str(&format!("zero_hit.{i} = {:?} [{}]\n", h.kind, xi(&h.xi)));
        }
        out.push_str(&format!("outside_hypotheses = {}\n", self.outside_hypotheses));
        out
    }
}

/// Scans every grid frequency for the zero conditions and fits the growth
/// constants `M1`, `M2`.
///
/// The zero mode with `L1(0) = L2(0) = 0` is exempt from the `L1 != 0` test:
/// there `Q = L = 0` and the mode evolves as `u0 + t u1` with no forcing.
pub fn check_condition21(set: &SymbolSet, s: f64, p: f64, grid: &SpectralGrid) -> SymbolReport {
    let n = grid.n() as f64;
    let mut notes = Vec::new();
    let params_ok = p > 1.0 && p.is_finite() && s > n / p;
    if !params_ok {
        notes.push(format!("need p in (1, inf) and s > n/p (s = {s}, p = {p}, n = {n})"));
    }
    if set.n() != grid.n() {
        notes.push(format!(
            "symbol dimension {} differs from grid dimension {}",
            set.n(),
            grid.n()
        ));
        return SymbolReport {
            admissible: false,
            worst_xi: vec![],
            m1_est: f64::INFINITY,
            m2_est: f64::INFINITY,
            m1_inverse_est: f64::INFINITY,
            zero_hits: vec![],
            outside_hypotheses: false,
            notes,
        };
    }

    let eps = ZeroThresholds::for_grid(set, grid);
    let growth = s - n / p;
    let mut zero_hits = Vec::new();
    let (mut m1, mut m2, mut minv) = (0.0f64, 0.0f64, 0.0f64);
    let mut worst = (f64::NEG_INFINITY, vec![0.0; grid.n()]);
    let mut outside = false;

    for m in 0..grid.len() {
        let xi = grid.xi(m);
        let v0 = 1.0 + set.l0.eval_unchecked(xi);
        let v1 = set.l1.eval_unchecked(xi);
        let v2 = set.l2.eval_unchecked(xi);
        if v0.norm() <= eps.one_plus_l0 {
            zero_hits.push(ZeroHit {
                xi: xi.to_vec(),
                kind: ZeroKind::OnePlusL0,
            });
            continue;
        }
        let zero_mode = grid.xi_norm_sq(m) == 0.0;
        if v1.norm() <= eps.l1 {
            if zero_mode && v2.norm() <= eps.l2 {
                continue;
            }
            zero_hits.push(ZeroHit {
                xi: xi.to_vec(),
                kind: ZeroKind::L1,
            });
            continue;
        }
        let q = v1 / v0;
        let l = v2 / v0;
        if q.im.abs() > EPS_DEN_REL * (1.0 + q.norm()) || q.re < 0.0 {
            outside = true;
        }
        let root = q.sqrt();
        let w = (1.0 + grid.xi_norm(m)).powf(growth);
        let r1 = root.norm() / w;
        let r2 = (l / root).norm() / w;
        m1 = m1.max(r1);
        m2 = m2.max(r2);
        if !zero_mode {
            minv = minv.max(1.0 / (root.norm() * w));
        }
        let tight = r1.max(r2);
        if tight > worst.0 {
            worst = (tight, xi.to_vec());
        }
    }

    let worst_xi = zero_hits.first().map(|h| h.xi.clone()).unwrap_or(worst.1);
    let admissible = params_ok && zero_hits.is_empty() && m1.is_finite() && m2.is_finite();
    SymbolReport {
        admissible,
        worst_xi,
        m1_est: m1,
        m2_est: m2,
        m1_inverse_est: minv,
        zero_hits,
        outside_hypotheses: outside,
        notes,
    }
}

/// Order-based sufficient test: `m0 - m1 <= 2(s - n/p)` and `m2 - m1 <= 2(s - n/p)`.
pub fn degree_heuristic(m0: u32, m1: u32, m2: u32, s: f64, p: f64, n: usize) -> bool {
    let budget = 2.0 * (s - n as f64 / p) + 1e-12;
    (m0 as f64 - m1 as f64) <= budget && (m2 as f64 - m1 as f64) <= budget
}

pub const PRESET_NAMES: [&str; 6] = [
    "classical_boussinesq_1",
    "classical_boussinesq_2",
    "classical_boussinesq_3",
    "app1_2d",
    "app2_3d",
    "app3_mixed",
];

/// Built-in operator triples with default coefficients.
///
/// `app1_2d`: `L0 = L1 = L2 = A1` with `A1 = 1 - Laplacian` on R^2.
/// `app2_3d`: `L0 = L1 = L2 = A2` with `A2 = 1 + Laplacian^2` on R^3.
/// `app3_mixed`: `L0 = 1 + Laplacian^2`, `L1 = 1 - Laplacian`, `L2 = Laplacian^2` on R^3.
pub fn preset_symbols(name: &str) -> Result<SymbolSet> {
    match name {
        "classical_boussinesq_1" => classical_boussinesq(1),
        "classical_boussinesq_2" => classical_boussinesq(2),
        "classical_boussinesq_3" => classical_boussinesq(3),
        "app1_2d" => app1_2d(OperatorSymbol::constant(2, 1.0).plus(&OperatorSymbol::neg_laplacian(2))?),
        "app2_3d" => app2_3d(OperatorSymbol::constant(3, 1.0).plus(&OperatorSymbol::bilaplacian(3))?),
        "app3_mixed" => app3_mixed(
            OperatorSymbol::constant(3, 1.0).plus(&OperatorSymbol::bilaplacian(3))?,
            OperatorSymbol::constant(3, 1.0).plus(&OperatorSymbol::neg_laplacian(3))?,
            OperatorSymbol::bilaplacian(3),
        ),
        other => Err(Error::Unknown {
            kind: "preset",
            name: other.to_string(),
        }),
    }
}

/// `L0 = L1 = L2 = -Laplacian`.
pub fn classical_boussinesq(n: usize) -> Result<SymbolSet> {
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidParameter(format!("dimension {n} outside 1..=3")));
    }
    let a = OperatorSymbol::neg_laplacian(n);
    SymbolSet::new(a.clone(), a.clone(), a)
}

/// `L0 = L1 = L2 = A1` for a second-order operator on R^2.
pub fn app1_2d(a1: OperatorSymbol) -> Result<SymbolSet> {
    check_shape(&a1, 2, 2, "A1")?;
    SymbolSet::new(a1.clone(), a1.clone(), a1)
}

/// `L0 = L1 = L2 = A2` for a fourth-order operator on R^3.
pub fn app2_3d(a2: OperatorSymbol) -> Result<SymbolSet> {
    check_shape(&a2, 3, 4, "A2")?;
    SymbolSet::new(a2.clone(), a2.clone(), a2)
}

/// Mixed orders `(4, 2, 4)` on R^3.
pub fn app3_mixed(l0: OperatorSymbol, l1: OperatorSymbol, l2: OperatorSymbol) -> Result<SymbolSet> {
    check_shape(&l0, 3, 4, "L0")?;
    check_shape(&l1, 3, 2, "L1")?;
    check_shape(&l2, 3, 4, "L2")?;
    SymbolSet::new(l0, l1, l2)
}

fn check_shape(sym: &OperatorSymbol, n: usize, max_order: u32, name: &str) -> Result<()> {
    if sym.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sym.n(),
        });
    }
    if sym.order() > max_order {
        return Err(Error::InvalidParameter(format!(
            "{name} has order {} > {max_order}",
            sym.order()
        )));
    }
    Ok(())
}
