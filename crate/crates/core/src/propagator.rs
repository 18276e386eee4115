//! Per-mode fundamental solutions `C = cos(sqrt(Q) t)` and
//! `S = sin(sqrt(Q) t) / sqrt(Q)` of the oscillator `u'' + Q u = 0`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::SpectralGrid;
use crate::symbols::{SymbolSet, ZeroThresholds};

/// Below this `|sqrt(Q) t|` the truncated Taylor series is used.
pub const Z_EPS: f64 = 1e-4;
/// Largest admissible `|Im(sqrt(Q) t)|` before `exp` would overflow.
pub const Z_MAX: f64 = 700.0;

/// `(C(t), S(t))` for a given square root of `Q`. Both are even in the sign of `root`.
pub fn cos_sinc(root: Complex64, t: f64) -> (Complex64, Complex64) {
    let z = root * t;
    if z.norm() < Z_EPS {
        let z2 = z * z;
        let c = 1.0 - z2 / 2.0 + z2 * z2 / 24.0;
        let s = t * (1.0 - z2 / 6.0 + z2 * z2 / 120.0);
        (c, s)
    } else {
        (z.cos(), z.sin() / root)
    }
}

/// Principal square root with `Re >= 0` and `Im >= 0` on the negative real axis.
pub fn principal_sqrt(q: Complex64) -> Complex64 {
    let r = q.sqrt();
    if r.re < 0.0 || (r.re == 0.0 && r.im < 0.0) {
        -r
    } else {
        r
    }
}

/// Immutable per-mode table of `Q(xi)`, `L(xi)` and `sqrt(Q(xi))`.
#[derive(Debug, Clone)]
pub struct PropagatorTable {
    grid: Arc<SpectralGrid>,
    q: Vec<Complex64>,
    l: Vec<Complex64>,
    sqrt_q: Vec<Complex64>,
    outside_hypotheses: bool,
}

impl PropagatorTable {
    pub fn new(set: &SymbolSet, grid: Arc<SpectralGrid>) -> Result<Self> {
        if set.n() != grid.n() {
            return Err(Error::DimensionMismatch {
                expected: grid.n(),
                got: set.n(),
            });
        }
        let eps = ZeroThresholds::for_grid(set, &grid);
        let mut q = Vec::with_capacity(grid.len());
        let mut l = Vec::with_capacity(grid.len());
        for m in 0..grid.len() {
            let xi = grid.xi(m);
            let den = 1.0 + set.l0.eval_unchecked(xi);
            if den.norm() <= eps.one_plus_l0 {
                return Err(Error::SymbolSingularity { xi: xi.to_vec() });
            }
            q.push(set.l1.eval_unchecked(xi) / den);
            l.push(set.l2.eval_unchecked(xi) / den);
        }
        Self::from_values(grid, q, l)
    }

    /// Table from explicit per-mode `Q` and `L` values.
    pub fn from_values(grid: Arc<SpectralGrid>, q: Vec<Complex64>, l: Vec<Complex64>) -> Result<Self> {
        if q.len() != grid.len() || l.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: q.len().min(l.len()),
            });
        }
        let sqrt_q = q.iter().map(|&v| principal_sqrt(v)).collect();
        let outside_hypotheses = q.iter().any(|v| v.re < 0.0 || v.im.abs() > 1e-12 * (1.0 + v.norm()));
        Ok(Self {
            grid,
            q,
            l,
            sqrt_q,
            outside_hypotheses,
        })
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn q(&self, mode: usize) -> Complex64 {
        self.q[mode]
    }

    pub fn l(&self, mode: usize) -> Complex64 {
        self.l[mode]
    }

    pub fn sqrt_q(&self, mode: usize) -> Complex64 {
        self.sqrt_q[mode]
    }

    /// Some mode has negative or complex `Q`, so `|C|` may exceed 1.
    pub fn outside_hypotheses(&self) -> bool {
        self.outside_hypotheses
    }

    /// `(C(t), S(t))` for one mode, guarded against exponential overflow.
    pub fn cos_sin(&self, mode: usize, t: f64) -> Result<(Complex64, Complex64)> {
        let root = self.sqrt_q[mode];
        let im = (root * t).im.abs();
        if im > Z_MAX {
            return Err(Error::HyperbolicGrowth { mode, t, im });
        }
        Ok(cos_sinc(root, t))
    }

    pub fn cos_prop(&self, mode: usize, t: f64) -> Result<Complex64> {
        Ok(self.cos_sin(mode, t)?.0)
    }

    pub fn sin_prop(&self, mode: usize, t: f64) -> Result<Complex64> {
        Ok(self.cos_sin(mode, t)?.1)
    }

    /// Source response `L S(t) g`: the Duhamel integrand at lag `t`.
    pub fn phi_kernel(&self, mode: usize, t: f64, ghat: Complex64) -> Result<Complex64> {
        Ok(self.l[mode] * self.sin_prop(mode, t)? * ghat)
    }

    /// `u(t) = C u0 + S u1 + duhamel`.
    pub fn u_prop(&self, mode: usize, t: f64, u0: Complex64, u1: Complex64, duhamel: Complex64) -> Result<Complex64> {
        let (c, s) = self.cos_sin(mode, t)?;
        Ok(c * u0 + s * u1 + duhamel)
    }

    /// `u_t(t) = -Q S u0 + C u1 + duhamel`, where `duhamel` is the
    /// `int_0^t C(t - tau) F(tau) dtau` term.
    pub fn ut_prop(&self, mode: usize, t: f64, u0: Complex64, u1: Complex64, duhamel: Complex64) -> Result<Complex64> {
        let (c, s) = self.cos_sin(mode, t)?;
        Ok(-self.q[mode] * s * u0 + c * u1 + duhamel)
    }
}
