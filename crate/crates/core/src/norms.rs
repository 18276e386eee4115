//! Cell-volume weighted discrete norms and the Bessel-potential norm
//! `||(1 - Laplacian)^{s/2} u||_p`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Domain, SpectralField, SpectralGrid};

fn physical(f: &SpectralField) -> Result<std::borrow::Cow<'_, SpectralField>> {
    Ok(match f.domain() {
        Domain::Physical => std::borrow::Cow::Borrowed(f),
        Domain::Frequency => std::borrow::Cow::Owned(f.to_physical()?),
    })
}

fn lp_values(values: &[Complex64], p: f64, cell: f64) -> f64 {
    if p == 1.0 {
        return values.iter().map(|v| v.norm()).sum::<f64>() * cell;
    }
    if p == 2.0 {
        return (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell).sqrt();
    }
    // scale by the max to avoid overflow of |v|^p
    let m = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    m * (values.iter().map(|v| (v.norm() / m).powf(p)).sum::<f64>() * cell).powf(1.0 / p)
}

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "norm exponent p = {p} must lie in [1, inf)"
        )))
    }
}

/// `(sum |f|^p dV)^(1/p)`; frequency-domain fields are transformed first.
pub fn lp_norm(f: &SpectralField, p: f64) -> Result<f64> {
    check_p(p)?;
    let f = physical(f)?;
    Ok(lp_values(f.values(), p, f.grid().cell_volume()))
}

pub fn linf_norm(f: &SpectralField) -> Result<f64> {
    Ok(physical(f)?.max_abs())
}

pub fn ysp_norm(f: &SpectralField, s: f64, p: f64) -> Result<f64> {
    NormSuite::new(f.grid().clone(), s, p)?.ysp(f)
}

/// Norms with a fixed `(s, p)` and a cached multiplier `(1 + |xi|^2)^{s/2}`.
#[derive(Debug, Clone)]
pub struct NormSuite {
    grid: Arc<SpectralGrid>,
    s: f64,
    p: f64,
    multiplier: Vec<f64>,
}

impl NormSuite {
    pub fn new(grid: Arc<SpectralGrid>, s: f64, p: f64) -> Result<Self> {
        check_p(p)?;
        if !s.is_finite() {
            return Err(Error::InvalidParameter(format!("smoothness s = {s}")));
        }
        let multiplier = (0..grid.len())
            .map(|m| (1.0 + grid.xi_norm_sq(m)).powf(s / 2.0))
            .collect();
        Ok(Self { grid, s, p, multiplier })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    pub fn lp(&self, f: &SpectralField) -> Result<f64> {
        lp_norm(f, self.p)
    }

    pub fn l1(&self, f: &SpectralField) -> Result<f64> {
        lp_norm(f, 1.0)
    }

    pub fn linf(&self, f: &SpectralField) -> Result<f64> {
        linf_norm(f)
    }

    pub fn ysp(&self, f: &SpectralField) -> Result<f64> {
        if !Arc::ptr_eq(f.grid(), &self.grid) && f.grid().points() != self.grid.points() {
            return Err(Error::GridMismatch);
        }
        let hat = match f.domain() {
            Domain::Frequency => f.values().to_vec(),
            Domain::Physical => f.to_frequency()?.into_values(),
        };
        self.ysp_hat(&hat)
    }

    /// Y^{s,p} norm from Fourier coefficients.
    pub fn ysp_hat(&self, hat: &[Complex64]) -> Result<f64> {
        if hat.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: hat.len(),
            });
        }
        let mut values: Vec<Complex64> = hat.iter().zip(&self.multiplier).map(|(v, w)| v * w).collect();
        self.grid.fft_inverse(&mut values);
        Ok(lp_values(&values, self.p, self.grid.cell_volume()))
    }

    /// `(||f||_inf, ||f||_p, ||f||_{Y^{s,p}})` from Fourier coefficients.
    pub fn triple_hat(&self, hat: &[Complex64]) -> Result<(f64, f64, f64)> {
        let mut phys = hat.to_vec();
        self.grid.fft_inverse(&mut phys);
        let cell = self.grid.cell_volume();
        let linf = phys.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok((linf, lp_values(&phys, self.p, cell), self.ysp_hat(hat)?))
    }
}
