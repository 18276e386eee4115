//! Periodic lattice on `[-L, L)^n` and the discrete Fourier pair used by every
//! solver stage.
//!
//! Forward transforms carry the `1/N` factor, so coefficients are mode
//! amplitudes: `cos(k x)` maps to `1/2` at `xi = +k` and `xi = -k`. Because the
//! lattice starts at `x = -L` rather than `0`, each coefficient picks up a sign
//! `(-1)^(j_1 + ... + j_n)` relative to a plain FFT of the samples.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Uniform periodic grid with precomputed wavenumber tables and FFT plans.
pub struct SpectralGrid {
    points: Vec<usize>,
    half_width: Vec<f64>,
    wavenumbers: Vec<Vec<f64>>,
    xi: Vec<f64>,
    xi_norm_sq: Vec<f64>,
    positions: Vec<f64>,
    signs: Vec<f64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("points", &self.points)
            .field("half_width", &self.half_width)
            .finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.half_width == other.half_width
    }
}

impl SpectralGrid {
    /// Grid with the same half-width `L` along every axis.
    pub fn new(n: usize, points: &[usize], half_width: f64) -> Result<Arc<Self>> {
        Self::with_half_widths(n, points, &vec![half_width; n.max(1)])
    }

    pub fn with_half_widths(n: usize, points: &[usize], half_width: &[f64]) -> Result<Arc<Self>> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(Error::InvalidGrid(format!("dimension {n} outside 1..=3")));
        }
        if points.len() != n || half_width.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} resolutions and half-widths, got {} and {}",
                points.len(),
                half_width.len()
            )));
        }
        for &p in points {
            if p < 4 || p % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "resolution {p} must be even and at least 4"
                )));
            }
        }
        for &l in half_width {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("half-width {l} must be positive")));
            }
        }

        let wavenumbers: Vec<Vec<f64>> = points
            .iter()
            .zip(half_width)
            .map(|(&p, &l)| (0..p).map(|i| std::f64::consts::PI * signed(i, p) as f64 / l).collect())
            .collect();

        let len: usize = points.iter().product();
        let mut xi = Vec::with_capacity(len * n);
        let mut xi_norm_sq = Vec::with_capacity(len);
        let mut positions = Vec::with_capacity(len * n);
        let mut signs = Vec::with_capacity(len);
        let mut multi = vec![0usize; n];
        for _ in 0..len {
            let mut norm = 0.0;
            let mut parity = 0i64;
            for d in 0..n {
                let k = wavenumbers[d][multi[d]];
                xi.push(k);
                norm += k * k;
                parity += signed(multi[d], points[d]);
                let h = 2.0 * half_width[d] / points[d] as f64;
                positions.push(-half_width[d] + multi[d] as f64 * h);
            }
            xi_norm_sq.push(norm);
            signs.push(if parity.rem_euclid(2) == 0 { 1.0 } else { -1.0 });
            // row-major increment, last axis fastest
            for d in (0..n).rev() {
                multi[d] += 1;
                if multi[d] < points[d] {
                    break;
                }
                multi[d] = 0;
            }
        }

        let mut planner = FftPlanner::new();
        let forward = points.iter().map(|&p| planner.plan_fft_forward(p)).collect();
        let inverse = points.iter().map(|&p| planner.plan_fft_inverse(p)).collect();

        Ok(Arc::new(Self {
            points: points.to_vec(),
            half_width: half_width.to_vec(),
            wavenumbers,
            xi,
            xi_norm_sq,
            positions,
            signs,
            forward,
            inverse,
        }))
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    /// Total number of lattice sites, equal to the number of Fourier modes.
    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    /// Wavenumbers along `dim` in storage (FFT) order.
    pub fn wavenumbers(&self, dim: usize) -> &[f64] {
        &self.wavenumbers[dim]
    }

    /// Wavenumbers along `dim` in increasing order, `-N/2 .. N/2 - 1`.
    pub fn sorted_wavenumbers(&self, dim: usize) -> Vec<f64> {
        let mut w = self.wavenumbers[dim].clone();
        w.sort_by(f64::total_cmp);
        w
    }

    /// Frequency vector of a flat mode index.
    pub fn xi(&self, mode: usize) -> &[f64] {
        let n = self.n();
        &self.xi[mode * n..(mode + 1) * n]
    }

    pub fn xi_norm_sq(&self, mode: usize) -> f64 {
        self.xi_norm_sq[mode]
    }

    pub fn xi_norm(&self, mode: usize) -> f64 {
        self.xi_norm_sq[mode].sqrt()
    }

    /// Physical coordinates of a flat site index.
    pub fn position(&self, site: usize) -> &[f64] {
        let n = self.n();
        &self.positions[site * n..(site + 1) * n]
    }

    pub fn cell_volume(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.half_width)
            .map(|(&p, &l)| 2.0 * l / p as f64)
            .product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.half_width.iter().map(|l| 2.0 * l).product()
    }

    /// Flat index of the mode with signed integer indices `j` (`xi_d = pi j_d / L_d`).
    pub fn mode_index(&self, j: &[i64]) -> Option<usize> {
        if j.len() != self.n() {
            return None;
        }
        let mut idx = 0usize;
        for (d, &jd) in j.iter().enumerate() {
            let p = self.points[d] as i64;
            if jd < -p / 2 || jd >= p / 2 {
                return None;
            }
            idx = idx * self.points[d] + jd.rem_euclid(p) as usize;
        }
        Some(idx)
    }

    /// Grid with every resolution doubled and the same domain.
    pub fn refined(&self) -> Result<Arc<Self>> {
        let pts: Vec<usize> = self.points.iter().map(|p| 2 * p).collect();
        Self::with_half_widths(self.n(), &pts, &self.half_width)
    }

    pub(crate) fn fft_forward(&self, values: &mut [Complex64]) {
        self.transform(values, &self.forward);
        let scale = 1.0 / self.len() as f64;
        for (v, s) in values.iter_mut().zip(&self.signs) {
            *v *= scale * s;
        }
    }

    pub(crate) fn fft_inverse(&self, values: &mut [Complex64]) {
        for (v, s) in values.iter_mut().zip(&self.signs) {
            *v *= *s;
        }
        self.transform(values, &self.inverse);
    }

    fn transform(&self, values: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let n = self.n();
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for (d, plan) in plans.iter().enumerate().take(n) {
            let p = self.points[d];
            let stride: usize = self.points[d + 1..].iter().product();
            let outer = self.len() / (p * stride);
            line.resize(p, Complex64::new(0.0, 0.0));
            scratch.resize(plan.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * p * stride + s;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = values[base + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        values[base + i * stride] = *v;
                    }
                }
            }
        }
    }
}

fn signed(i: usize, p: usize) -> i64 {
    if i < p / 2 {
        i as i64
    } else {
        i as i64 - p as i64
    }
}

/// Whether a field holds lattice samples or Fourier coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Physical,
    Frequency,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Physical => "physical",
            Domain::Frequency => "frequency",
        }
    }
}

/// Complex lattice function tagged with the domain it lives in.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Arc<SpectralGrid>,
    values: Vec<Complex64>,
    domain: Domain,
}

impl SpectralField {
    pub fn new(grid: Arc<SpectralGrid>, values: Vec<Complex64>, domain: Domain) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values, domain })
    }

    pub fn zeros(grid: Arc<SpectralGrid>, domain: Domain) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self { grid, values, domain }
    }

    /// Samples `f(x)` at every lattice site.
    pub fn from_fn(grid: Arc<SpectralGrid>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self {
            grid,
            values,
            domain: Domain::Physical,
        }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn same_grid(&self, other: &SpectralField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn to_frequency(&self) -> Result<SpectralField> {
        self.expect(Domain::Physical)?;
        let mut values = self.values.clone();
        self.grid.fft_forward(&mut values);
        Ok(SpectralField {
            grid: self.grid.clone(),
            values,
            domain: Domain::Frequency,
        })
    }

    pub fn to_physical(&self) -> Result<SpectralField> {
        self.expect(Domain::Frequency)?;
        let mut values = self.values.clone();
        self.grid.fft_inverse(&mut values);
        Ok(SpectralField {
            grid: self.grid.clone(),
            values,
            domain: Domain::Physical,
        })
    }

    pub fn scaled(&self, a: Complex64) -> SpectralField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `a * self + b * other`, same domain and grid required.
    pub fn combine(&self, a: Complex64, other: &SpectralField, b: Complex64) -> Result<SpectralField> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        other.expect(self.domain)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(SpectralField {
            grid: self.grid.clone(),
            values,
            domain: self.domain,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn expect(&self, domain: Domain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::WrongDomain {
                expected: domain.name(),
                found: self.domain.name(),
            });
        }
        Ok(())
    }
}
