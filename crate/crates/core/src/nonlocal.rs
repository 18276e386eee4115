//! Integral-condition kernels `alpha`, `beta`, their admissibility check, and
//! the per-mode 2x2 system recovering the true initial pair `(u0, u1)`.
//!
//! The conditions read
//!
//! ```text
//! u(x, 0)   = phi(x) + int_0^T alpha(s) u(x, s) ds
//! u_t(x, 0) = psi(x) + int_0^T beta(s)  u_t(x, s) ds
//! ```

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::duhamel::{duhamel_all, DuhamelControls, Forcing};
use crate::error::{Error, Result};
use crate::propagator::PropagatorTable;
use crate::quadrature::{lagrange4, simpson_weights};

/// Default node count for sampled densities.
pub const DEFAULT_NODES: usize = 129;
/// Smallest admissible `|D(xi)|`.
pub const MIN_DET: f64 = 1e-10;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Closed-form density profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityProfile {
    Constant {
        value: f64,
    },
    /// `intercept + slope * s`
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `amplitude * exp(-((s - center) / width)^2)`
    GaussianBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

impl DensityProfile {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            DensityProfile::Constant { value } => value,
            DensityProfile::Linear { intercept, slope } => intercept + slope * s,
            DensityProfile::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let z = (s - center) / width;
                amplitude * (-z * z).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DensityProfile::Constant { value } => value.is_finite(),
            DensityProfile::Linear { intercept, slope } => intercept.is_finite() && slope.is_finite(),
            DensityProfile::GaussianBump {
                amplitude,
                center,
                width,
            } => amplitude.is_finite() && center.is_finite() && width.is_finite() && width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!("bad profile parameters {self:?}")))
        }
    }
}

/// One point mass of a multipoint condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelRepr {
    /// Values on `samples.len()` uniform nodes covering `[0, T]`.
    Density {
        samples: Vec<f64>,
        profile: Option<DensityProfile>,
    },
    Atoms(Vec<Atom>),
}

/// A finite measure on `[0, T]`: a sampled density or a list of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalKernel {
    horizon: f64,
    repr: KernelRepr,
}

impl NonlocalKernel {
    /// The zero measure.
    pub fn zero(horizon: f64) -> Result<Self> {
        Self::atoms(horizon, Vec::new())
    }

    pub fn density(horizon: f64, samples: Vec<f64>) -> Result<Self> {
        check_horizon(horizon)?;
        if samples.len() < 2 {
            return Err(Error::InvalidKernel("density needs at least two nodes".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel("non-finite density sample".into()));
        }
        Ok(Self {
            horizon,
            repr: KernelRepr::Density { samples, profile: None },
        })
    }

    pub fn from_profile(horizon: f64, profile: DensityProfile, nodes: usize) -> Result<Self> {
        check_horizon(horizon)?;
        profile.validate()?;
        if nodes < 2 {
            return Err(Error::InvalidKernel("density needs at least two nodes".into()));
        }
        let samples = (0..nodes)
            .map(|i| profile.eval(horizon * i as f64 / (nodes - 1) as f64))
            .collect();
        Ok(Self {
            horizon,
            repr: KernelRepr::Density {
                samples,
                profile: Some(profile),
            },
        })
    }

    pub fn atoms(horizon: f64, atoms: Vec<Atom>) -> Result<Self> {
        check_horizon(horizon)?;
        let slack = 1e-12 * horizon;
        for a in &atoms {
            if !a.weight.is_finite() || !a.location.is_finite() {
                return Err(Error::InvalidKernel("non-finite atom".into()));
            }
            if a.location < -slack || a.location > horizon + slack {
                return Err(Error::InvalidKernel(format!(
                    "atom at {} lies outside [0, {horizon}]",
                    a.location
                )));
            }
        }
        let atoms = atoms
            .into_iter()
            .map(|a| Atom {
                location: a.location.clamp(0.0, horizon),
                weight: a.weight,
            })
            .collect();
        Ok(Self {
            horizon,
            repr: KernelRepr::Atoms(atoms),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn repr(&self) -> &KernelRepr {
        &self.repr
    }

    pub fn is_zero(&self) -> bool {
        match &self.repr {
            KernelRepr::Density { samples, .. } => samples.iter().all(|&v| v == 0.0),
            KernelRepr::Atoms(atoms) => atoms.iter().all(|a| a.weight == 0.0),
        }
    }

    /// Node count of a density, `None` for atoms.
    pub fn nodes(&self) -> Option<usize> {
        match &self.repr {
            KernelRepr::Density { samples, .. } => Some(samples.len()),
            KernelRepr::Atoms(_) => None,
        }
    }

    /// Density value at `s`: closed form if known, otherwise interpolated
    /// from the samples. `None` for atoms.
    pub fn density_at(&self, s: f64) -> Option<f64> {
        match &self.repr {
            KernelRepr::Density { profile: Some(p), .. } => Some(p.eval(s)),
            KernelRepr::Density { samples, .. } => {
                let h = self.horizon / (samples.len() - 1) as f64;
                if samples.len() >= 4 {
                    Some(lagrange4(0.0, h, samples, s))
                } else {
                    let pos = (s / h).clamp(0.0, (samples.len() - 1) as f64);
                    let i = (pos.floor() as usize).min(samples.len() - 2);
                    let frac = pos - i as f64;
                    Some(samples[i] * (1.0 - frac) + samples[i + 1] * frac)
                }
            }
            KernelRepr::Atoms(_) => None,
        }
    }

    /// The measure as `(location, weight)` pairs: quadrature nodes times
    /// density values, or the atoms themselves.
    pub fn measure(&self) -> Vec<(f64, f64)> {
        match &self.repr {
            KernelRepr::Density { samples, .. } => {
                let n = samples.len();
                simpson_weights(n, 0.0, self.horizon)
                    .into_iter()
                    .zip(samples)
                    .enumerate()
                    .map(|(i, (w, v))| (self.horizon * i as f64 / (n - 1) as f64, w * v))
                    .collect()
            }
            KernelRepr::Atoms(atoms) => atoms.iter().map(|a| (a.location, a.weight)).collect(),
        }
    }

    /// `int |alpha|`.
    pub fn total_variation(&self) -> f64 {
        match &self.repr {
            KernelRepr::Density { samples, .. } => simpson_weights(samples.len(), 0.0, self.horizon)
                .iter()
                .zip(samples)
                .map(|(w, v)| w * v.abs())
                .sum(),
            KernelRepr::Atoms(atoms) => atoms.iter().map(|a| a.weight.abs()).sum(),
        }
    }

    /// `int_0^T alpha(s) g(s) ds`.
    pub fn integrate(&self, g: impl Fn(f64) -> Complex64) -> Complex64 {
        self.measure()
            .into_iter()
            .filter(|&(_, w)| w != 0.0)
            .map(|(s, w)| w * g(s))
            .sum()
    }

    /// Same measure resampled on `nodes` density nodes; atoms are unchanged.
    pub fn with_nodes(&self, nodes: usize) -> Result<Self> {
        match &self.repr {
            KernelRepr::Density { profile: Some(p), .. } => Self::from_profile(self.horizon, p.clone(), nodes),
            KernelRepr::Density { samples, .. } if samples.len() == nodes => Ok(self.clone()),
            KernelRepr::Density { .. } => {
                if nodes < 2 {
                    return Err(Error::InvalidKernel("density needs at least two nodes".into()));
                }
                let samples = (0..nodes)
                    .map(|i| {
                        self.density_at(self.horizon * i as f64 / (nodes - 1) as f64)
                            .expect("density")
                    })
                    .collect();
                Self::density(self.horizon, samples)
            }
            KernelRepr::Atoms(_) => Ok(self.clone()),
        }
    }

    /// Kernel multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let repr = match &self.repr {
            KernelRepr::Density { samples, profile } => KernelRepr::Density {
                samples: samples.iter().map(|v| c * v).collect(),
                profile: profile.as_ref().map(|p| match *p {
                    DensityProfile::Constant { value } => DensityProfile::Constant { value: c * value },
                    DensityProfile::Linear { intercept, slope } => DensityProfile::Linear {
                        intercept: c * intercept,
                        slope: c * slope,
                    },
                    DensityProfile::GaussianBump {
                        amplitude,
                        center,
                        width,
                    } => DensityProfile::GaussianBump {
                        amplitude: c * amplitude,
                        center,
                        width,
                    },
                }),
            },
            KernelRepr::Atoms(atoms) => KernelRepr::Atoms(
                atoms
                    .iter()
                    .map(|a| Atom {
                        location: a.location,
                        weight: c * a.weight,
                    })
                    .collect(),
            ),
        };
        Self {
            horizon: self.horizon,
            repr,
        }
    }

    /// Weights `W_k` with `sum_k W_k g(t_k) ~ int alpha g` for samples of `g`
    /// on `nodes` uniform points covering `[0, T]`. Densities use Simpson
    /// with the density evaluated at the nodes; atoms spread their weight by
    /// cubic Lagrange interpolation.
    pub fn functional_on(&self, nodes: usize) -> Vec<f64> {
        assert!(nodes >= 4, "need at least four trajectory nodes");
        let h = self.horizon / (nodes - 1) as f64;
        match &self.repr {
            KernelRepr::Density { .. } => simpson_weights(nodes, 0.0, self.horizon)
                .into_iter()
                .enumerate()
                .map(|(k, w)| w * self.density_at(k as f64 * h).expect("density"))
                .collect(),
            KernelRepr::Atoms(atoms) => {
                let mut out = vec![0.0; nodes];
                for a in atoms {
                    for (k, slot) in out.iter_mut().enumerate() {
                        let mut unit = vec![0.0; nodes];
                        unit[k] = 1.0;
                        *slot += a.weight * lagrange4(0.0, h, &unit, a.location);
                    }
                }
                out
            }
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!("horizon must be positive, got {horizon}")))
    }
}

fn same_horizon(a: &NonlocalKernel, b: &NonlocalKernel) -> Result<()> {
    if (a.horizon - b.horizon).abs() > 1e-12 * a.horizon.max(b.horizon) {
        return Err(Error::HorizonMismatch(a.horizon, b.horizon));
    }
    Ok(())
}

/// `int_0^T alpha(s) g(s) ds`.
pub fn kernel_integral(k: &NonlocalKernel, g: impl Fn(f64) -> Complex64) -> Complex64 {
    k.integrate(g)
}

/// `int alpha beta`. Two densities are multiplied on the finer node set;
/// a density against atoms is evaluated at the atoms; two atom lists pair
/// only at coincident locations.
pub fn product_integral(alpha: &NonlocalKernel, beta: &NonlocalKernel) -> Result<f64> {
    same_horizon(alpha, beta)?;
    let t = alpha.horizon;
    Ok(match (&alpha.repr, &beta.repr) {
        (KernelRepr::Density { samples: a, .. }, KernelRepr::Density { samples: b, .. }) => {
            let nodes = a.len().max(b.len());
            let h = t / (nodes - 1) as f64;
            simpson_weights(nodes, 0.0, t)
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let s = i as f64 * h;
                    let av = if a.len() == nodes {
                        a[i]
                    } else {
                        alpha.density_at(s).expect("density")
                    };
                    let bv = if b.len() == nodes {
                        b[i]
                    } else {
                        beta.density_at(s).expect("density")
                    };
                    w * av * bv
                })
                .sum()
        }
        (KernelRepr::Density { .. }, KernelRepr::Atoms(atoms)) => atoms
            .iter()
            .map(|x| x.weight * alpha.density_at(x.location).expect("density"))
            .sum(),
        (KernelRepr::Atoms(atoms), KernelRepr::Density { .. }) => atoms
            .iter()
            .map(|x| x.weight * beta.density_at(x.location).expect("density"))
            .sum(),
        (KernelRepr::Atoms(a), KernelRepr::Atoms(b)) => {
            let tol = 1e-12 * t;
            a.iter()
                .flat_map(|x| b.iter().map(move |y| (x, y)))
                .filter(|(x, y)| (x.location - y.location).abs() <= tol)
                .map(|(x, y)| x.weight * y.weight)
                .sum()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    /// `|1 + int alpha beta| - int (|alpha| + |beta|)`
    pub margin: f64,
    pub product: f64,
    pub tv_alpha: f64,
    pub tv_beta: f64,
}

/// Sufficient condition for a uniformly invertible 2x2 system.
pub fn check_admissibility(alpha: &NonlocalKernel, beta: &NonlocalKernel) -> Result<Admissibility> {
    let product = product_integral(alpha, beta)?;
    let tv_alpha = alpha.total_variation();
    let tv_beta = beta.total_variation();
    let margin = (1.0 + product).abs() - (tv_alpha + tv_beta);
    Ok(Admissibility {
        admissible: margin > 0.0,
        margin,
        product,
        tv_alpha,
        tv_beta,
    })
}

/// Per-mode moments and determinant of the initial-pair system
///
/// ```text
/// (1 - A_C) u0 - A_S u1       = f1
///  B_QS u0      + (1 - B_C) u1 = f2
/// ```
#[derive(Debug, Clone)]
pub struct DeterminantTable {
    pub a_c: Vec<Complex64>,
    pub a_s: Vec<Complex64>,
    pub b_c: Vec<Complex64>,
    pub b_qs: Vec<Complex64>,
    pub det: Vec<Complex64>,
    min_abs: f64,
    argmin: usize,
    xi_min: Vec<f64>,
}

impl DeterminantTable {
    pub fn len(&self) -> usize {
        self.det.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det.is_empty()
    }

    pub fn min_abs(&self) -> f64 {
        self.min_abs
    }

    pub fn argmin(&self) -> usize {
        self.argmin
    }

    pub fn xi_min(&self) -> &[f64] {
        &self.xi_min
    }

    /// `(a11, a12, a21, a22)` at one mode.
    pub fn matrix(&self, mode: usize) -> [Complex64; 4] {
        [
            ONE - self.a_c[mode],
            -self.a_s[mode],
            self.b_qs[mode],
            ONE - self.b_c[mode],
        ]
    }

    /// Cramer solve at one mode.
    pub fn solve_mode(&self, mode: usize, f1: Complex64, f2: Complex64) -> (Complex64, Complex64) {
        let d = self.det[mode];
        let u0 = ((ONE - self.b_c[mode]) * f1 + self.a_s[mode] * f2) / d;
        let u1 = ((ONE - self.a_c[mode]) * f2 - self.b_qs[mode] * f1) / d;
        (u0, u1)
    }

    /// Relative residual of the system at one mode.
    pub fn residual(&self, mode: usize, u0: Complex64, u1: Complex64, f1: Complex64, f2: Complex64) -> f64 {
        let [a11, a12, a21, a22] = self.matrix(mode);
        let r1 = a11 * u0 + a12 * u1 - f1;
        let r2 = a21 * u0 + a22 * u1 - f2;
        let scale = 1.0 + f1.norm().max(f2.norm()).max(u0.norm()).max(u1.norm());
        r1.norm().max(r2.norm()) / scale
    }
}

/// Moments `A_C, A_S, B_C, B_QS` and `D = a11 a22 - a12 a21` for every mode.
/// Fails if `min |D|` falls below [`MIN_DET`].
pub fn build_determinant(
    alpha: &NonlocalKernel,
    beta: &NonlocalKernel,
    prop: &PropagatorTable,
) -> Result<DeterminantTable> {
    let table = determinant_unchecked(alpha, beta, prop)?;
    if table.min_abs < MIN_DET {
        return Err(Error::SingularDeterminant {
            min_abs: table.min_abs,
            xi: table.xi_min.clone(),
        });
    }
    Ok(table)
}

/// As [`build_determinant`] without the singularity check.
pub fn determinant_unchecked(
    alpha: &NonlocalKernel,
    beta: &NonlocalKernel,
    prop: &PropagatorTable,
) -> Result<DeterminantTable> {
    same_horizon(alpha, beta)?;
    let modes = prop.len();
    let ma: Vec<(f64, f64)> = alpha.measure().into_iter().filter(|m| m.1 != 0.0).collect();
    let mb: Vec<(f64, f64)> = beta.measure().into_iter().filter(|m| m.1 != 0.0).collect();
    let rows: Vec<[Complex64; 4]> = (0..modes)
        .into_par_iter()
        .map(|m| {
            let mut a_c = ZERO;
            let mut a_s = ZERO;
            for &(s, w) in &ma {
                let (c, sn) = prop.cos_sin(m, s)?;
                a_c += w * c;
                a_s += w * sn;
            }
            let mut b_c = ZERO;
            let mut b_s = ZERO;
            for &(s, w) in &mb {
                let (c, sn) = prop.cos_sin(m, s)?;
                b_c += w * c;
                b_s += w * sn;
            }
            Ok([a_c, a_s, b_c, prop.q(m) * b_s])
        })
        .collect::<Result<_>>()?;
    let mut table = DeterminantTable {
        a_c: Vec::with_capacity(modes),
        a_s: Vec::with_capacity(modes),
        b_c: Vec::with_capacity(modes),
        b_qs: Vec::with_capacity(modes),
        det: Vec::with_capacity(modes),
        min_abs: f64::INFINITY,
        argmin: 0,
        xi_min: Vec::new(),
    };
    for (m, [a_c, a_s, b_c, b_qs]) in rows.into_iter().enumerate() {
        let d = (ONE - a_c) * (ONE - b_c) + a_s * b_qs;
        if !(d.norm() >= table.min_abs) {
            table.min_abs = d.norm();
            table.argmin = m;
        }
        table.a_c.push(a_c);
        table.a_s.push(a_s);
        table.b_c.push(b_c);
        table.b_qs.push(b_qs);
        table.det.push(d);
    }
    if modes > 0 {
        table.xi_min = prop.grid().xi(table.argmin).to_vec();
    }
    Ok(table)
}

/// Recover `(u0, u1)` per mode from the right-hand sides.
pub fn solve_initial_pair(
    dt: &DeterminantTable,
    f1: &[Complex64],
    f2: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if f1.len() != dt.len() || f2.len() != dt.len() {
        return Err(Error::DimensionMismatch {
            expected: dt.len(),
            got: f1.len().min(f2.len()),
        });
    }
    if dt.min_abs < MIN_DET {
        return Err(Error::SingularDeterminant {
            min_abs: dt.min_abs,
            xi: dt.xi_min.clone(),
        });
    }
    Ok((0..dt.len()).map(|m| dt.solve_mode(m, f1[m], f2[m])).unzip())
}

/// Right-hand sides `f1 = phi_hat + int alpha w`, `f2 = psi_hat + int beta w_t`
/// where `w`, `w_t` are the Duhamel terms of the forcing.
///
/// Density kernels use the nested rule: the outer kernel nodes, and for each
/// node `s` the same node count mapped onto `[0, s]`. Atom kernels evaluate
/// the Duhamel terms adaptively at each atom.
pub fn build_rhs(
    alpha: &NonlocalKernel,
    beta: &NonlocalKernel,
    prop: &PropagatorTable,
    forcing: &dyn Forcing,
    phi_hat: &[Complex64],
    psi_hat: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    build_rhs_with(
        alpha,
        beta,
        prop,
        forcing,
        phi_hat,
        psi_hat,
        &DuhamelControls::default(),
    )
}

/// As [`build_rhs`] with explicit Duhamel controls for atom kernels.
pub fn build_rhs_with(
    alpha: &NonlocalKernel,
    beta: &NonlocalKernel,
    prop: &PropagatorTable,
    forcing: &dyn Forcing,
    phi_hat: &[Complex64],
    psi_hat: &[Complex64],
    controls: &DuhamelControls,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    same_horizon(alpha, beta)?;
    if phi_hat.len() != prop.len() || psi_hat.len() != prop.len() {
        return Err(Error::DimensionMismatch {
            expected: prop.len(),
            got: phi_hat.len().min(psi_hat.len()),
        });
    }
    let mut f1 = phi_hat.to_vec();
    let mut f2 = psi_hat.to_vec();
    if forcing.is_zero() {
        return Ok((f1, f2));
    }
    accumulate_source(alpha, prop, forcing, false, controls, &mut f1)?;
    accumulate_source(beta, prop, forcing, true, controls, &mut f2)?;
    Ok((f1, f2))
}

fn accumulate_source(
    kernel: &NonlocalKernel,
    prop: &PropagatorTable,
    forcing: &dyn Forcing,
    derivative: bool,
    controls: &DuhamelControls,
    target: &mut [Complex64],
) -> Result<()> {
    if kernel.is_zero() {
        return Ok(());
    }
    match &kernel.repr {
        KernelRepr::Atoms(atoms) => {
            for a in atoms.iter().filter(|a| a.weight != 0.0) {
                let d = duhamel_all(prop, forcing, a.location, controls)?;
                let src = if derivative { &d.wt } else { &d.w };
                for (t, v) in target.iter_mut().zip(src) {
                    *t += a.weight * v;
                }
            }
        }
        KernelRepr::Density { samples, .. } => {
            let nq = samples.len();
            let span = (nq - 1) as f64;
            let horizon = kernel.horizon;
            let outer = simpson_weights(nq, 0.0, horizon);
            let time = |num: usize| horizon * (num as f64 / (span * span));
            for i in 1..nq {
                let wo = outer[i] * samples[i];
                if wo == 0.0 {
                    continue;
                }
                let sigma = horizon * i as f64 / span;
                let inner = simpson_weights(nq, 0.0, sigma);
                // nodes tau_j = sigma j / span; lags sigma - tau_j
                let values: Vec<Arc<Vec<Complex64>>> =
                    (0..nq).map(|j| forcing.forcing(time(i * j))).collect::<Result<_>>()?;
                let contrib: Vec<Complex64> = (0..prop.len())
                    .into_par_iter()
                    .map(|m| {
                        let mut acc = ZERO;
                        for (j, wj) in inner.iter().enumerate() {
                            let f = values[j][m];
                            if f == ZERO {
                                continue;
                            }
                            let (c, s) = prop.cos_sin(m, time(i * (nq - 1 - j)))?;
                            acc += wj * if derivative { c } else { s } * f;
                        }
                        Ok(acc)
                    })
                    .collect::<Result<_>>()?;
                for (t, v) in target.iter_mut().zip(contrib) {
                    *t += wo * v;
                }
            }
        }
    }
    Ok(())
}
