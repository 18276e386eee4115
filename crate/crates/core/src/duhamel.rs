//! Source terms and the Duhamel convolution `int_0^t S(t - tau) F(tau) dtau`.
//!
//! `F(xi, tau) = L(xi) g_hat(xi, tau)` is the per-mode forcing of
//! `u_tt + Q u = F`. The integrand `S(t - tau) F(tau)` is the source response
//! returned by [`PropagatorTable::phi_kernel`] when given `g_hat`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{SpectralField, SpectralGrid};
use crate::propagator::PropagatorTable;
use crate::quadrature::simpson_weights;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Physical-space source `g(x, t)` of the linear problem.
pub trait SourceTerm: Send + Sync {
    fn eval(&self, x: &[f64], t: f64) -> Complex64;

    fn is_zero(&self) -> bool {
        false
    }

    fn sample(&self, grid: &Arc<SpectralGrid>, t: f64) -> SpectralField {
        SpectralField::from_fn(grid.clone(), |x| self.eval(x, t))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSource;

impl SourceTerm for ZeroSource {
    fn eval(&self, _x: &[f64], _t: f64) -> Complex64 {
        ZERO
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// `g(x, t) = A exp(-|x - c|^2 / w^2) cos(omega t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPulse {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub omega: f64,
}

impl SourceTerm for GaussianPulse {
    fn eval(&self, x: &[f64], t: f64) -> Complex64 {
        let r2: f64 = x
            .iter()
            .zip(self.center.iter().chain(std::iter::repeat(&0.0)))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Complex64::new(
            self.amplitude * (-r2 / (self.width * self.width)).exp() * (self.omega * t).cos(),
            0.0,
        )
    }
}

/// Source defined by a closure.
pub struct FnSource<F>(pub F);

impl<F> SourceTerm for FnSource<F>
where
    F: Fn(&[f64], f64) -> Complex64 + Send + Sync,
{
    fn eval(&self, x: &[f64], t: f64) -> Complex64 {
        (self.0)(x, t)
    }
}

/// Per-mode forcing `F(xi, t)` evaluable at arbitrary times.
pub trait Forcing: Sync {
    fn forcing(&self, t: f64) -> Result<Arc<Vec<Complex64>>>;

    fn is_zero(&self) -> bool {
        false
    }
}

/// Forcing identically zero.
#[derive(Debug, Clone, Copy)]
pub struct NoForcing;

impl Forcing for NoForcing {
    fn forcing(&self, _t: f64) -> Result<Arc<Vec<Complex64>>> {
        Err(Error::InvalidParameter("zero forcing has no samples".into()))
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Upper bound on cached complex values across all times.
const CACHE_VALUES: usize = 1 << 22;

/// Transforms a physical source lazily and multiplies by `L(xi)`.
///
/// Transformed samples are cached by time; the cache is behind a mutex so
/// concurrent readers are safe.
pub struct SourceForcing<'a> {
    source: &'a dyn SourceTerm,
    table: &'a PropagatorTable,
    cache: Mutex<HashMap<u64, Arc<Vec<Complex64>>>>,
}

impl<'a> SourceForcing<'a> {
    pub fn new(source: &'a dyn SourceTerm, table: &'a PropagatorTable) -> Self {
        Self {
            source,
            table,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Transformed source `g_hat(., t)` without the `L` factor.
    pub fn ghat(&self, t: f64) -> Result<Vec<Complex64>> {
        let g = self.source.sample(self.table.grid(), t);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("source at t = {t}")));
        }
        Ok(g.to_frequency()?.into_values())
    }
}

impl Forcing for SourceForcing<'_> {
    fn forcing(&self, t: f64) -> Result<Arc<Vec<Complex64>>> {
        let key = t.to_bits();
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let mut values = self.ghat(t)?;
        for (m, v) in values.iter_mut().enumerate() {
            *v *= self.table.l(m);
        }
        let values = Arc::new(values);
        let mut cache = self.cache.lock().expect("cache poisoned");
        if (cache.len() + 1) * values.len() <= CACHE_VALUES {
            cache.insert(key, values.clone());
        }
        Ok(values)
    }

    fn is_zero(&self) -> bool {
        self.source.is_zero()
    }
}

/// `int_0^t S(t - tau) F(tau) dtau` for one mode with `nodes` Simpson points.
pub fn duhamel(
    table: &PropagatorTable,
    mode: usize,
    t: f64,
    forcing: impl Fn(f64) -> Complex64,
    nodes: usize,
) -> Result<Complex64> {
    convolve(table, mode, t, forcing, nodes, false)
}

/// `int_0^t C(t - tau) F(tau) dtau`, the Duhamel term of `u_t`.
pub fn duhamel_derivative(
    table: &PropagatorTable,
    mode: usize,
    t: f64,
    forcing: impl Fn(f64) -> Complex64,
    nodes: usize,
) -> Result<Complex64> {
    convolve(table, mode, t, forcing, nodes, true)
}

fn convolve(
    table: &PropagatorTable,
    mode: usize,
    t: f64,
    forcing: impl Fn(f64) -> Complex64,
    nodes: usize,
    cosine: bool,
) -> Result<Complex64> {
    if t == 0.0 {
        return Ok(ZERO);
    }
    let w = simpson_weights(nodes.max(2), 0.0, t);
    let mut acc = ZERO;
    for (k, wk) in w.iter().enumerate() {
        let tau = t * (k as f64 / (w.len() - 1) as f64);
        let (c, s) = table.cos_sin(mode, t - tau)?;
        acc += wk * if cosine { c } else { s } * forcing(tau);
    }
    Ok(acc)
}

/// Node-count policy for the all-mode Duhamel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuhamelControls {
    pub initial_nodes: usize,
    pub max_nodes: usize,
    pub rel_tol: f64,
    pub adaptive: bool,
}

impl Default for DuhamelControls {
    fn default() -> Self {
        Self {
            initial_nodes: 65,
            max_nodes: 1025,
            rel_tol: 1e-9,
            adaptive: true,
        }
    }
}

impl DuhamelControls {
    /// Fixed node count, no refinement.
    pub fn fixed(nodes: usize) -> Self {
        Self {
            initial_nodes: nodes,
            max_nodes: nodes,
            rel_tol: 0.0,
            adaptive: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DuhamelValues {
    /// `int_0^t S(t - tau) F dtau` per mode.
    pub w: Vec<Complex64>,
    /// `int_0^t C(t - tau) F dtau` per mode.
    pub wt: Vec<Complex64>,
    pub nodes_used: usize,
    pub converged: bool,
}

/// Duhamel terms for every mode at time `t`, refining by node doubling until
/// the sup-norm change is below `rel_tol` relative or `max_nodes` is reached.
pub fn duhamel_all(
    table: &PropagatorTable,
    forcing: &dyn Forcing,
    t: f64,
    controls: &DuhamelControls,
) -> Result<DuhamelValues> {
    let modes = table.len();
    if t == 0.0 || forcing.is_zero() {
        return Ok(DuhamelValues {
            w: vec![ZERO; modes],
            wt: vec![ZERO; modes],
            nodes_used: 0,
            converged: true,
        });
    }
    let mut intervals = (controls.initial_nodes.max(3) - 1).next_power_of_two();
    if !controls.adaptive {
        intervals = controls.initial_nodes.max(2) - 1;
    }
    let node_time = |k: usize, intervals: usize| t * (k as f64 / intervals as f64);

    let mut samples: Vec<Arc<Vec<Complex64>>> = (0..=intervals)
        .map(|k| forcing.forcing(node_time(k, intervals)))
        .collect::<Result<_>>()?;
    let mut current = sum_level(table, &samples, t, intervals)?;
    if !controls.adaptive {
        return Ok(DuhamelValues {
            w: current.0,
            wt: current.1,
            nodes_used: intervals + 1,
            converged: true,
        });
    }
    loop {
        let next_intervals = 2 * intervals;
        if next_intervals + 1 > controls.max_nodes {
            return Ok(DuhamelValues {
                w: current.0,
                wt: current.1,
                nodes_used: intervals + 1,
                converged: false,
            });
        }
        let mut refined = Vec::with_capacity(next_intervals + 1);
        for k in 0..=next_intervals {
            if k % 2 == 0 {
                refined.push(samples[k / 2].clone());
            } else {
                refined.push(forcing.forcing(node_time(k, next_intervals))?);
            }
        }
        let next = sum_level(table, &refined, t, next_intervals)?;
        let change = sup_diff(&next.0, &current.0).max(sup_diff(&next.1, &current.1));
        let scale = sup(&next.0).max(sup(&next.1));
        samples = refined;
        intervals = next_intervals;
        current = next;
        if change <= controls.rel_tol * scale || scale == 0.0 {
            return Ok(DuhamelValues {
                w: current.0,
                wt: current.1,
                nodes_used: intervals + 1,
                converged: true,
            });
        }
    }
}

fn sum_level(
    table: &PropagatorTable,
    samples: &[Arc<Vec<Complex64>>],
    t: f64,
    intervals: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let weights = simpson_weights(intervals + 1, 0.0, t);
    let per_mode: Vec<(Complex64, Complex64)> = (0..table.len())
        .into_par_iter()
        .map(|m| {
            let mut w = ZERO;
            let mut wt = ZERO;
            for (k, wk) in weights.iter().enumerate() {
                let f = samples[k][m];
                if f == ZERO {
                    continue;
                }
                let lag = t * ((intervals - k) as f64 / intervals as f64);
                let (c, s) = table.cos_sin(m, lag)?;
                w += wk * s * f;
                wt += wk * c * f;
            }
            Ok((w, wt))
        })
        .collect::<Result<_>>()?;
    Ok(per_mode.into_iter().unzip())
}

fn sup(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn sup_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
