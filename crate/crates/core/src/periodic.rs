//! Real 1-periodic functions sampled on equispaced grids.
//!
//! Samples are the ground truth. The half spectrum `c_0 ..= c_{n/2}` is computed
//! eagerly on construction, so values are immutable and freely shareable across
//! threads. Nonlinear work happens on samples; linear solves happen on
//! coefficients.
//!
//! The Nyquist mode is interpreted as `Re(c_{n/2}) cos(pi n theta)` when
//! evaluating (so grid nodes are reproduced) and is dropped by every linear
//! operator that produces a derivative or a resolvent.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

pub(crate) fn check_grid(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::BadGrid(n));
    }
    Ok(())
}

/// Half spectrum (k = 0..=n/2) of real samples, normalized by 1/n.
fn forward(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, false).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.truncate(n / 2 + 1);
    for c in &mut buf {
        *c *= scale;
    }
    buf
}

/// Samples from a half spectrum; conjugate symmetry is implied.
fn inverse(n: usize, half: &[Complex64]) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(half[0].re, 0.0);
    for k in 1..n / 2 {
        buf[k] = half[k];
        buf[n - k] = half[k].conj();
    }
    buf[n / 2] = Complex64::new(half[n / 2].re, 0.0);
    plan(n, true).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Phase factors `e^{2 pi i k theta}` for k = 0..=kmax.
pub(crate) fn phases(theta: f64, kmax: usize, out: &mut Vec<Complex64>) {
    out.clear();
    let z = Complex64::from_polar(1.0, TWO_PI * theta);
    let mut e = Complex64::new(1.0, 0.0);
    for k in 0..=kmax {
        // re-anchor periodically to keep the recurrence drift at rounding level
        if k % 16 == 0 && k > 0 {
            e = Complex64::from_polar(1.0, TWO_PI * theta * k as f64);
        }
        out.push(e);
        e *= z;
    }
}

/// Evaluates a half spectrum against precomputed phases.
#[inline]
pub(crate) fn eval_half(half: &[Complex64], ph: &[Complex64], n: usize) -> f64 {
    let nyq = n / 2;
    let mut acc = 0.0;
    for k in 1..nyq {
        let c = half[k];
        let e = ph[k];
        acc += c.re * e.re - c.im * e.im;
    }
    half[0].re + 2.0 * acc + half[nyq].re * ph[nyq].re
}

/// A real 1-periodic function stored by samples at `theta_m = m / n`.
#[derive(Clone, Debug)]
pub struct PeriodicFn {
    values: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl PeriodicFn {
    /// Interpolates the given samples trigonometrically.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_grid(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let coeffs = forward(&values);
        Ok(Self { values, coeffs })
    }

    /// Builds a function from its half spectrum `c_0..=c_{n/2}`.
    pub fn from_coeffs(n: usize, half: Vec<Complex64>) -> Result<Self> {
        check_grid(n)?;
        if half.len() != n / 2 + 1 {
            return Err(Error::GridMismatch(n / 2 + 1, half.len()));
        }
        let values = inverse(n, &half);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { values, coeffs: half })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::constant(n, 0.0)
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n])
    }

    /// Samples `f` on the grid of size `n`.
    pub fn sample(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..n).map(|m| f(m as f64 / n as f64)).collect())
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Half spectrum `c_0..=c_{n/2}`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Spectral coefficient for any integer wavenumber (aliased into range).
    pub fn coeff(&self, k: i64) -> Complex64 {
        let n = self.n() as i64;
        let k = k.rem_euclid(n);
        if k <= n / 2 {
            self.coeffs[k as usize]
        } else {
            self.coeffs[(n - k) as usize].conj()
        }
    }

    pub fn theta(&self, m: usize) -> f64 {
        m as f64 / self.n() as f64
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Value of the trigonometric interpolant at any real `theta`.
    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.n();
        let x = theta.rem_euclid(1.0);
        let pos = x * n as f64;
        if pos.fract() == 0.0 {
            return self.values[pos as usize % n];
        }
        let mut ph = Vec::with_capacity(n / 2 + 1);
        phases(x, n / 2, &mut ph);
        eval_half(&self.coeffs, &ph, n)
    }

    pub fn differentiate(&self) -> PeriodicFn {
        let n = self.n();
        let mut half = self.coeffs.clone();
        for (k, c) in half.iter_mut().enumerate() {
            *c *= Complex64::new(0.0, TWO_PI * k as f64);
        }
        half[n / 2] = Complex64::new(0.0, 0.0);
        Self::from_coeffs(n, half).expect("derivative of a finite function is finite")
    }

    /// Returns `(mean, G)` with `G' = self - mean` and `G(0) = 0`.
    pub fn antiderivative_zero_mean(&self) -> (f64, PeriodicFn) {
        let n = self.n();
        let mean = self.mean();
        let mut half = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
        let mut at_zero = 0.0;
        for k in 1..n / 2 {
            half[k] = self.coeffs[k] / Complex64::new(0.0, TWO_PI * k as f64);
            at_zero += 2.0 * half[k].re;
        }
        half[0] = Complex64::new(-at_zero, 0.0);
        let g = Self::from_coeffs(n, half).expect("antiderivative of a finite function is finite");
        (mean, g)
    }

    /// Solves `a u' + c u = self` mode by mode.
    pub fn spectral_solve(&self, a: f64, c: f64) -> Result<PeriodicFn> {
        if c.abs() < 1e-12 * (1.0 + TWO_PI * a.abs()) {
            return Err(Error::SingularMode(c.abs()));
        }
        let n = self.n();
        let mut half = self.coeffs.clone();
        for (k, h) in half.iter_mut().enumerate() {
            *h /= Complex64::new(c, TWO_PI * k as f64 * a);
        }
        half[n / 2] = Complex64::new(0.0, 0.0);
        Self::from_coeffs(n, half)
    }

    /// `theta_m -> self(theta_m + shift(theta_m))`, on this function's grid.
    pub fn compose_shift(&self, shift: &PeriodicFn) -> PeriodicFn {
        let n = self.n();
        let out: Vec<f64> = (0..n)
            .map(|m| self.eval(self.theta(m) + shift.eval(self.theta(m))))
            .collect();
        Self::new(out).expect("shifted samples of a finite function are finite")
    }

    /// Trigonometric interpolant resampled onto `n_new` points.
    pub fn resample(&self, n_new: usize) -> Result<PeriodicFn> {
        check_grid(n_new)?;
        let n = self.n();
        if n_new == n {
            return Ok(self.clone());
        }
        let mut half = vec![Complex64::new(0.0, 0.0); n_new / 2 + 1];
        if n_new > n {
            half[..n / 2].copy_from_slice(&self.coeffs[..n / 2]);
            // cos(pi n theta) splits evenly into the +-n/2 pair
            half[n / 2] = Complex64::new(self.coeffs[n / 2].re / 2.0, 0.0);
        } else {
            half[..n_new / 2].copy_from_slice(&self.coeffs[..n_new / 2]);
        }
        Self::from_coeffs(n_new, half)
    }

    /// Zeroes all modes with `|k| >= n/3` (the 2/3 anti-aliasing rule).
    pub fn filter_two_thirds(&self) -> PeriodicFn {
        let n = self.n();
        let mut half = self.coeffs.clone();
        for (k, c) in half.iter_mut().enumerate() {
            if 3 * k >= n {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Self::from_coeffs(n, half).expect("filtered function is finite")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PeriodicFn> {
        Self::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &PeriodicFn, f: impl Fn(f64, f64) -> f64) -> Result<PeriodicFn> {
        if self.n() != other.n() {
            return Err(Error::GridMismatch(self.n(), other.n()));
        }
        Self::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &PeriodicFn) -> Result<PeriodicFn> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PeriodicFn) -> Result<PeriodicFn> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &PeriodicFn) -> Result<PeriodicFn> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> PeriodicFn {
        // linear in the coefficients, so keep both views consistent without a new FFT
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_constant(&self, c: f64) -> PeriodicFn {
        let mut out = self.clone();
        for v in &mut out.values {
            *v += c;
        }
        out.coeffs[0] += c;
        out
    }
}

#[derive(Serialize, Deserialize)]
struct PeriodicRepr {
    n: usize,
    /// Samples; kept alongside the coefficients so both views round-trip bit for bit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    coeffs: Vec<[f64; 2]>,
}

impl Serialize for PeriodicFn {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        PeriodicRepr {
            n: self.n(),
            values: Some(self.values.clone()),
            coeffs: self.coeffs.iter().map(|c| [c.re, c.im]).collect(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for PeriodicFn {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = PeriodicRepr::deserialize(de)?;
        let half = r.coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect();
        let f = PeriodicFn::from_coeffs(r.n, half).map_err(serde::de::Error::custom)?;
        let Some(values) = r.values else { return Ok(f) };
        if values.len() != r.n {
            return Err(serde::de::Error::custom(Error::GridMismatch(r.n, values.len())));
        }
        let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = values.iter().zip(&f.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !(gap <= 1e-10 * scale) {
            return Err(serde::de::Error::custom(format!("samples and coefficients disagree by {gap:e}")));
        }
        Ok(PeriodicFn { values, coeffs: f.coeffs })
    }
}

/// Degree-one circle lift `theta -> theta + p(theta)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusLift {
    pub periodic: PeriodicFn,
}

impl TorusLift {
    pub fn identity(n: usize) -> Result<Self> {
        Ok(Self { periodic: PeriodicFn::zeros(n)? })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        theta + self.periodic.eval(theta)
    }

    /// Values `theta_m + p(theta_m)` on the grid.
    pub fn values(&self) -> Vec<f64> {
        let n = self.periodic.n();
        self.periodic
            .values()
            .iter()
            .enumerate()
            .map(|(m, p)| m as f64 / n as f64 + p)
            .collect()
    }

    pub fn compose_shift(&self, shift: &PeriodicFn) -> TorusLift {
        let p = &self.periodic;
        let n = p.n();
        let out: Vec<f64> = (0..n)
            .map(|m| {
                let d = shift.eval(p.theta(m));
                d + p.eval(p.theta(m) + d)
            })
            .collect();
        TorusLift { periodic: PeriodicFn::new(out).expect("finite shifted lift") }
    }

    /// Derivative `1 + p'`, a periodic function.
    pub fn derivative(&self) -> PeriodicFn {
        self.periodic.differentiate().add_constant(1.0)
    }
}

/// First component of a plane loop: either a circle lift or a periodic function.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Angle {
    Lift(TorusLift),
    Periodic(PeriodicFn),
}

impl Angle {
    /// The stored periodic function (for a lift, its periodic part).
    pub fn periodic(&self) -> &PeriodicFn {
        match self {
            Angle::Lift(l) => &l.periodic,
            Angle::Periodic(p) => p,
        }
    }

    pub fn is_lift(&self) -> bool {
        matches!(self, Angle::Lift(_))
    }

    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            Angle::Lift(l) => l.eval(theta),
            Angle::Periodic(p) => p.eval(theta),
        }
    }

    /// Full values on the grid, including the identity for lifts.
    pub fn values(&self) -> Vec<f64> {
        match self {
            Angle::Lift(l) => l.values(),
            Angle::Periodic(p) => p.values().to_vec(),
        }
    }

    pub fn derivative(&self) -> PeriodicFn {
        match self {
            Angle::Lift(l) => l.derivative(),
            Angle::Periodic(p) => p.differentiate(),
        }
    }

    pub fn compose_shift(&self, shift: &PeriodicFn) -> Angle {
        match self {
            Angle::Lift(l) => Angle::Lift(l.compose_shift(shift)),
            Angle::Periodic(p) => Angle::Periodic(p.compose_shift(shift)),
        }
    }

    pub fn resample(&self, n: usize) -> Result<Angle> {
        Ok(match self {
            Angle::Lift(l) => Angle::Lift(TorusLift { periodic: l.periodic.resample(n)? }),
            Angle::Periodic(p) => Angle::Periodic(p.resample(n)?),
        })
    }

    pub fn with_periodic(&self, p: PeriodicFn) -> Angle {
        match self {
            Angle::Lift(_) => Angle::Lift(TorusLift { periodic: p }),
            Angle::Periodic(_) => Angle::Periodic(p),
        }
    }
}

/// A pair of functions of the angle: the loop `theta -> (W_1, W_2)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaneLoop {
    pub first: Angle,
    pub second: PeriodicFn,
}

impl PlaneLoop {
    pub fn new(first: Angle, second: PeriodicFn) -> Result<Self> {
        if first.periodic().n() != second.n() {
            return Err(Error::GridMismatch(first.periodic().n(), second.n()));
        }
        Ok(Self { first, second })
    }

    /// The loop `(theta, 0)`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(Angle::Lift(TorusLift::identity(n)?), PeriodicFn::zeros(n)?)
    }

    pub fn periodic(a: PeriodicFn, b: PeriodicFn) -> Result<Self> {
        Self::new(Angle::Periodic(a), b)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::periodic(PeriodicFn::zeros(n)?, PeriodicFn::zeros(n)?)
    }

    pub fn n(&self) -> usize {
        self.second.n()
    }

    pub fn eval(&self, theta: f64) -> [f64; 2] {
        [self.first.eval(theta), self.second.eval(theta)]
    }

    pub fn compose_shift(&self, shift: &PeriodicFn) -> PlaneLoop {
        PlaneLoop {
            first: self.first.compose_shift(shift),
            second: self.second.compose_shift(shift),
        }
    }

    pub fn resample(&self, n: usize) -> Result<PlaneLoop> {
        Ok(PlaneLoop { first: self.first.resample(n)?, second: self.second.resample(n)? })
    }

    pub fn scale(&self, c: f64) -> PlaneLoop {
        PlaneLoop {
            first: self.first.with_periodic(self.first.periodic().scale(c)),
            second: self.second.scale(c),
        }
    }
}

/// C0 grid distance between two loops, max over components.
///
/// Lifts are compared through their periodic parts; a lift against a periodic
/// component is compared through full values on `[0, 1)`.
pub fn c0_distance(f: &PlaneLoop, g: &PlaneLoop) -> Result<f64> {
    let n = f.n().max(g.n());
    let f = f.resample(n)?;
    let g = g.resample(n)?;
    let first = match (&f.first, &g.first) {
        (Angle::Lift(a), Angle::Lift(b)) => a.periodic.sub(&b.periodic)?.sup_norm(),
        (Angle::Periodic(a), Angle::Periodic(b)) => a.sub(b)?.sup_norm(),
        (a, b) => a
            .values()
            .iter()
            .zip(b.values())
            .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs())),
    };
    Ok(first.max(f.second.sub(&g.second)?.sup_norm()))
}
