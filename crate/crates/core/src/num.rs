//! Number types the expression tape can run over: plain reals, truncated
//! power series in `s` (one per grid node) and forward-mode dual numbers.
//! Duals nest, so second derivatives come from `Dual<Dual<f64>>`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Minimal field-like interface used by expression evaluation.
pub trait Num: Clone + std::fmt::Debug {
    /// A constant of the same shape as `self`.
    fn lift(&self, c: f64) -> Self;
    /// The underlying real value (order-0 coefficient, primal part).
    fn value(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Result<Self>;
    fn neg(&self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn add_f(&self, c: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    /// Real constant power; non-integer exponents need a positive base.
    fn powf(&self, p: f64) -> Result<Self>;
    fn is_finite(&self) -> bool;

    fn powi(&self, k: u32) -> Self {
        let mut acc = self.lift(1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }
}

fn is_integer_power(p: f64) -> Option<u32> {
    (p >= 0.0 && p.fract() == 0.0 && p <= u32::MAX as f64).then_some(p as u32)
}

impl Num for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Result<Self> {
        if *o == 0.0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self / o)
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn add_f(&self, c: f64) -> Self {
        self + c
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn powf(&self, p: f64) -> Result<Self> {
        if let Some(k) = is_integer_power(p) {
            return Ok(Num::powi(self, k));
        }
        if *self <= 0.0 {
            return Err(Error::NonFiniteEval("power of a non-positive base"));
        }
        Ok(f64::powf(*self, p))
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Denominators of series division must stay this far from zero.
pub const SERIES_DIV_FLOOR: f64 = 1e-10;

/// Truncated power series `c_0 + c_1 s + ... + c_{N-1} s^{N-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Taylor {
    pub c: SmallVec<[f64; 8]>,
}

impl Taylor {
    pub fn constant(order: usize, v: f64) -> Self {
        let mut c = SmallVec::from_elem(0.0, order);
        if order > 0 {
            c[0] = v;
        }
        Self { c }
    }

    /// The series `v + s`.
    pub fn variable(order: usize, v: f64) -> Self {
        let mut t = Self::constant(order, v);
        if order > 1 {
            t.c[1] = 1.0;
        }
        t
    }

    pub fn from_coeffs(c: &[f64]) -> Self {
        Self { c: SmallVec::from_slice(c) }
    }

    pub fn order(&self) -> usize {
        self.c.len()
    }

    fn zeros_like(&self) -> Self {
        Self { c: SmallVec::from_elem(0.0, self.order()) }
    }

    /// Sum of the series at `s`.
    pub fn eval(&self, s: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// Joint sine/cosine recurrences.
    fn sin_cos(&self) -> (Self, Self) {
        let n = self.order();
        let mut s = self.zeros_like();
        let mut c = self.zeros_like();
        s.c[0] = self.c[0].sin();
        c.c[0] = self.c[0].cos();
        for k in 1..n {
            let (mut ss, mut cc) = (0.0, 0.0);
            for j in 1..=k {
                let ju = j as f64 * self.c[j];
                ss += ju * c.c[k - j];
                cc += ju * s.c[k - j];
            }
            s.c[k] = ss / k as f64;
            c.c[k] = -cc / k as f64;
        }
        (s, c)
    }
}

impl Num for Taylor {
    fn lift(&self, c: f64) -> Self {
        Self::constant(self.order(), c)
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn add(&self, o: &Self) -> Self {
        Self { c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }
    fn sub(&self, o: &Self) -> Self {
        Self { c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }
    fn mul(&self, o: &Self) -> Self {
        let n = self.order();
        let mut out = self.zeros_like();
        for i in 0..n {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..n - i {
                out.c[i + j] += self.c[i] * o.c[j];
            }
        }
        out
    }
    fn div(&self, o: &Self) -> Result<Self> {
        let b0 = o.c[0];
        if b0.abs() < SERIES_DIV_FLOOR {
            return Err(Error::DivisionByZero);
        }
        let n = self.order();
        let mut q = self.zeros_like();
        for k in 0..n {
            let mut acc = self.c[k];
            for j in 1..=k {
                acc -= o.c[j] * q.c[k - j];
            }
            q.c[k] = acc / b0;
        }
        Ok(q)
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn scale(&self, c: f64) -> Self {
        Self { c: self.c.iter().map(|a| a * c).collect() }
    }
    fn add_f(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.c[0] += c;
        out
    }
    fn sin(&self) -> Self {
        self.sin_cos().0
    }
    fn cos(&self) -> Self {
        self.sin_cos().1
    }
    fn exp(&self) -> Self {
        let n = self.order();
        let mut e = self.zeros_like();
        e.c[0] = self.c[0].exp();
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.c[j] * e.c[k - j];
            }
            e.c[k] = acc / k as f64;
        }
        e
    }
    fn powf(&self, p: f64) -> Result<Self> {
        if let Some(k) = is_integer_power(p) {
            return Ok(Num::powi(self, k));
        }
        let u0 = self.c[0];
        if u0 <= 0.0 {
            return Err(Error::NonFiniteEval("power of a non-positive base"));
        }
        // u f' = p u' f, written coefficientwise
        let n = self.order();
        let mut f = self.zeros_like();
        f.c[0] = u0.powf(p);
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += ((p + 1.0) * j as f64 - k as f64) * self.c[j] * f.c[k - j];
            }
            f.c[k] = acc / (k as f64 * u0);
        }
        Ok(f)
    }
    fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }
}

/// Value plus one directional derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub v: T,
    pub d: T,
}

impl<T: Num> Dual<T> {
    pub fn constant(v: T) -> Self {
        let d = v.lift(0.0);
        Self { v, d }
    }

    /// Seeded variable: derivative `seed` in the chosen direction.
    pub fn seeded(v: T, seed: f64) -> Self {
        let d = v.lift(seed);
        Self { v, d }
    }
}

impl<T: Num> Num for Dual<T> {
    fn lift(&self, c: f64) -> Self {
        Self { v: self.v.lift(c), d: self.v.lift(0.0) }
    }
    fn value(&self) -> f64 {
        self.v.value()
    }
    fn add(&self, o: &Self) -> Self {
        Self { v: self.v.add(&o.v), d: self.d.add(&o.d) }
    }
    fn sub(&self, o: &Self) -> Self {
        Self { v: self.v.sub(&o.v), d: self.d.sub(&o.d) }
    }
    fn mul(&self, o: &Self) -> Self {
        Self { v: self.v.mul(&o.v), d: self.d.mul(&o.v).add(&self.v.mul(&o.d)) }
    }
    fn div(&self, o: &Self) -> Result<Self> {
        let q = self.v.div(&o.v)?;
        let d = self.d.sub(&q.mul(&o.d)).div(&o.v)?;
        Ok(Self { v: q, d })
    }
    fn neg(&self) -> Self {
        Self { v: self.v.neg(), d: self.d.neg() }
    }
    fn scale(&self, c: f64) -> Self {
        Self { v: self.v.scale(c), d: self.d.scale(c) }
    }
    fn add_f(&self, c: f64) -> Self {
        Self { v: self.v.add_f(c), d: self.d.clone() }
    }
    fn sin(&self) -> Self {
        Self { v: self.v.sin(), d: self.d.mul(&self.v.cos()) }
    }
    fn cos(&self) -> Self {
        Self { v: self.v.cos(), d: self.d.mul(&self.v.sin()).neg() }
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        Self { d: self.d.mul(&e), v: e }
    }
    fn powf(&self, p: f64) -> Result<Self> {
        if let Some(k) = is_integer_power(p) {
            return Ok(Num::powi(self, k));
        }
        let v = self.v.powf(p)?;
        let dv = self.v.powf(p - 1.0)?.scale(p);
        Ok(Self { v, d: self.d.mul(&dv) })
    }
    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d.is_finite()
    }
}

/// Solves the 2×2 system `m x = b` by Cramer's rule, rejecting
/// near-singular matrices by the primal value of the determinant.
pub fn solve2<T: Num>(m: [[&T; 2]; 2], b: [&T; 2], min_det: f64) -> Result<[T; 2]> {
    let det = m[0][0].mul(m[1][1]).sub(&m[0][1].mul(m[1][0]));
    if det.value().abs() < min_det || !det.is_finite() {
        return Err(Error::SingularJacobian(det.value()));
    }
    let x0 = b[0].mul(m[1][1]).sub(&m[0][1].mul(b[1])).div(&det)?;
    let x1 = m[0][0].mul(b[1]).sub(&b[0].mul(m[1][0])).div(&det)?;
    Ok([x0, x1])
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("quadrature cache").get(&n) {
        return r.clone();
    }
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    cache.lock().expect("quadrature cache").insert(n, (xs.clone(), ws.clone()));
    (xs, ws)
}
