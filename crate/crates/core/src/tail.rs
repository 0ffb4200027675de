//! The order-`N` remainder `W^>(theta, s) = s^N V(theta, s)` on the cut-off
//! domain, solved by quadrature along the characteristics
//! `(theta + omega t, s e^{lambda t})` of the linear flow.
//!
//! `V` is stored on a Fourier grid in `theta` times piecewise
//! Chebyshev–Lobatto panels in `s`. Panel breaks sit at the cut-off edges so
//! that the analytic interior is never interpolated across the steep
//! transition of the cut-off.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{QuadConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::jet::{rhs_jet, FTSeries};
use crate::model::Model;
use crate::num::gauss_legendre;
use crate::periodic::{phases, PeriodicFn, PlaneLoop};
use crate::solver::{interior_regime, SolveReport};

const MAX_DEPTH: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFn {
    #[serde(rename = "N")]
    pub order: usize,
    #[serde(rename = "S_max")]
    pub s_max: f64,
    pub n_theta: usize,
    /// Nodes per panel.
    pub n_cheb: usize,
    /// Panel edges, increasing, from `-S_max` to `S_max`.
    pub breaks: Vec<f64>,
    /// Per component, row-major `[theta][node]`.
    #[serde(rename = "V")]
    pub v: [Vec<f64>; 2],
}

/// Chebyshev–Lobatto nodes on `[-1, 1]`, increasing.
pub fn lobatto(n: usize) -> Vec<f64> {
    (0..n).map(|l| -(std::f64::consts::PI * l as f64 / (n - 1) as f64).cos()).collect()
}

fn bary_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|l| {
            let w = if l % 2 == 0 { 1.0 } else { -1.0 };
            if l == 0 || l == n - 1 {
                0.5 * w
            } else {
                w
            }
        })
        .collect()
}

/// Differentiation matrix on arbitrary distinct nodes with barycentric weights `w`.
fn diff_matrix(xs: &[f64], w: &[f64]) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                d[i][j] = (w[j] / w[i]) / (xs[i] - xs[j]);
                diag -= d[i][j];
            }
        }
        d[i][i] = diag;
    }
    d
}

impl TailFn {
    pub fn zeros(order: usize, s_max: f64, breaks: Vec<f64>, n_theta: usize, n_cheb: usize) -> Result<Self> {
        let t = Self { order, s_max, n_theta, n_cheb, breaks, v: [Vec::new(), Vec::new()] };
        let size = n_theta * t.n_nodes();
        let t = Self { v: [vec![0.0; size], vec![0.0; size]], ..t };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        crate::periodic::check_grid(self.n_theta)?;
        let ok_breaks = self.breaks.len() >= 2
            && self.breaks.windows(2).all(|w| w[1] > w[0])
            && self.breaks[0] == -self.s_max
            && *self.breaks.last().unwrap() == self.s_max;
        if !ok_breaks || self.n_cheb < 4 {
            return Err(Error::Config("tail panels must increase from -S_max to S_max with at least 4 nodes each".into()));
        }
        let size = self.n_theta * self.n_nodes();
        if self.v.iter().any(|c| c.len() != size) {
            return Err(Error::GridMismatch(size, self.v[0].len()));
        }
        if let Some(i) = self.v.iter().flatten().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    pub fn n_panels(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.n_panels() * self.n_cheb
    }

    pub fn panel_nodes(&self, p: usize) -> Vec<f64> {
        let (a, b) = (self.breaks[p], self.breaks[p + 1]);
        lobatto(self.n_cheb).into_iter().map(|x| 0.5 * (a + b) + 0.5 * (b - a) * x).collect()
    }

    /// `s` of every stored node, panel by panel.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_panels()).flat_map(|p| self.panel_nodes(p)).collect()
    }

    pub fn panel_of(&self, s: f64) -> Result<usize> {
        if !(s.abs() <= self.s_max) {
            return Err(Error::TailDomain(format!("|s| = {} exceeds S_max = {}", s.abs(), self.s_max)));
        }
        Ok(self.breaks[1..].iter().position(|&b| s <= b).unwrap_or(self.n_panels() - 1))
    }

    /// Weighted norm: `sup |V|` over the stored nodes.
    pub fn weighted_norm(&self) -> WeightedNorm {
        WeightedNorm { value: self.v.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())) }
    }

    pub fn node_value(&self, c: usize, i: usize, node: usize) -> f64 {
        self.v[c][i * self.n_nodes() + node]
    }

    /// Distance `sup |V - V'|`.
    pub fn distance(&self, other: &TailFn) -> f64 {
        self.v.iter().flatten().zip(other.v.iter().flatten()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `||W^>||_{0,N} = sup |W^>| |s|^{-N}` at the nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorm {
    pub value: f64,
}

/// Half-width of the innermost panel: delayed arguments from it stay where `phi = 1`.
fn inner_half_width(model: &Model) -> f64 {
    let lam_max = model.lambda0.abs() * 4.0 / 3.0;
    let a1 = model.cutoff.a1;
    (a1 * (-lam_max * model.h).exp()).min(0.5 * a1)
}

/// `S_max` and panel breaks for a model.
pub fn layout(model: &Model) -> (f64, Vec<f64>) {
    let lam_max = model.lambda0.abs() * 4.0 / 3.0;
    let (a1, a2) = (model.cutoff.a1, model.cutoff.a2);
    let s_max = a2 * (lam_max * model.h).exp() * 1.05;
    let b = inner_half_width(model);
    (s_max, vec![-s_max, -a2, -a1, -b, b, a1, a2, s_max])
}

/// Values of `cos 2 pi k theta` and `sin 2 pi k theta`, `k = 0..=n/2`, packed for dot products.
#[derive(Clone, Debug)]
pub struct Trig {
    n: usize,
    basis: Vec<f64>,
}

impl Trig {
    pub fn new(theta: f64, n: usize) -> Self {
        let mut ph = Vec::with_capacity(n / 2 + 1);
        phases(theta, n / 2, &mut ph);
        let mut basis = Vec::with_capacity(n + 2);
        basis.extend(ph.iter().map(|e| e.re));
        basis.extend(ph.iter().map(|e| e.im));
        Self { n, basis }
    }

    /// Basis of the `theta` derivative; the Nyquist mode carries none.
    pub fn derivative(&self) -> Self {
        let h = self.n / 2 + 1;
        let mut basis = vec![0.0; 2 * h];
        for k in 1..self.n / 2 {
            let w = 2.0 * std::f64::consts::PI * k as f64;
            basis[k] = -w * self.basis[h + k];
            basis[h + k] = w * self.basis[k];
        }
        Self { n: self.n, basis }
    }

    #[inline]
    pub fn eval(&self, packed: &[f64]) -> f64 {
        dot(packed, &self.basis)
    }
}

/// Real cosine/sine coefficients of a half spectrum, matching `Trig`.
fn pack(half: &[Complex64], n: usize) -> Vec<f64> {
    let h = n / 2 + 1;
    let mut out = vec![0.0; 2 * h];
    out[0] = half[0].re;
    out[h - 1] = half[n / 2].re;
    for k in 1..n / 2 {
        out[k] = 2.0 * half[k].re;
        out[h + k] = -2.0 * half[k].im;
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut i = 0;
    while i + 4 <= n {
        let x: &[f64; 4] = a[i..i + 4].try_into().expect("chunk of four");
        let y: &[f64; 4] = b[i..i + 4].try_into().expect("chunk of four");
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
        i += 4;
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    while i < n {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

type Weights = smallvec::SmallVec<[f64; 32]>;

/// Barycentric interpolation weights at `x`; exact at nodes.
fn interp_weights(xs: &[f64], w: &[f64], x: f64) -> Weights {
    if let Some(l) = xs.iter().position(|&xl| xl == x) {
        let mut out: Weights = smallvec::smallvec![0.0; xs.len()];
        out[l] = 1.0;
        return out;
    }
    let mut out: Weights = xs.iter().zip(w).map(|(xl, wl)| wl / (x - xl)).collect();
    let total: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

/// Node columns of `V` and `d_s V` packed for fast evaluation.
pub struct TailInterp {
    pub tail: TailFn,
    panel_x: Vec<Vec<f64>>,
    weights: Vec<f64>,
    packed: Vec<[Vec<f64>; 2]>,
    packed_ds: Vec<[Vec<f64>; 2]>,
}

fn column(tail: &TailFn, c: usize, node: usize) -> Vec<f64> {
    (0..tail.n_theta).map(|i| tail.node_value(c, i, node)).collect()
}

impl TailInterp {
    pub fn new(tail: &TailFn) -> Result<Self> {
        tail.check()?;
        let n = tail.n_theta;
        let nn = tail.n_nodes();
        let weights = bary_weights(tail.n_cheb);
        let panel_x: Vec<Vec<f64>> = (0..tail.n_panels()).map(|p| tail.panel_nodes(p)).collect();
        let mut packed = Vec::with_capacity(nn);
        for node in 0..nn {
            packed.push([
                pack(PeriodicFn::new(column(tail, 0, node))?.coeffs(), n),
                pack(PeriodicFn::new(column(tail, 1, node))?.coeffs(), n),
            ]);
        }
        let mut packed_ds = Vec::with_capacity(nn);
        for (p, xs) in panel_x.iter().enumerate() {
            for row in diff_matrix(xs, &weights) {
                let mut s = [vec![0.0; n + 2], vec![0.0; n + 2]];
                for (k, dk) in row.iter().enumerate() {
                    for c in 0..2 {
                        for (o, x) in s[c].iter_mut().zip(&packed[p * tail.n_cheb + k][c]) {
                            *o += x * dk;
                        }
                    }
                }
                packed_ds.push(s);
            }
        }
        Ok(Self { tail: tail.clone(), panel_x, weights, packed, packed_ds })
    }

    fn combine_in(&self, set: &[[Vec<f64>; 2]], trig: &Trig, p: usize, s: f64) -> [f64; 2] {
        let w = interp_weights(&self.panel_x[p], &self.weights, s);
        let mut out = [0.0; 2];
        for (l, wl) in w.iter().enumerate() {
            if *wl == 0.0 {
                continue;
            }
            let sp = &set[p * self.tail.n_cheb + l];
            out[0] += wl * trig.eval(&sp[0]);
            out[1] += wl * trig.eval(&sp[1]);
        }
        out
    }

    /// `V(theta, s)` given the basis at `theta`.
    pub fn value_trig(&self, trig: &Trig, s: f64) -> Result<[f64; 2]> {
        let p = self.tail.panel_of(s)?;
        Ok(self.combine_in(&self.packed, trig, p, s))
    }

    pub fn value(&self, theta: f64, s: f64) -> Result<[f64; 2]> {
        self.value_trig(&Trig::new(theta, self.tail.n_theta), s)
    }

    /// `(V, d_theta V, d_s V)` at a point.
    pub fn jet1(&self, theta: f64, s: f64) -> Result<[[f64; 2]; 3]> {
        self.jet1_in(self.tail.panel_of(s)?, theta, s)
    }

    /// As `jet1`, with the interpolant of panel `p` (which must contain `s`).
    pub fn jet1_in(&self, p: usize, theta: f64, s: f64) -> Result<[[f64; 2]; 3]> {
        self.tail.panel_of(s)?;
        let trig = Trig::new(theta, self.tail.n_theta);
        let v = self.combine_in(&self.packed, &trig, p, s);
        let dth = self.combine_in(&self.packed, &trig.derivative(), p, s);
        let ds = self.combine_in(&self.packed_ds, &trig, p, s);
        Ok([v, dth, ds])
    }
}

/// Jet coefficients packed for evaluation off the grid.
#[derive(Clone)]
pub struct JetEval {
    n: usize,
    lift: bool,
    packed: Vec<[Vec<f64>; 2]>,
}

impl JetEval {
    pub fn new(jet: &FTSeries) -> Self {
        let n = jet.n();
        let packed = jet.coeffs.iter().map(|c| [pack(c.first.periodic().coeffs(), n), pack(c.second.coeffs(), n)]).collect();
        Self { n, lift: jet.coeffs[0].first.is_lift(), packed }
    }

    pub fn trig(&self, theta: f64) -> Trig {
        Trig::new(theta, self.n)
    }

    pub fn order(&self) -> usize {
        self.packed.len()
    }

    /// Coefficient `j` at the angle of `trig`; lifts exclude `theta`.
    pub fn coeff(&self, j: usize, trig: &Trig) -> [f64; 2] {
        [trig.eval(&self.packed[j][0]), trig.eval(&self.packed[j][1])]
    }

    /// `sum_{lo <= j < hi} W^j(theta) s^(j - lo)`, with the lift's `theta` added at order 0.
    pub fn poly(&self, theta: f64, trig: &Trig, s: f64, lo: usize, hi: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        let mut p = 1.0;
        for j in lo..hi.min(self.order()) {
            let c = self.coeff(j, trig);
            out[0] += c[0] * p;
            out[1] += c[1] * p;
            p *= s;
        }
        if lo == 0 && self.lift {
            out[0] += theta;
        }
        out
    }

    /// `d/dtheta` and `d/ds` of `poly(.., 0, hi)`.
    pub fn poly_derivatives(&self, trig: &Trig, s: f64, hi: usize) -> [[f64; 2]; 2] {
        let dtrig = trig.derivative();
        let mut dth = [0.0; 2];
        let mut ds = [0.0; 2];
        let mut p = 1.0;
        for j in 0..hi.min(self.order()) {
            let d = self.coeff(j, &dtrig);
            dth[0] += d[0] * p;
            dth[1] += d[1] * p;
            p *= s;
        }
        if self.lift {
            dth[0] += 1.0;
        }
        let mut p = 1.0;
        for j in 1..hi.min(self.order()) {
            let c = self.coeff(j, trig);
            ds[0] += j as f64 * c[0] * p;
            ds[1] += j as f64 * c[1] * p;
            p *= s;
        }
        [dth, ds]
    }
}

/// Right-hand side of the tail equation.
pub trait TailSource: Sync {
    /// `eps Y^>(theta, s) phi(s)`.
    fn forcing(&self, theta: f64, s: f64) -> Result<[f64; 2]>;
    /// `forcing / s^N`, with its limit at `s = 0`.
    fn scaled_forcing(&self, theta: f64, s: f64) -> Result<[f64; 2]>;
}

/// The tail forcing of a model, for a given jet and current tail iterate.
pub struct ModelSource<'a> {
    model: &'a Model,
    omega: f64,
    lambda: f64,
    order: usize,
    jet: JetEval,
    /// `eps Y_bar` coefficients of orders `0..N`.
    poly: JetEval,
    tail: TailInterp,
    /// Scaled forcing at `s = 0`: the order-`N` coefficient with `W^N = V(., 0)`.
    zero: JetEval,
}

impl<'a> ModelSource<'a> {
    pub fn new(model: &'a Model, omega: f64, lambda: f64, jet: &FTSeries, tail: &TailFn, interior: bool) -> Result<Self> {
        let order = tail.order;
        if jet.order() < order {
            return Err(Error::OrderMismatch(order, jet.order()));
        }
        if jet.n() != tail.n_theta {
            return Err(Error::GridMismatch(jet.n(), tail.n_theta));
        }
        let base = jet.truncate(order);
        let poly = JetEval::new(&rhs_jet(model, &base, omega, lambda, interior)?);
        let interp = TailInterp::new(tail)?;
        let n = tail.n_theta;
        let v0: Vec<[f64; 2]> = (0..n).map(|i| interp.value(i as f64 / n as f64, 0.0)).collect::<Result<_>>()?;
        let mut coeffs = base.coeffs.clone();
        coeffs.push(PlaneLoop::periodic(
            PeriodicFn::new(v0.iter().map(|v| v[0]).collect())?,
            PeriodicFn::new(v0.iter().map(|v| v[1]).collect())?,
        )?);
        let r = rhs_jet(model, &FTSeries::new(coeffs)?, omega, lambda, interior)?;
        let zero = JetEval::new(&FTSeries::new(vec![r.coeffs[order].clone()])?);
        Ok(Self { model, omega, lambda, order, jet: JetEval::new(&base), poly, tail: interp, zero })
    }

    /// Full `W(theta, s)` = jet of orders `0..N` plus `s^N V`.
    pub fn w(&self, theta: f64, ph: &Trig, s: f64) -> Result<[f64; 2]> {
        let mut w = self.jet.poly(theta, ph, s, 0, self.order);
        let v = self.tail.value_trig(ph, s)?;
        let sn = s.powi(self.order as i32);
        w[0] += sn * v[0];
        w[1] += sn * v[1];
        Ok(w)
    }

    /// `eps Y_bar(W, W~)` at `(theta, s)`.
    pub fn full_forcing(&self, theta: f64, s: f64) -> Result<[f64; 2]> {
        self.full_forcing_at(theta, &self.jet.trig(theta), s)
    }

    fn full_forcing_at(&self, theta: f64, ph: &Trig, s: f64) -> Result<[f64; 2]> {
        let m = self.model;
        let eps = m.eps;
        let u = self.w(theta, ph, s)?;
        if eps == 0.0 || u[1].abs() >= m.cutoff.a2 {
            return Ok([0.0; 2]);
        }
        let rb = m.rho_bar(&u[0], &u[1])?;
        let (th2, s2) = (theta - self.omega * rb, s * (-self.lambda * rb).exp());
        if s2.abs() > self.tail.tail.s_max {
            return Err(Error::TailDomain(format!(
                "delayed argument s = {s2} beyond S_max = {} with non-zero cut-off weight",
                self.tail.tail.s_max
            )));
        }
        let ph2 = self.jet.trig(th2);
        let v = self.w(th2, &ph2, s2)?;
        let y = m.y_bar(&u, &v, eps)?;
        Ok([eps * y[0], eps * y[1]])
    }
}

impl TailSource for ModelSource<'_> {
    fn forcing(&self, theta: f64, s: f64) -> Result<[f64; 2]> {
        let phi = self.model.cutoff.phi(s);
        if phi == 0.0 || self.model.eps == 0.0 {
            return Ok([0.0; 2]);
        }
        let ph = self.jet.trig(theta);
        let y = self.full_forcing_at(theta, &ph, s)?;
        let p = self.poly.poly(theta, &ph, s, 0, self.order);
        Ok([(y[0] - p[0]) * phi, (y[1] - p[1]) * phi])
    }

    fn scaled_forcing(&self, theta: f64, s: f64) -> Result<[f64; 2]> {
        if s == 0.0 {
            if self.model.eps == 0.0 {
                return Ok([0.0; 2]);
            }
            return Ok(self.zero.coeff(0, &self.zero.trig(theta)));
        }
        let f = self.forcing(theta, s)?;
        let sn = s.powi(self.order as i32);
        Ok([f[0] / sn, f[1] / sn])
    }
}

/// Parameters of the characteristic flow shared by every node.
#[derive(Clone, Copy, Debug)]
pub struct Flow {
    pub omega: f64,
    pub lambda: f64,
    pub lambda0: f64,
    pub order: usize,
}

impl Flow {
    fn check(&self) -> Result<()> {
        if self.order < 2 || self.order as f64 * self.lambda - self.lambda0 >= 0.0 || self.lambda >= 0.0 {
            return Err(Error::Config("the tail needs N >= 2, lambda < 0 and N lambda < lambda0".into()));
        }
        Ok(())
    }

    /// Time after which the slower of the two decay factors is below `tail_tol`.
    pub fn t_max(&self, quad: &QuadConfig) -> f64 {
        quad.tail_tol.ln() / (self.order as f64 * self.lambda - self.lambda0)
    }
}

/// Scaled forcing sampled at every node of `layout`; shared panel edges are evaluated once.
pub fn sample_forcing(src: &dyn TailSource, layout: &TailFn) -> Result<TailFn> {
    let nodes = layout.nodes();
    let nn = nodes.len();
    let n = layout.n_theta;
    let vals: Vec<[f64; 2]> = (0..n * nn)
        .into_par_iter()
        .map(|k| {
            let (i, node) = (k / nn, k % nn);
            if node % layout.n_cheb == 0 && node > 0 {
                return Ok(None);
            }
            src.scaled_forcing(i as f64 / n as f64, nodes[node]).map(Some)
        })
        .collect::<Result<Vec<Option<[f64; 2]>>>>()?
        .into_iter()
        .scan([0.0; 2], |last, v| {
            if let Some(v) = v {
                *last = v;
            }
            Some(*last)
        })
        .collect();
    let mut out = layout.clone();
    out.v = [vals.iter().map(|v| v[0]).collect(), vals.iter().map(|v| v[1]).collect()];
    out.check()?;
    Ok(out)
}

/// Half spectra of the sampled forcing, node by node.
struct ForcingSpectra<'a> {
    grid: &'a TailFn,
    panel_x: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// `[node][component]`, `n/2 + 1` coefficients each.
    spec: Vec<[Vec<Complex64>; 2]>,
}

impl<'a> ForcingSpectra<'a> {
    fn new(grid: &'a TailFn) -> Result<Self> {
        let spec = (0..grid.n_nodes())
            .map(|node| {
                Ok([
                    PeriodicFn::new(column(grid, 0, node))?.coeffs().to_vec(),
                    PeriodicFn::new(column(grid, 1, node))?.coeffs().to_vec(),
                ])
            })
            .collect::<Result<_>>()?;
        let panel_x = (0..grid.n_panels()).map(|p| grid.panel_nodes(p)).collect();
        Ok(Self { grid, panel_x, weights: bary_weights(grid.n_cheb), spec })
    }
}

/// Transport of the interpolated forcing along the characteristics through one node `s`.
struct Transport<'a> {
    f: &'a ForcingSpectra<'a>,
    flow: Flow,
    s: f64,
    h: usize,
    gl: (Vec<f64>, Vec<f64>),
}

impl Transport<'_> {
    /// `-D(t) f_k(s e^{lambda t}) e^{2 pi i k omega t}`, both components, in panel `p`.
    fn integrand(&self, t: f64, p: usize, out: &mut [Complex64], ph: &mut Vec<Complex64>) {
        let Flow { omega, lambda, lambda0, order } = self.flow;
        let sigma = self.s * (lambda * t).exp();
        let w = interp_weights(&self.f.panel_x[p], &self.f.weights, sigma);
        let h = self.h;
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (l, wl) in w.iter().enumerate() {
            if *wl == 0.0 {
                continue;
            }
            let sp = &self.f.spec[p * self.f.grid.n_cheb + l];
            for c in 0..2 {
                for (o, x) in out[c * h..(c + 1) * h].iter_mut().zip(&sp[c]) {
                    *o += x * wl;
                }
            }
        }
        phases(omega * t, h - 1, ph);
        let nyq = h - 1;
        let d0 = -(order as f64 * lambda * t).exp();
        let d1 = d0 * (-lambda0 * t).exp();
        for (c, d) in [d0, d1].into_iter().enumerate() {
            let part = &mut out[c * h..(c + 1) * h];
            for k in 0..nyq {
                part[k] *= ph[k] * d;
            }
            // the shifted Nyquist mode keeps only its cosine part on the grid
            part[nyq] = Complex64::new(part[nyq].re * ph[nyq].re * d, 0.0);
        }
    }

    fn panel(&self, a: f64, b: f64, p: usize, scratch: &mut (Vec<Complex64>, Vec<Complex64>)) -> Vec<Complex64> {
        let (xs, ws) = &self.gl;
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let mut acc = vec![Complex64::new(0.0, 0.0); 2 * self.h];
        for (x, w) in xs.iter().zip(ws) {
            self.integrand(mid + half * x, p, &mut scratch.0, &mut scratch.1);
            for (o, v) in acc.iter_mut().zip(&scratch.0) {
                *o += v * (w * half);
            }
        }
        acc
    }

    /// Bound on the sup over `theta` of the difference of two coefficient vectors.
    fn sup_bound(&self, x: &[Complex64], y: &[Complex64]) -> f64 {
        let h = self.h;
        (0..2)
            .map(|c| {
                (0..h)
                    .map(|k| {
                        let m = if k == 0 || k == h - 1 { 1.0 } else { 2.0 };
                        m * (x[c * h + k] - y[c * h + k]).norm()
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    #[allow(clippy::too_many_arguments)]
    fn adapt(
        &self,
        a: f64,
        b: f64,
        p: usize,
        whole: Vec<Complex64>,
        tol: f64,
        depth: usize,
        scratch: &mut (Vec<Complex64>, Vec<Complex64>),
    ) -> (Vec<Complex64>, f64) {
        let m = 0.5 * (a + b);
        let (l, r) = (self.panel(a, m, p, scratch), self.panel(m, b, p, scratch));
        let split: Vec<Complex64> = l.iter().zip(&r).map(|(x, y)| x + y).collect();
        let est = self.sup_bound(&split, &whole);
        if est <= tol || depth >= MAX_DEPTH {
            return (split, est);
        }
        let (lv, le) = self.adapt(a, m, p, l, 0.5 * tol, depth + 1, scratch);
        let (rv, re) = self.adapt(m, b, p, r, 0.5 * tol, depth + 1, scratch);
        (lv.iter().zip(&rv).map(|(x, y)| x + y).collect(), le + re)
    }

    /// Coefficients of `V(., s)` and the accumulated refinement estimate.
    fn run(&self, quad: &QuadConfig) -> Result<(Vec<Complex64>, f64)> {
        let Flow { omega, lambda, lambda0, order } = self.flow;
        let grid = self.f.grid;
        let h = self.h;
        if self.s == 0.0 {
            // constant argument: the integral is explicit
            let p = grid.panel_of(0.0)?;
            let w = interp_weights(&self.f.panel_x[p], &self.f.weights, 0.0);
            let mut out = vec![Complex64::new(0.0, 0.0); 2 * h];
            for c in 0..2 {
                for k in 0..h {
                    let fk: Complex64 = w.iter().enumerate().map(|(l, wl)| self.f.spec[p * grid.n_cheb + l][c][k] * wl).sum();
                    let rate = order as f64 * lambda - if c == 1 { lambda0 } else { 0.0 };
                    let freq = if k == h - 1 { 0.0 } else { 2.0 * std::f64::consts::PI * k as f64 * omega };
                    out[c * h + k] = fk / Complex64::new(rate, freq);
                }
                out[c * h + h - 1].im = 0.0;
            }
            return Ok((out, 0.0));
        }
        let t_max = self.flow.t_max(quad);
        let t_start = 0.0;
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * h];
        let levels: Vec<f64> = grid.breaks.iter().filter(|b| **b > 0.0).cloned().collect();
        let mut cuts = vec![t_start];
        cuts.extend(crossings(self.s, lambda, &levels, t_start, t_max));
        cuts.push(t_max);
        let width = t_max / quad.panels as f64;
        let mut base = Vec::new();
        for w in cuts.windows(2) {
            let p = grid.panel_of(self.s * (lambda * 0.5 * (w[0] + w[1])).exp())?;
            let k = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
            for i in 0..k {
                let a = w[0] + (w[1] - w[0]) * i as f64 / k as f64;
                let b = w[0] + (w[1] - w[0]) * (i + 1) as f64 / k as f64;
                base.push((a, b, p));
            }
        }
        let mut scratch = (vec![Complex64::new(0.0, 0.0); 2 * h], Vec::with_capacity(h));
        let mut estimate = 0.0;
        let tol = 0.5 * quad.qtol / base.len() as f64;
        for &(a, b, p) in &base {
            let whole = self.panel(a, b, p, &mut scratch);
            let (v, e) = self.adapt(a, b, p, whole, tol, 0, &mut scratch);
            out.iter_mut().zip(&v).for_each(|(o, x)| *o += x);
            estimate += e;
        }
        if estimate > quad.qtol {
            return Err(Error::Quadrature { estimate, qtol: quad.qtol });
        }
        Ok((out, estimate))
    }
}

/// Times at which `|s| e^{lambda t}` crosses each of `levels`, inside `(t0, t1)`.
fn crossings(s: f64, lambda: f64, levels: &[f64], t0: f64, t1: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = levels
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| (s.abs() / c).ln() / lambda.abs())
        .filter(|&t| t > t0 && t < t1)
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("finite crossing times"));
    ts.dedup();
    ts
}

/// One application of the tail operator: the solution of the linear transport
/// equation whose source is the interpolated scaled forcing of `src`.
pub fn gamma_tail_apply(src: &dyn TailSource, layout: &TailFn, flow: Flow, quad: &QuadConfig) -> Result<TailFn> {
    flow.check()?;
    let sampled = sample_forcing(src, layout)?;
    transport(&sampled, flow, quad)
}

/// Transport of a sampled scaled forcing `f` to the new tail iterate.
pub fn transport(f: &TailFn, flow: Flow, quad: &QuadConfig) -> Result<TailFn> {
    flow.check()?;
    let spectra = ForcingSpectra::new(f)?;
    let n = f.n_theta;
    let h = n / 2 + 1;
    let nodes = f.nodes();
    let gl = gauss_legendre(quad.nodes_per_panel);
    let unique: Vec<usize> = (0..nodes.len()).filter(|&k| k % f.n_cheb != 0 || k == 0).collect();
    let cols: Vec<(usize, [PeriodicFn; 2])> = unique
        .par_iter()
        .map(|&node| {
            let tr = Transport { f: &spectra, flow, s: nodes[node], h, gl: gl.clone() };
            let (coef, _) = tr.run(quad)?;
            let mk = |c: usize| {
                let mut half = coef[c * h..(c + 1) * h].to_vec();
                half[0].im = 0.0;
                half[h - 1].im = 0.0;
                PeriodicFn::from_coeffs(n, half)
            };
            Ok((node, [mk(0)?, mk(1)?]))
        })
        .collect::<Result<_>>()?;
    let mut out = f.clone();
    let nn = nodes.len();
    for (idx, (node, col)) in cols.iter().enumerate() {
        let next = cols.get(idx + 1).map_or(nn, |c| c.0);
        for target in *node..next {
            for c in 0..2 {
                for i in 0..n {
                    out.v[c][i * nn + target] = col[c].values()[i];
                }
            }
        }
    }
    out.check()?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TailResidual {
    /// `||E^>||_{0,N}` over the whole doubled grid.
    pub weighted: f64,
    /// The same restricted to the innermost panel.
    pub interior: f64,
    pub interior_radius: f64,
}

/// Residual of the tail equation on a doubled grid, divided by `s^N`.
pub fn residual_tail_with(src: &dyn TailSource, tail: &TailFn, flow: Flow) -> Result<TailResidual> {
    let interp = TailInterp::new(tail)?;
    let n2 = 2 * tail.n_theta;
    let np = tail.n_panels();
    let mid = np / 2;
    let mut ss: Vec<(usize, f64)> = vec![(mid, 0.0)];
    for p in 0..np {
        let (a, b) = (tail.breaks[p], tail.breaks[p + 1]);
        ss.extend(lobatto(2 * tail.n_cheb).into_iter().map(|x| (p, 0.5 * (a + b) + 0.5 * (b - a) * x)));
    }
    let radius = tail.breaks[mid].abs().min(tail.breaks[mid + 1].abs());
    let nf = flow.order as f64;
    let pts: Vec<(f64, usize, f64)> = (0..n2).flat_map(|i| ss.iter().map(move |&(p, s)| (i as f64 / n2 as f64, p, s))).collect();
    let errs: Vec<(bool, f64)> = pts
        .par_iter()
        .map(|&(theta, p, s)| {
            let [v, dth, ds] = interp.jet1_in(p, theta, s)?;
            let f = src.scaled_forcing(theta, s)?;
            let e1 = flow.omega * dth[0] + flow.lambda * (nf * v[0] + s * ds[0]) - f[0];
            let e2 = flow.omega * dth[1] + flow.lambda * (nf * v[1] + s * ds[1]) - flow.lambda0 * v[1] - f[1];
            Ok((p == mid, e1.abs().max(e2.abs())))
        })
        .collect::<Result<_>>()?;
    let weighted = errs.iter().fold(0.0f64, |m, e| m.max(e.1));
    let interior = errs.iter().filter(|e| e.0).fold(0.0f64, |m, e| m.max(e.1));
    Ok(TailResidual { weighted, interior, interior_radius: radius })
}

#[derive(Clone, Debug)]
pub struct TailSolution {
    pub tail: TailFn,
    pub report: SolveReport,
    pub residual: TailResidual,
}

pub fn solve_tail(model: &Model, omega: f64, lambda: f64, jet: &FTSeries, cfg: &SolverConfig) -> Result<TailSolution> {
    let order = jet.order();
    let flow = Flow { omega, lambda, lambda0: model.lambda0, order };
    flow.check()?;
    let (s_max, breaks) = layout(model);
    let mut tail = TailFn::zeros(order, s_max, breaks, jet.n(), cfg.n_cheb.div_ceil(2).max(8))?;
    let mut report = SolveReport::new("tail");
    let interior = interior_regime(model, cfg, &jet.coeffs[0]);
    if model.eps == 0.0 {
        report.record(0.0);
        report.converged = true;
        report.residual = Some(0.0);
        let mid = tail.n_panels() / 2;
        let radius = tail.breaks[mid].abs().min(tail.breaks[mid + 1].abs());
        let residual = TailResidual { weighted: 0.0, interior: 0.0, interior_radius: radius };
        return Ok(TailSolution { tail, report, residual });
    }
    for _ in 0..cfg.max_iter {
        let src = ModelSource::new(model, omega, lambda, jet, &tail, interior)?;
        let next = gamma_tail_apply(&src, &tail, flow, &cfg.quad)?;
        let d = tail.distance(&next);
        report.record(d);
        tail = next;
        log::debug!("tail: iteration {} distance {d:e}", report.iterations);
        if d < cfg.tol {
            report.converged = true;
            break;
        }
        if report.diverging() {
            return Err(Error::Diverged { stage: "tail", iterations: report.iterations, distance: d, mu: report.mu_hat() });
        }
    }
    let residual = residual_tail(model, omega, lambda, jet, &tail, interior)?;
    report.residual = Some(residual.weighted);
    Ok(TailSolution { tail, report, residual })
}

pub fn residual_tail(model: &Model, omega: f64, lambda: f64, jet: &FTSeries, tail: &TailFn, interior: bool) -> Result<TailResidual> {
    let flow = Flow { omega, lambda, lambda0: model.lambda0, order: tail.order };
    let src = ModelSource::new(model, omega, lambda, jet, tail, interior)?;
    residual_tail_with(&src, tail, flow)
}

/// `W(theta, s)` = jet plus tail.
pub fn tail_eval(jet: &FTSeries, tail: &TailFn, theta: f64, s: f64) -> Result<[f64; 2]> {
    Parameterization::new(jet, tail)?.eval(theta, s)
}

/// Jet and tail prepared for repeated evaluation.
pub struct Parameterization {
    jet: JetEval,
    tail: TailInterp,
    order: usize,
}

impl Parameterization {
    pub fn new(jet: &FTSeries, tail: &TailFn) -> Result<Self> {
        if jet.n() != tail.n_theta {
            return Err(Error::GridMismatch(jet.n(), tail.n_theta));
        }
        Ok(Self { jet: JetEval::new(&jet.truncate(tail.order)), tail: TailInterp::new(tail)?, order: tail.order })
    }

    pub fn s_max(&self) -> f64 {
        self.tail.tail.s_max
    }

    pub fn eval(&self, theta: f64, s: f64) -> Result<[f64; 2]> {
        let ph = self.jet.trig(theta);
        let mut w = self.jet.poly(theta, &ph, s, 0, self.order);
        let v = self.tail.value_trig(&ph, s)?;
        let sn = s.powi(self.order as i32);
        w[0] += sn * v[0];
        w[1] += sn * v[1];
        Ok(w)
    }

    /// `W` and its partial derivatives `(d_theta W, d_s W)`.
    pub fn eval_d(&self, theta: f64, s: f64) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let ph = self.jet.trig(theta);
        let w = self.eval(theta, s)?;
        let [mut dth, mut ds] = self.jet.poly_derivatives(&ph, s, self.order);
        let [v, vth, vs] = self.tail.jet1(theta, s)?;
        let nf = self.order as f64;
        let sn = s.powi(self.order as i32);
        let sn1 = if self.order >= 1 { s.powi(self.order as i32 - 1) } else { 0.0 };
        for c in 0..2 {
            dth[c] += sn * vth[c];
            ds[c] += nf * sn1 * v[c] + sn * vs[c];
        }
        Ok((w, [dth, ds]))
    }
}
