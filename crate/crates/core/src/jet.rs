//! Fourier–Taylor series: truncated power series in `s` whose coefficients
//! are periodic functions of `theta`, sampled on a common grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::model::Model;
use crate::num::{Num, Taylor};
use crate::periodic::{Angle, PeriodicFn, PlaneLoop, TorusLift};

/// Scalar jet with periodic coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalarFT {
    pub coeffs: Vec<PeriodicFn>,
}

impl ScalarFT {
    pub fn new(coeffs: Vec<PeriodicFn>) -> Result<Self> {
        check_same_grid(coeffs.iter().map(|c| c.n()))?;
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize, order: usize) -> Result<Self> {
        Ok(Self { coeffs: vec![PeriodicFn::zeros(n)?; order] })
    }

    /// Constant-in-`s` jet.
    pub fn constant(f: PeriodicFn, order: usize) -> Result<Self> {
        let mut coeffs = vec![PeriodicFn::zeros(f.n())?; order];
        coeffs[0] = f;
        Ok(Self { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n(&self) -> usize {
        self.coeffs[0].n()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.coeffs.iter().map(|c| c.values().to_vec()).collect()
    }
}

fn check_same_grid(mut sizes: impl Iterator<Item = usize>) -> Result<()> {
    if let Some(first) = sizes.next() {
        for n in sizes {
            if n != first {
                return Err(Error::GridMismatch(first, n));
            }
        }
    }
    Ok(())
}

/// Cauchy product in `s`, pointwise in `theta`, truncated at the common order.
pub fn ft_mul(a: &ScalarFT, b: &ScalarFT) -> Result<ScalarFT> {
    if a.order() != b.order() {
        return Err(Error::OrderMismatch(a.order(), b.order()));
    }
    if a.n() != b.n() {
        return Err(Error::GridMismatch(a.n(), b.n()));
    }
    let n = a.n();
    let order = a.order();
    let mut out = Vec::with_capacity(order);
    for j in 0..order {
        let mut acc = vec![0.0; n];
        for i in 0..=j {
            for (m, v) in acc.iter_mut().enumerate() {
                *v += a.coeffs[i].values()[m] * b.coeffs[j - i].values()[m];
            }
        }
        out.push(PeriodicFn::new(acc)?);
    }
    Ok(ScalarFT { coeffs: out })
}

/// Jet of a planar map: `coeffs[j]` multiplies `s^j`. Order zero may carry
/// a circle lift in its first component; higher orders are periodic.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FTSeries {
    pub coeffs: Vec<PlaneLoop>,
}

impl FTSeries {
    pub fn new(coeffs: Vec<PlaneLoop>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("a jet needs at least one coefficient".into()));
        }
        check_same_grid(coeffs.iter().map(|c| c.n()))?;
        if coeffs[1..].iter().any(|c| c.first.is_lift()) {
            return Err(Error::Config("only the order-zero coefficient may be a circle lift".into()));
        }
        Ok(Self { coeffs })
    }

    /// `W(theta, s) = (theta, s)` truncated at `order`.
    pub fn identity(n: usize, order: usize) -> Result<Self> {
        let mut coeffs = vec![PlaneLoop::identity(n)?];
        for j in 1..order {
            let second = if j == 1 { PeriodicFn::constant(n, 1.0)? } else { PeriodicFn::zeros(n)? };
            coeffs.push(PlaneLoop::periodic(PeriodicFn::zeros(n)?, second)?);
        }
        Ok(Self { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n(&self) -> usize {
        self.coeffs[0].n()
    }

    /// Full node values of component `comp` (0 or 1) of order `j`.
    pub fn node_values(&self, comp: usize, j: usize) -> Vec<f64> {
        let c = &self.coeffs[j];
        if comp == 0 {
            c.first.values()
        } else {
            c.second.values().to_vec()
        }
    }

    /// Per-node series of both components.
    pub fn node_series(&self) -> Vec<[Taylor; 2]> {
        let rows: [Vec<Vec<f64>>; 2] = [
            (0..self.order()).map(|j| self.node_values(0, j)).collect(),
            (0..self.order()).map(|j| self.node_values(1, j)).collect(),
        ];
        (0..self.n()).map(|m| [series_at(&rows[0], m), series_at(&rows[1], m)]).collect()
    }

    pub fn eval(&self, theta: f64, s: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        let mut p = 1.0;
        for c in &self.coeffs {
            let v = c.eval(theta);
            out[0] += v[0] * p;
            out[1] += v[1] * p;
            p *= s;
        }
        out
    }

    pub fn truncate(&self, order: usize) -> FTSeries {
        FTSeries { coeffs: self.coeffs[..order.min(self.order())].to_vec() }
    }

    pub fn resample(&self, n: usize) -> Result<FTSeries> {
        Ok(FTSeries { coeffs: self.coeffs.iter().map(|c| c.resample(n)).collect::<Result<_>>()? })
    }

    /// Copy with coefficient `j` replaced (grown with zeros if needed).
    pub fn with_coeff(&self, j: usize, c: PlaneLoop) -> Result<FTSeries> {
        let mut coeffs = self.coeffs.clone();
        while coeffs.len() <= j {
            coeffs.push(PlaneLoop::zeros(self.n())?);
        }
        coeffs[j] = c;
        FTSeries::new(coeffs)
    }
}

pub(crate) fn series_at(rows: &[Vec<f64>], m: usize) -> Taylor {
    Taylor { c: rows.iter().map(|r| r[m]).collect() }
}

fn rows_from_series(series: &[Taylor], order: usize) -> Vec<Vec<f64>> {
    (0..order).map(|j| series.iter().map(|t| t.c[j]).collect()).collect()
}

fn periodic_rows(rows: Vec<Vec<f64>>) -> Result<Vec<PeriodicFn>> {
    rows.into_iter().map(PeriodicFn::new).collect()
}

/// Evaluates `e` node by node on jets. Variables are bound by name from `env`;
/// a declared `eps` not present in `env` is bound to the constant `eps`.
pub fn expr_eval_jet(e: &Expr, env: &[(&str, &ScalarFT)], eps: f64) -> Result<ScalarFT> {
    let first = env.first().ok_or_else(|| Error::Unbound("empty environment".into()))?.1;
    let (n, order) = (first.n(), first.order());
    let mut bound: Vec<Vec<Vec<f64>>> = Vec::with_capacity(e.vars().len());
    for name in e.vars() {
        match env.iter().find(|(k, _)| k == name) {
            Some((_, jet)) => {
                if jet.n() != n {
                    return Err(Error::GridMismatch(n, jet.n()));
                }
                if jet.order() != order {
                    return Err(Error::OrderMismatch(order, jet.order()));
                }
                bound.push(jet.rows());
            }
            None if name == "eps" => {
                let mut rows = vec![vec![0.0; n]; order];
                rows[0] = vec![eps; n];
                bound.push(rows);
            }
            None => return Err(Error::Unbound(name.clone())),
        }
    }
    let like = Taylor::constant(order, 0.0);
    let mut out = Vec::with_capacity(n);
    for m in 0..n {
        let args: Vec<Taylor> = bound.iter().map(|rows| series_at(rows, m)).collect();
        out.push(e.eval(&args, &like)?);
    }
    Ok(ScalarFT { coeffs: periodic_rows(rows_from_series(&out, order))? })
}

/// Jet of `W(theta + delta(theta, s), s sigma(theta, s))` where
/// `delta = -omega rho` and `sigma = exp(-lambda rho)`, for the given jet of `rho`.
pub fn delayed_composition(w: &FTSeries, rho: &ScalarFT, omega: f64, lambda: f64) -> Result<FTSeries> {
    let n = w.n();
    let order = w.order();
    if rho.n() != n {
        return Err(Error::GridMismatch(n, rho.n()));
    }
    if rho.order() != order {
        return Err(Error::OrderMismatch(order, rho.order()));
    }
    let delta0 = rho.coeffs[0].scale(-omega);
    let rho_rows = rho.rows();

    // (d/dtheta)^m W^j evaluated at theta + delta0(theta), for m + j < order
    let mut shifted: Vec<Vec<[Vec<f64>; 2]>> = Vec::with_capacity(order);
    for (j, c) in w.coeffs.iter().enumerate() {
        let mut per_m = Vec::with_capacity(order - j);
        let mut d1 = c.first.periodic().clone();
        let mut d2 = c.second.clone();
        for m in 0..order - j {
            let first = if m == 0 {
                c.first.compose_shift(&delta0).values()
            } else {
                let mut v = d1.compose_shift(&delta0).values().to_vec();
                if m == 1 && c.first.is_lift() {
                    v.iter_mut().for_each(|x| *x += 1.0);
                }
                v
            };
            let second = d2.compose_shift(&delta0).values().to_vec();
            per_m.push([first, second]);
            d1 = d1.differentiate();
            d2 = d2.differentiate();
        }
        shifted.push(per_m);
    }

    let mut series: [Vec<Taylor>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut factorial = vec![1.0; order.max(1)];
    for m in 1..order {
        factorial[m] = factorial[m - 1] * m as f64;
    }
    for node in 0..n {
        let r = series_at(&rho_rows, node);
        let mut dplus = r.scale(-omega);
        dplus.c[0] = 0.0;
        let ssig = {
            let sigma = r.scale(-lambda).exp();
            Taylor::variable(order, 0.0).mul(&sigma)
        };
        // powers of s*sigma and of delta+
        let mut sp = vec![Taylor::constant(order, 1.0)];
        let mut dp = vec![Taylor::constant(order, 1.0)];
        for k in 1..order {
            sp.push(sp[k - 1].mul(&ssig));
            dp.push(dp[k - 1].mul(&dplus));
        }
        for comp in 0..2 {
            let mut acc = Taylor::constant(order, 0.0);
            for m in 0..order {
                let mut inner = Taylor::constant(order, 0.0);
                for j in 0..order - m {
                    let c = shifted[j][m][comp][node];
                    if c != 0.0 {
                        inner = inner.add(&sp[j].scale(c));
                    }
                }
                acc = acc.add(&dp[m].mul(&inner).scale(1.0 / factorial[m]));
            }
            series[comp].push(acc);
        }
    }

    let rows1 = rows_from_series(&series[0], order);
    let rows2 = rows_from_series(&series[1], order);
    let lift = w.coeffs[0].first.is_lift();
    let mut coeffs = Vec::with_capacity(order);
    for (j, (r1, r2)) in rows1.into_iter().zip(rows2).enumerate() {
        let first = if j == 0 && lift {
            let p: Vec<f64> = r1.iter().enumerate().map(|(m, v)| v - m as f64 / n as f64).collect();
            Angle::Lift(TorusLift { periodic: PeriodicFn::new(p)? })
        } else {
            Angle::Periodic(PeriodicFn::new(r1)?)
        };
        coeffs.push(PlaneLoop::new(first, PeriodicFn::new(r2)?)?);
    }
    Ok(FTSeries { coeffs })
}

/// Jet of the extended delay `rho(W) phi(W_2)`.
pub fn rho_jet(model: &Model, w: &FTSeries, assume_interior: bool) -> Result<ScalarFT> {
    let order = w.order();
    let mut out = Vec::with_capacity(w.n());
    for [u1, u2] in w.node_series() {
        let r = model.rho(&u1, &u2)?;
        let r = if assume_interior { r } else { r.mul(&model.cutoff.phi_num(&u2)?) };
        out.push(r);
    }
    Ok(ScalarFT { coeffs: periodic_rows(rows_from_series(&out, order))? })
}

/// Jet of the forcing `eps Y_bar(W, W~, eps)`, coefficient `i` multiplying `s^i`.
pub fn rhs_jet(model: &Model, w: &FTSeries, omega: f64, lambda: f64, assume_interior: bool) -> Result<FTSeries> {
    let n = w.n();
    let order = w.order();
    let eps = model.eps;
    if eps == 0.0 {
        return Ok(FTSeries { coeffs: vec![PlaneLoop::zeros(n)?; order] });
    }
    let rho = rho_jet(model, w, assume_interior)?;
    let delayed = delayed_composition(w, &rho, omega, lambda)?;
    let us = w.node_series();
    let vs = delayed.node_series();
    let mut out: [Vec<Taylor>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (u, v) in us.iter().zip(&vs) {
        let y = if assume_interior { model.y(u, v, eps)? } else { model.y_bar(u, v, eps)? };
        out[0].push(y[0].scale(eps));
        out[1].push(y[1].scale(eps));
    }
    let r1 = periodic_rows(rows_from_series(&out[0], order))?;
    let r2 = periodic_rows(rows_from_series(&out[1], order))?;
    let coeffs = r1
        .into_iter()
        .zip(r2)
        .map(|(a, b)| PlaneLoop::periodic(a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(FTSeries { coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Cutoff;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn const_jet(n: usize, c: &[f64]) -> ScalarFT {
        ScalarFT { coeffs: c.iter().map(|&v| PeriodicFn::constant(n, v).unwrap()).collect() }
    }

    fn coeff_consts(j: &ScalarFT) -> Vec<f64> {
        j.coeffs.iter().map(|c| c.values()[0]).collect()
    }

    #[test]
    fn products() {
        let a = const_jet(8, &[1.0, 1.0, 0.0]);
        let b = const_jet(8, &[1.0, -1.0, 0.0]);
        assert_eq!(coeff_consts(&ft_mul(&a, &b).unwrap()), vec![1.0, 0.0, -1.0]);
        let cos = PeriodicFn::sample(16, |t| (TWO_PI * t).cos()).unwrap();
        let a = ScalarFT::constant(cos.clone(), 3).unwrap();
        let b = const_jet(16, &[0.0, 1.0, 0.0]);
        let p = ft_mul(&a, &b).unwrap();
        assert_eq!(p.coeffs[0].sup_norm(), 0.0);
        assert_eq!(p.coeffs[1].values(), cos.values());
        assert_eq!(p.coeffs[2].sup_norm(), 0.0);
        let e = const_jet(8, &[1.0, 1.0, 0.5, 1.0 / 6.0]);
        let sq = coeff_consts(&ft_mul(&e, &e).unwrap());
        for (g, w) in sq.iter().zip([1.0, 2.0, 2.0, 4.0 / 3.0]) {
            assert!((g - w).abs() < 1e-13);
        }
        assert!(ft_mul(&const_jet(8, &[1.0]), &const_jet(16, &[1.0])).is_err());
    }

    #[test]
    fn expression_jets() {
        let u = const_jet(8, &[1.0, 1.0, 0.0]);
        let e = Expr::parse("u*u", &["u"]).unwrap();
        assert_eq!(coeff_consts(&expr_eval_jet(&e, &[("u", &u)], 0.0).unwrap()), vec![1.0, 2.0, 1.0]);
        let s = const_jet(8, &[0.0, 1.0, 0.0, 0.0]);
        let e = Expr::parse("sin(u)", &["u"]).unwrap();
        let got = coeff_consts(&expr_eval_jet(&e, &[("u", &s)], 0.0).unwrap());
        for (g, w) in got.iter().zip([0.0, 1.0, 0.0, -1.0 / 6.0]) {
            assert!((g - w).abs() < 1e-15);
        }
        let cos = PeriodicFn::sample(32, |t| (TWO_PI * t).cos()).unwrap();
        let u = ScalarFT::constant(cos, 3).unwrap();
        let e = Expr::parse("exp(u)", &["u"]).unwrap();
        let r = expr_eval_jet(&e, &[("u", &u)], 0.0).unwrap();
        for m in 0..32 {
            let t = m as f64 / 32.0;
            assert_abs_diff_eq!(r.coeffs[0].values()[m], (TWO_PI * t).cos().exp(), epsilon = 1e-12);
        }
        assert_eq!(r.coeffs[1].sup_norm(), 0.0);
        assert_eq!(r.coeffs[2].sup_norm(), 0.0);
        let e = Expr::parse("u*v", &["u", "v"]).unwrap();
        assert!(matches!(expr_eval_jet(&e, &[("u", &u)], 0.0), Err(Error::Unbound(_))));
        let e = Expr::parse("1/u", &["u"]).unwrap();
        let z = const_jet(8, &[1e-11, 1.0]);
        assert!(matches!(expr_eval_jet(&e, &[("u", &z)], 0.0), Err(Error::DivisionByZero)));
    }

    #[test]
    fn undelayed_composition_is_identity() {
        let w = FTSeries::identity(16, 3).unwrap();
        let rho = ScalarFT::zeros(16, 3).unwrap();
        let wt = delayed_composition(&w, &rho, 1.3, -2.0).unwrap();
        for (a, b) in w.coeffs.iter().zip(&wt.coeffs) {
            assert!(crate::periodic::c0_distance(a, b).unwrap() < 1e-15);
        }
    }

    #[test]
    fn constant_delay_on_identity() {
        let (omega, lambda, r0) = (1.1, -2.0, 0.2);
        let w = FTSeries::identity(16, 2).unwrap();
        let rho = const_jet(16, &[r0, 0.0]);
        let wt = delayed_composition(&w, &rho, omega, lambda).unwrap();
        for m in 0..16 {
            let t = m as f64 / 16.0;
            assert_abs_diff_eq!(wt.node_values(0, 0)[m], t - omega * r0, epsilon = 1e-14);
            assert_abs_diff_eq!(wt.node_values(1, 0)[m], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(wt.node_values(0, 1)[m], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(wt.node_values(1, 1)[m], (-lambda * r0).exp(), epsilon = 1e-14);
        }
    }

    /// Generic band-limited jet with a lift at order zero.
    fn sample_jet(n: usize) -> FTSeries {
        let p = |a: f64, k: f64, ph: f64| PeriodicFn::sample(n, move |t| a * (TWO_PI * k * t + ph).sin()).unwrap();
        FTSeries::new(vec![
            PlaneLoop::new(Angle::Lift(TorusLift { periodic: p(0.02, 1.0, 0.3) }), p(0.01, 2.0, 0.1)).unwrap(),
            PlaneLoop::periodic(p(0.05, 1.0, 0.7), p(0.03, 1.0, 0.2).add_constant(1.0)).unwrap(),
            PlaneLoop::periodic(p(0.04, 2.0, 0.5), p(0.02, 3.0, 0.9)).unwrap(),
        ])
        .unwrap()
    }

    fn rho_expr() -> Expr {
        Expr::parse("0.1*(1 + 0.5*cos(2*pi*th)^2) + 0.05*s", &["th", "s"]).unwrap()
    }

    /// W~ evaluated pointwise at (theta, s).
    fn pointwise_delayed(w: &FTSeries, omega: f64, lambda: f64, theta: f64, s: f64) -> [f64; 2] {
        let e = rho_expr();
        let x = w.eval(theta, s);
        let r = e.eval(&[x[0], x[1]], &0.0).unwrap();
        w.eval(theta - omega * r, s * (-lambda * r).exp())
    }

    #[test]
    fn delayed_composition_matches_finite_differences() {
        let (omega, lambda) = (1.05, -2.1);
        let w = sample_jet(32);
        let rho = {
            let e = rho_expr();
            let mut out = Vec::new();
            for [u1, u2] in w.node_series() {
                out.push(e.eval(&[u1, u2], &Taylor::constant(3, 0.0)).unwrap());
            }
            ScalarFT { coeffs: periodic_rows(rows_from_series(&out, 3)).unwrap() }
        };
        let wt = delayed_composition(&w, &rho, omega, lambda).unwrap();
        let h = 1e-3;
        for m in 0..32 {
            let t = m as f64 / 32.0;
            let f = |s: f64| pointwise_delayed(&w, omega, lambda, t, s);
            let (f0, p1, m1, p2, m2) = (f(0.0), f(h), f(-h), f(2.0 * h), f(-2.0 * h));
            for c in 0..2 {
                let d1 = (8.0 * (p1[c] - m1[c]) - (p2[c] - m2[c])) / (12.0 * h);
                let d2 = (-(p2[c] + m2[c]) + 16.0 * (p1[c] + m1[c]) - 30.0 * f0[c]) / (12.0 * h * h);
                assert_abs_diff_eq!(wt.node_values(c, 0)[m], f0[c], epsilon = 1e-12);
                assert!((wt.node_values(c, 1)[m] - d1).abs() <= 1e-6);
                assert!((wt.node_values(c, 2)[m] - d2 / 2.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_order_consistency_with_compose_shift() {
        let (omega, lambda) = (0.9, -1.7);
        let w = sample_jet(32);
        let rho = ScalarFT::new(vec![
            PeriodicFn::sample(32, |t| 0.2 + 0.05 * (TWO_PI * t).cos()).unwrap(),
            PeriodicFn::sample(32, |t| 0.03 * (TWO_PI * t).sin()).unwrap(),
            PeriodicFn::zeros(32).unwrap(),
        ])
        .unwrap();
        let wt = delayed_composition(&w, &rho, omega, lambda).unwrap();
        let direct = w.coeffs[0].compose_shift(&rho.coeffs[0].scale(-omega));
        assert!(crate::periodic::c0_distance(&wt.coeffs[0], &direct).unwrap() < 1e-11);
    }

    #[test]
    fn truncation_consistency() {
        let model = Model::coords(1.0, -2.0, 0.01, 0.5, Cutoff::default(),
            ["v2*u2 + sin(v1)*u2^2", "cos(2*pi*u1)*v2^2 + exp(0.1*v2)"], "0.1*(1 + 0.2*cos(2*pi*th)) + 0.02*s").unwrap();
        let w = sample_jet(32);
        let full = rhs_jet(&model, &w, 1.0, -2.0, true).unwrap();
        let short = rhs_jet(&model, &w.truncate(2), 1.0, -2.0, true).unwrap();
        for j in 0..2 {
            assert_eq!(full.coeffs[j].second.values(), short.coeffs[j].second.values());
            assert_eq!(full.coeffs[j].first.values(), short.coeffs[j].first.values());
        }
    }

    #[test]
    fn forcing_examples() {
        let w = FTSeries::identity(16, 3).unwrap();
        let null = Model::coords(1.0, -2.0, 0.0, 0.0, Cutoff::default(), ["1", "2"], "0").unwrap();
        assert!(rhs_jet(&null, &w, 1.0, -2.0, true).unwrap().coeffs.iter().all(|c| c.second.sup_norm() == 0.0));

        let eps = 0.01;
        let constant = Model::coords(1.0, -2.0, eps, 0.3, Cutoff::default(), ["1.5", "-0.5"], "0.3").unwrap();
        let s = rhs_jet(&constant, &w, 1.0, -2.0, true).unwrap();
        assert!(s.coeffs[0].first.values().iter().all(|v| (v - 1.5 * eps).abs() < 1e-16));
        assert!(s.coeffs[0].second.values().iter().all(|v| (v + 0.5 * eps).abs() < 1e-16));
        assert!(s.coeffs[1..].iter().all(|c| c.first.periodic().sup_norm() == 0.0 && c.second.sup_norm() == 0.0));

        let lin = Model::coords(1.0, -2.0, eps, 0.0, Cutoff::default(), ["v2", "0"], "0").unwrap();
        let s = rhs_jet(&lin, &w, 1.0, -2.0, true).unwrap();
        assert!(s.coeffs[1].first.values().iter().all(|v| (v - eps).abs() < 1e-16));
        assert_eq!(s.coeffs[0].first.periodic().sup_norm(), 0.0);
        assert_eq!(s.coeffs[2].first.periodic().sup_norm(), 0.0);
    }

    #[test]
    fn s_constant_jets_reduce_to_pointwise() {
        let e = Expr::parse("sin(u)*exp(v) - u^3/(2 + cos(v))", &["u", "v"]).unwrap();
        let u = ScalarFT::constant(PeriodicFn::sample(16, |t| (TWO_PI * t).sin()).unwrap(), 4).unwrap();
        let v = ScalarFT::constant(PeriodicFn::sample(16, |t| 0.5 * (TWO_PI * t).cos()).unwrap(), 4).unwrap();
        let r = expr_eval_jet(&e, &[("u", &u), ("v", &v)], 0.0).unwrap();
        for m in 0..16 {
            let (a, b) = (u.coeffs[0].values()[m], v.coeffs[0].values()[m]);
            let direct = e.eval(&[a, b], &0.0).unwrap();
            assert_eq!(r.coeffs[0].values()[m], direct);
        }
        assert!(r.coeffs[1..].iter().all(|c| c.sup_norm() == 0.0));
    }
}
