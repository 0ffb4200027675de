//! Picard solvers for the jet of the parameterization: frequency and cycle
//! (order zero), exponent and normal bundle (order one), higher orders.

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::jet::{rhs_jet, FTSeries};
use crate::model::Model;
use crate::num::Dual;
use crate::periodic::{c0_distance, Angle, PeriodicFn, PlaneLoop, TorusLift};

/// Distances below this are treated as round-off when estimating contraction:
/// spectral derivatives of O(1) iterates carry errors near `n u 2 pi k`.
const NOISE_FLOOR: f64 = 1e-12;
/// Consecutive distance increases that count as divergence.
const DIVERGENCE_RUN: usize = 5;

/// Iteration log of one fixed-point stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub stage: String,
    pub iterations: usize,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub residual: Option<f64>,
}

impl SolveReport {
    pub fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), ..Self::default() }
    }

    pub fn record(&mut self, d: f64) {
        if let Some(&prev) = self.distances.last() {
            self.ratios.push(if prev > 0.0 { d / prev } else { 0.0 });
        }
        self.distances.push(d);
        self.iterations += 1;
    }

    pub fn last_distance(&self) -> Option<f64> {
        self.distances.last().copied()
    }

    /// Contraction estimate: the largest ratio whose numerator is above round-off.
    pub fn mu_hat(&self) -> f64 {
        let eligible = self
            .ratios
            .iter()
            .zip(&self.distances[1..])
            .filter(|(_, &d)| d > NOISE_FLOOR)
            .map(|(&r, _)| r);
        eligible.fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r)))).unwrap_or(0.0)
    }

    /// `mu/(1 - mu) d_last`, or `None` when the estimate does not certify.
    pub fn bound(&self) -> Option<f64> {
        let mu = self.mu_hat();
        let d = self.last_distance()?;
        (mu < 1.0).then(|| mu / (1.0 - mu) * d)
    }

    pub fn diverging(&self) -> bool {
        let d = &self.distances;
        d.len() > DIVERGENCE_RUN && d[d.len() - DIVERGENCE_RUN - 1..].windows(2).all(|w| w[1] > w[0])
    }

    fn check(&self, stage: &'static str) -> Result<()> {
        if self.diverging() {
            return Err(Error::Diverged {
                stage,
                iterations: self.iterations,
                distance: self.last_distance().unwrap_or(f64::NAN),
                mu: self.mu_hat(),
            });
        }
        Ok(())
    }
}

/// Whether jets may skip the cut-off factors: the cycle must sit where `phi = 1`.
pub fn interior_regime(model: &Model, cfg: &SolverConfig, w0: &PlaneLoop) -> bool {
    cfg.assume_interior && w0.second.sup_norm() < model.cutoff.a1
}

fn filtered(f: PeriodicFn, on: bool) -> PeriodicFn {
    if on {
        f.filter_two_thirds()
    } else {
        f
    }
}

fn loop_values(l: &PlaneLoop) -> [Vec<f64>; 2] {
    [l.first.values(), l.second.values().to_vec()]
}

// ---------------------------------------------------------------- order zero

#[derive(Clone, Debug)]
pub struct ZeroIterate {
    pub a: f64,
    pub z: PlaneLoop,
}

impl ZeroIterate {
    pub fn initial(model: &Model, n: usize) -> Result<Self> {
        Ok(Self { a: model.omega0, z: PlaneLoop::identity(n)? })
    }

    fn distance(&self, other: &ZeroIterate) -> Result<f64> {
        Ok((self.a - other.a).abs() + c0_distance(&self.z, &other.z)?)
    }
}

/// `eps Y_bar(Z, Z~)` along the loop, with `Z~` delayed at frequency `a`.
pub fn zero_forcing(model: &Model, z: &PlaneLoop, a: f64, interior: bool) -> Result<PlaneLoop> {
    let w = FTSeries::new(vec![z.clone()])?;
    let mut r = rhs_jet(model, &w, a, model.lambda0, interior)?;
    Ok(r.coeffs.swap_remove(0))
}

pub fn gamma0_apply(model: &Model, it: &ZeroIterate, interior: bool, filter: bool) -> Result<ZeroIterate> {
    let eg = zero_forcing(model, &it.z, it.a, interior)?;
    let g1 = filtered(eg.first.periodic().clone(), filter);
    let g2 = filtered(eg.second, filter);
    let a = model.omega0 + g1.mean();
    if !a.is_finite() || (a - model.omega0).abs() > model.omega0 / 2.0 {
        return Err(Error::DomainExit { stage: "zero", detail: format!("frequency {a} outside |a - omega0| <= omega0/2") });
    }
    let (_, big_g) = g1.antiderivative_zero_mean();
    let z1 = Angle::Lift(TorusLift { periodic: big_g.scale(1.0 / a) });
    let z2 = g2.spectral_solve(it.a, -model.lambda0)?;
    Ok(ZeroIterate { a, z: PlaneLoop::new(z1, z2)? })
}

#[derive(Clone, Debug)]
pub struct ZeroSolution {
    pub omega: f64,
    pub w0: PlaneLoop,
    pub report: SolveReport,
}

pub fn solve_zero(model: &Model, cfg: &SolverConfig, guess: Option<ZeroIterate>) -> Result<ZeroSolution> {
    let mut it = match guess {
        Some(g) => ZeroIterate { a: g.a, z: g.z.resample(cfg.modes)? },
        None => ZeroIterate::initial(model, cfg.modes)?,
    };
    let mut report = SolveReport::new("zero");
    for _ in 0..cfg.max_iter {
        let interior = interior_regime(model, cfg, &it.z);
        let next = gamma0_apply(model, &it, interior, cfg.filter)?;
        let d = it.distance(&next)?;
        report.record(d);
        it = next;
        log::debug!("zero: iteration {} distance {d:e}", report.iterations);
        if d < cfg.tol {
            report.converged = true;
            break;
        }
        report.check("zero")?;
    }
    report.residual = Some(residual_zero(model, it.a, &it.z)?.1);
    Ok(ZeroSolution { omega: it.a, w0: it.z, report })
}

/// Order-zero residual on the doubled grid.
pub fn residual_zero(model: &Model, omega: f64, w0: &PlaneLoop) -> Result<(PlaneLoop, f64)> {
    residual_order(model, omega, model.lambda0, &FTSeries::new(vec![w0.clone()])?, 0)
}

/// Residual of the order-`j` homological equation, evaluated with the full
/// extended forcing on a grid twice as fine as the jet's.
pub fn residual_order(model: &Model, omega: f64, lambda: f64, jet: &FTSeries, j: usize) -> Result<(PlaneLoop, f64)> {
    if j >= jet.order() {
        return Err(Error::OrderMismatch(j + 1, jet.order()));
    }
    let w = jet.truncate(j + 1).resample(2 * jet.n())?;
    let rhs = rhs_jet(model, &w, omega, lambda, false)?;
    let c = &w.coeffs[j];
    let jl = j as f64 * lambda;
    let offset = if j == 0 { model.omega0 } else { 0.0 };
    let d1 = c.first.derivative();
    let d2 = c.second.differentiate();
    let p1 = c.first.periodic().values();
    let e1: Vec<f64> = (0..w.n())
        .map(|m| omega * d1.values()[m] + jl * p1[m] - offset - rhs.coeffs[j].first.values()[m])
        .collect();
    let e2: Vec<f64> = (0..w.n())
        .map(|m| omega * d2.values()[m] + (jl - model.lambda0) * c.second.values()[m] - rhs.coeffs[j].second.values()[m])
        .collect();
    let e = PlaneLoop::periodic(PeriodicFn::new(e1)?, PeriodicFn::new(e2)?)?;
    let norm = e.first.periodic().sup_norm().max(e.second.sup_norm());
    Ok((e, norm))
}

// ----------------------------------------------------------- linearization

pub type Matrix = [[PeriodicFn; 2]; 2];

/// Linearization of the forcing along the cycle.
#[derive(Clone, Debug)]
pub struct ABPair {
    /// Coefficient of the undelayed argument, delay variation included.
    pub a: Matrix,
    /// `D_2 Y_bar` along the cycle; `B(lambda) = exp(-lambda rho0) D_2 Y_bar`.
    pub d2: Matrix,
    pub rho0: PeriodicFn,
    pub delta0: PeriodicFn,
}

fn matrix(rows: [[Vec<f64>; 2]; 2]) -> Result<Matrix> {
    let [[a, b], [c, d]] = rows;
    Ok([[PeriodicFn::new(a)?, PeriodicFn::new(b)?], [PeriodicFn::new(c)?, PeriodicFn::new(d)?]])
}

impl ABPair {
    pub fn b(&self, lambda: f64) -> Matrix {
        let w: Vec<f64> = self.rho0.values().iter().map(|r| (-lambda * r).exp()).collect();
        let scale = |f: &PeriodicFn| {
            PeriodicFn::new(f.values().iter().zip(&w).map(|(x, y)| x * y).collect()).expect("finite B entries")
        };
        [[scale(&self.d2[0][0]), scale(&self.d2[0][1])], [scale(&self.d2[1][0]), scale(&self.d2[1][1])]]
    }

    /// `A F + B(lambda) F(theta + delta0)` on the grid.
    pub fn apply(&self, b: &Matrix, f: &PlaneLoop) -> Result<[PeriodicFn; 2]> {
        let fv = loop_values(f);
        let fs = loop_values(&f.compose_shift(&self.delta0));
        let n = f.n();
        let mut out = [vec![0.0; n], vec![0.0; n]];
        for (i, row) in out.iter_mut().enumerate() {
            for (m, g) in row.iter_mut().enumerate() {
                for k in 0..2 {
                    *g += self.a[i][k].values()[m] * fv[k][m] + b[i][k].values()[m] * fs[k][m];
                }
            }
        }
        let [o1, o2] = out;
        Ok([PeriodicFn::new(o1)?, PeriodicFn::new(o2)?])
    }
}

pub fn assemble_ab(model: &Model, omega: f64, w0: &PlaneLoop, interior: bool) -> Result<ABPair> {
    let n = w0.n();
    let u = loop_values(w0);
    let mut rho0 = Vec::with_capacity(n);
    let mut drho = Vec::with_capacity(n);
    for m in 0..n {
        let grad: Vec<Dual<f64>> = (0..2)
            .map(|k| {
                let th = Dual::seeded(u[0][m], if k == 0 { 1.0 } else { 0.0 });
                let s = Dual::seeded(u[1][m], if k == 1 { 1.0 } else { 0.0 });
                if interior {
                    model.rho(&th, &s)
                } else {
                    model.rho_bar(&th, &s)
                }
            })
            .collect::<Result<_>>()?;
        let r = grad[0].v;
        if !(-1e-12..=model.h + 1e-12).contains(&r) {
            return Err(Error::DelayRange { value: r, h: model.h });
        }
        rho0.push(r);
        drho.push([grad[0].d, grad[1].d]);
    }
    let rho0 = PeriodicFn::new(rho0)?;
    let delta0 = rho0.scale(-omega);
    let v = loop_values(&w0.compose_shift(&delta0));
    let dw = [w0.first.derivative().compose_shift(&delta0), w0.second.differentiate().compose_shift(&delta0)];

    let mut a = [[vec![0.0; n], vec![0.0; n]], [vec![0.0; n], vec![0.0; n]]];
    let mut d2 = a.clone();
    for m in 0..n {
        let point = [u[0][m], u[1][m], v[0][m], v[1][m]];
        // jac[i][k]: derivative of component i along argument k of (u1, u2, v1, v2)
        let mut jac = [[0.0; 4]; 2];
        for k in 0..4 {
            let args: Vec<Dual<f64>> = (0..4).map(|l| Dual::seeded(point[l], if l == k { 1.0 } else { 0.0 })).collect();
            let (uu, vv) = ([args[0].clone(), args[1].clone()], [args[2].clone(), args[3].clone()]);
            let y = if interior { model.y(&uu, &vv, model.eps)? } else { model.y_bar(&uu, &vv, model.eps)? };
            jac[0][k] = y[0].d;
            jac[1][k] = y[1].d;
        }
        let dws = [dw[0].values()[m], dw[1].values()[m]];
        for i in 0..2 {
            let d2_dw = jac[i][2] * dws[0] + jac[i][3] * dws[1];
            for k in 0..2 {
                a[i][k][m] = jac[i][k] - omega * d2_dw * drho[m][k];
                d2[i][k][m] = jac[i][2 + k];
            }
        }
    }
    Ok(ABPair { a: matrix(a)?, d2: matrix(d2)?, rho0, delta0 })
}

// ---------------------------------------------------------------- order one

#[derive(Clone, Debug)]
pub struct FirstIterate {
    pub b: f64,
    pub f: PlaneLoop,
}

impl FirstIterate {
    pub fn initial(model: &Model, n: usize, target: f64) -> Result<Self> {
        Ok(Self { b: model.lambda0, f: PlaneLoop::periodic(PeriodicFn::zeros(n)?, PeriodicFn::constant(n, target)?)? })
    }

    fn distance(&self, other: &FirstIterate) -> Result<f64> {
        Ok((self.b - other.b).abs() + c0_distance(&self.f, &other.f)?)
    }
}

/// `B(theta; lambda)` recomputed only when `lambda` moves.
struct BCache {
    lambda: f64,
    b: Matrix,
}

impl BCache {
    fn get(&mut self, ab: &ABPair, lambda: f64) -> &Matrix {
        if (lambda - self.lambda).abs() > 1e-14 {
            self.lambda = lambda;
            self.b = ab.b(lambda);
        }
        &self.b
    }
}

pub fn gamma1_apply(model: &Model, omega: f64, ab: &ABPair, b_mat: &Matrix, it: &FirstIterate, target: f64, filter: bool) -> Result<FirstIterate> {
    let eps = model.eps;
    let [g1, g2] = ab.apply(b_mat, &it.f)?;
    let (g1, g2) = (filtered(g1.scale(eps), filter), filtered(g2.scale(eps), filter));
    let mean2 = g2.mean();
    let b = model.lambda0 + mean2 / target;
    let lambda0 = model.lambda0;
    if !b.is_finite() || (b - lambda0).abs() > lambda0.abs() / 3.0 {
        return Err(Error::DomainExit { stage: "first", detail: format!("exponent {b} outside |b - lambda0| <= |lambda0|/3") });
    }
    let f1 = g1.spectral_solve(omega, it.b)?;
    let h = g2.zip_with(&it.f.second, |g, f| (g - mean2 * f / target) / omega)?;
    let (_, big_h) = h.antiderivative_zero_mean();
    let f2 = big_h.add_constant(target - big_h.mean());
    Ok(FirstIterate { b, f: PlaneLoop::periodic(f1, f2)? })
}

#[derive(Clone, Debug)]
pub struct FirstSolution {
    pub lambda: f64,
    pub w1: PlaneLoop,
    pub report: SolveReport,
}

pub fn solve_first(model: &Model, omega: f64, w0: &PlaneLoop, cfg: &SolverConfig, guess: Option<FirstIterate>) -> Result<FirstSolution> {
    let interior = interior_regime(model, cfg, w0);
    let ab = assemble_ab(model, omega, w0, interior)?;
    let target = cfg.normalization;
    let mut it = match guess {
        Some(g) => FirstIterate { b: g.b, f: g.f.resample(w0.n())? },
        None => FirstIterate::initial(model, w0.n(), target)?,
    };
    let mut cache = BCache { lambda: it.b, b: ab.b(it.b) };
    let mut report = SolveReport::new("first");
    for _ in 0..cfg.max_iter {
        let b_mat = cache.get(&ab, it.b);
        let next = gamma1_apply(model, omega, &ab, b_mat, &it, target, cfg.filter)?;
        let d = it.distance(&next)?;
        report.record(d);
        it = next;
        if d < cfg.tol {
            report.converged = true;
            break;
        }
        report.check("first")?;
    }
    let jet = FTSeries::new(vec![w0.clone(), it.f.clone()])?;
    report.residual = Some(residual_order(model, omega, it.b, &jet, 1)?.1);
    Ok(FirstSolution { lambda: it.b, w1: it.f, report })
}

// ------------------------------------------------------------ higher orders

/// Order-`j` forcing with `W^j` set to zero.
pub fn order_forcing(model: &Model, omega: f64, lambda: f64, jet: &FTSeries, j: usize, interior: bool) -> Result<PlaneLoop> {
    if jet.order() < j {
        return Err(Error::OrderMismatch(j, jet.order()));
    }
    let w = jet.truncate(j).with_coeff(j, PlaneLoop::zeros(jet.n())?)?;
    let mut r = rhs_jet(model, &w, omega, lambda, interior)?;
    Ok(r.coeffs.swap_remove(j))
}

pub fn solve_order_j(model: &Model, omega: f64, lambda: f64, jet: &FTSeries, j: usize, ab: &ABPair, cfg: &SolverConfig) -> Result<(PlaneLoop, SolveReport)> {
    if j < 2 {
        return Err(Error::Config(format!("order {j} is not a higher order")));
    }
    let jl = j as f64 * lambda;
    if (jl - model.lambda0).abs() < 1e-10 {
        return Err(Error::SingularMode((jl - model.lambda0).abs()));
    }
    let interior = interior_regime(model, cfg, &jet.coeffs[0]);
    let s = order_forcing(model, omega, lambda, jet, j, interior)?;
    let b_mat = ab.b(jl);
    let eps = model.eps;
    let mut w = PlaneLoop::zeros(jet.n())?;
    let mut report = SolveReport::new(&format!("order {j}"));
    for _ in 0..cfg.max_iter {
        let [l1, l2] = ab.apply(&b_mat, &w)?;
        let f1 = filtered(s.first.periodic().add(&l1.scale(eps))?, cfg.filter);
        let f2 = filtered(s.second.add(&l2.scale(eps))?, cfg.filter);
        let next = PlaneLoop::periodic(f1.spectral_solve(omega, jl)?, f2.spectral_solve(omega, jl - model.lambda0)?)?;
        let d = c0_distance(&w, &next)?;
        report.record(d);
        w = next;
        if d < cfg.tol {
            report.converged = true;
            break;
        }
        report.check("order j")?;
    }
    let full = jet.truncate(j).with_coeff(j, w.clone())?;
    report.residual = Some(residual_order(model, omega, lambda, &full, j)?.1);
    Ok((w, report))
}

/// Orders `0..N` of the parameterization.
#[derive(Clone, Debug)]
pub struct JetSolution {
    pub omega: f64,
    pub lambda: f64,
    pub jet: FTSeries,
    pub reports: Vec<SolveReport>,
}

pub fn solve_jet(model: &Model, cfg: &SolverConfig) -> Result<JetSolution> {
    solve_jet_from(model, cfg, None, None)
}

/// [`solve_jet`] started from the given zero- and first-order iterates.
pub fn solve_jet_from(model: &Model, cfg: &SolverConfig, zero: Option<ZeroIterate>, first: Option<FirstIterate>) -> Result<JetSolution> {
    let model = cfg.prepare(model)?;
    let zero = solve_zero(&model, cfg, zero)?;
    let first = solve_first(&model, zero.omega, &zero.w0, cfg, first)?;
    let (omega, lambda) = (zero.omega, first.lambda);
    let mut jet = FTSeries::new(vec![zero.w0.clone(), first.w1.clone()])?;
    let mut reports = vec![zero.report, first.report];
    let interior = interior_regime(&model, cfg, &zero.w0);
    let ab = assemble_ab(&model, omega, &zero.w0, interior)?;
    for j in 2..cfg.order {
        let (wj, rep) = solve_order_j(&model, omega, lambda, &jet, j, &ab, cfg)?;
        jet = jet.with_coeff(j, wj)?;
        reports.push(rep);
    }
    Ok(JetSolution { omega, lambda, jet, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cartesian_to_coords, parse_model, Cutoff, HOPF_FIXTURE};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    fn coords(eps: f64, h: f64, y: [&str; 2], rho: &str) -> Model {
        Model::coords(1.0, -2.0, eps, h, Cutoff::default(), y, rho).unwrap()
    }

    fn hopf(eps: f64) -> Model {
        parse_model(HOPF_FIXTURE).unwrap().into_model().unwrap().with_eps(eps).unwrap()
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn report_bookkeeping() {
        let mut r = SolveReport::new("x");
        for d in [1e-3, 1e-6, 1e-9, 1e-15] {
            r.record(d);
        }
        assert_eq!(r.iterations, 4);
        assert_eq!(r.ratios.len(), 3);
        assert_abs_diff_eq!(r.mu_hat(), 1e-3, epsilon = 1e-15);
        assert!(r.bound().unwrap() < 1e-17);
        let mut r = SolveReport::new("x");
        for d in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
            r.record(d);
        }
        assert!(matches!(r.check("x"), Err(Error::Diverged { .. })));
    }

    #[test]
    fn null_model_is_fixed() {
        let m = coords(0.0, 0.0, ["0", "0"], "0");
        let z = solve_zero(&m, &cfg(), None).unwrap();
        assert_eq!(z.report.iterations, 1);
        assert_eq!(z.omega, 1.0);
        assert_eq!(z.w0.first.periodic().sup_norm(), 0.0);
        assert_eq!(z.w0.second.sup_norm(), 0.0);
        let f = solve_first(&m, z.omega, &z.w0, &cfg(), None).unwrap();
        assert_eq!(f.report.iterations, 1);
        assert_eq!(f.lambda, -2.0);
        assert_eq!(f.w1.first.periodic().sup_norm(), 0.0);
        assert!(f.w1.second.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_forcing_one_step() {
        let eps = 1e-3;
        let m = coords(eps, 0.2, ["0.7", "0"], "0.2*(1 + cos(2*pi*th))/2");
        let it = ZeroIterate::initial(&m, 32).unwrap();
        let next = gamma0_apply(&m, &it, true, false).unwrap();
        assert_abs_diff_eq!(next.a, 1.0 + 0.7 * eps, epsilon = 1e-15);
        assert!(next.z.first.periodic().sup_norm() < 1e-16);
        assert!(next.z.second.sup_norm() < 1e-16);
        let z = solve_zero(&m, &cfg(), None).unwrap();
        assert!(z.report.iterations <= 2);
    }

    #[test]
    fn single_mode_cycle_correction() {
        let eps = 1e-3;
        let m = coords(eps, 0.0, ["0", "cos(2*pi*u1)"], "0");
        let z = solve_zero(&m, &cfg(), None).unwrap();
        assert_eq!(z.omega, 1.0);
        let (l0, w) = (-2.0f64, 1.0f64);
        for k in 0..64 {
            let t = k as f64 / 64.0;
            let want = eps * (-l0 * (TWO_PI * t).cos() + TWO_PI * w * (TWO_PI * t).sin()) / (l0 * l0 + TWO_PI * TWO_PI * w * w);
            assert_abs_diff_eq!(z.w0.second.values()[k], want, epsilon = 1e-16);
        }
        assert!(residual_zero(&m, z.omega, &z.w0).unwrap().1 < 1e-15);
    }

    /// Independent first-order coefficient of the frequency for the Hopf fixture.
    fn omega_slope_oracle(m: &Model) -> f64 {
        let n = 4000;
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                let r = m.rho(&t, &0.0).unwrap();
                let y = m.y(&[t, 0.0], &[t - r, 0.0], 0.0).unwrap();
                y[0]
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn hopf_zero_order() {
        let c = cfg();
        let slopes: Vec<f64> = [1e-3, 5e-4]
            .iter()
            .map(|&eps| {
                let m = hopf(eps);
                let z = solve_zero(&m, &c, None).unwrap();
                assert!(z.report.converged);
                assert!(z.report.residual.unwrap() <= 1e-10);
                assert!(z.w0.first.periodic().values()[0].abs() < 1e-13);
                (z.omega - 1.0) / eps
            })
            .collect();
        let oracle = omega_slope_oracle(&hopf(1e-3));
        assert!((slopes[0] - oracle).abs() < 1e-3 * oracle.abs().max(1.0) * 2.0);
        // O(eps) corrections halve with eps
        let (e1, e2) = (slopes[0] - oracle, slopes[1] - oracle);
        assert!(e2.abs() < 0.75 * e1.abs() || e1.abs() < 1e-9);
    }

    #[test]
    fn zero_order_uniqueness() {
        let m = hopf(1e-3);
        let c = cfg();
        let a = solve_zero(&m, &c, None).unwrap();
        let pert = PeriodicFn::sample(64, |t| 0.01 * (TWO_PI * t).sin()).unwrap();
        let guess = ZeroIterate { a: 1.0, z: PlaneLoop::new(Angle::Lift(TorusLift::identity(64).unwrap()), pert).unwrap() };
        let b = solve_zero(&m, &c, Some(guess)).unwrap();
        let d = (a.omega - b.omega).abs() + c0_distance(&a.w0, &b.w0).unwrap();
        assert!(d <= 2.0 * c.tol, "d = {d:e}");
        let again = solve_zero(&m, &c, Some(ZeroIterate { a: a.omega, z: a.w0.clone() })).unwrap();
        assert!(again.report.iterations <= 1);
    }

    #[test]
    fn ab_structure() {
        let w0 = PlaneLoop::new(
            Angle::Lift(TorusLift { periodic: PeriodicFn::sample(32, |t| 0.01 * (TWO_PI * t).sin()).unwrap() }),
            PeriodicFn::sample(32, |t| 0.02 * (TWO_PI * t).cos()).unwrap(),
        )
        .unwrap();
        let m = coords(1e-3, 0.3, ["sin(2*pi*u1)*u2", "u2^2 + cos(2*pi*u1)"], "0.1*(2 + cos(2*pi*th))");
        let ab = assemble_ab(&m, 1.0, &w0, true).unwrap();
        assert!(ab.b(-2.0).iter().flatten().all(|f| f.sup_norm() == 0.0));
        for k in 0..32 {
            let (u1, u2) = (w0.first.values()[k], w0.second.values()[k]);
            assert_abs_diff_eq!(ab.a[0][1].values()[k], (TWO_PI * u1).sin(), epsilon = 1e-14);
            assert_abs_diff_eq!(ab.a[1][1].values()[k], 2.0 * u2, epsilon = 1e-14);
        }
        let m = coords(1e-3, 0.0, ["v1*v2", "v2"], "0");
        let ab = assemble_ab(&m, 1.0, &w0, true).unwrap();
        assert_eq!(ab.b(-2.0)[1][1].values(), ab.b(-1.0)[1][1].values());
    }

    /// `eps Y_bar(W, W~)` at a point for the one-term jet `W = W0 + s E`.
    fn forcing_at(m: &Model, omega: f64, lambda: f64, w: &FTSeries, theta: f64, s: f64) -> [f64; 2] {
        let x = w.eval(theta, s);
        let r = m.rho(&x[0], &x[1]).unwrap();
        let xt = w.eval(theta - omega * r, s * (-lambda * r).exp());
        let y = m.y(&x, &xt, m.eps).unwrap();
        [m.eps * y[0], m.eps * y[1]]
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let m = hopf(1e-3);
        let z = solve_zero(&m, &cfg(), None).unwrap();
        let (omega, lambda) = (z.omega, -2.05);
        let ab = assemble_ab(&m, omega, &z.w0, true).unwrap();
        let e = PlaneLoop::periodic(
            PeriodicFn::sample(64, |t| 0.3 * (TWO_PI * t).cos() + 0.1).unwrap(),
            PeriodicFn::sample(64, |t| 1.0 + 0.4 * (2.0 * TWO_PI * t).sin()).unwrap(),
        )
        .unwrap();
        let [g1, g2] = ab.apply(&ab.b(lambda), &e).unwrap();
        let w = FTSeries::new(vec![z.w0.clone(), e.clone()]).unwrap();
        let h = 1e-6;
        for k in (0..64).step_by(5) {
            let t = k as f64 / 64.0;
            let (p, q) = (forcing_at(&m, omega, lambda, &w, t, h), forcing_at(&m, omega, lambda, &w, t, -h));
            for (i, g) in [&g1, &g2].iter().enumerate() {
                let fd = (p[i] - q[i]) / (2.0 * h);
                let lin = m.eps * g.values()[k];
                assert!((fd - lin).abs() <= 1e-6 * lin.abs().max(m.eps), "k {k} i {i}: {fd} vs {lin}");
            }
        }
        // the jet route gives the same linearization
        let r = rhs_jet(&m, &w, omega, lambda, true).unwrap();
        for k in 0..64 {
            assert_abs_diff_eq!(r.coeffs[1].first.values()[k], m.eps * g1.values()[k], epsilon = 1e-13);
            assert_abs_diff_eq!(r.coeffs[1].second.values()[k], m.eps * g2.values()[k], epsilon = 1e-13);
        }
    }

    #[test]
    fn diagonal_first_order() {
        let eps = 1e-3;
        let m = coords(eps, 0.0, ["0", "0.8*u2"], "0");
        let z = solve_zero(&m, &cfg(), None).unwrap();
        let f = solve_first(&m, z.omega, &z.w0, &cfg(), None).unwrap();
        assert_abs_diff_eq!(f.lambda, -2.0 + 0.8 * eps, epsilon = 1e-15);
        assert!(f.w1.first.periodic().sup_norm() < 1e-16);
        assert!(f.w1.second.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn delayed_scalar_characteristic_root() {
        let (eps, beta, r0) = (0.05, 1.5, 0.3);
        let m = coords(eps, 0.3, ["0", "1.5*v2"], "0.3");
        let mut c = cfg();
        c.tol = 1e-14;
        let z = solve_zero(&m, &c, None).unwrap();
        let f = solve_first(&m, z.omega, &z.w0, &c, None).unwrap();
        // bisection on lambda - lambda0 - eps beta exp(-lambda r0)
        let g = |l: f64| l + 2.0 - eps * beta * (-l * r0).exp();
        let (mut lo, mut hi) = (-3.0, -1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert_abs_diff_eq!(f.lambda, 0.5 * (lo + hi), epsilon = 1e-13);
    }

    #[test]
    fn normalization_is_exact_each_step() {
        let m = hopf(2e-3);
        let c = cfg();
        let z = solve_zero(&m, &c, None).unwrap();
        let ab = assemble_ab(&m, z.omega, &z.w0, true).unwrap();
        let mut it = FirstIterate::initial(&m, 64, 1.0).unwrap();
        for _ in 0..4 {
            let b = ab.b(it.b);
            let [_, g2] = ab.apply(&b, &it.f).unwrap();
            let g2 = g2.scale(m.eps);
            let h = g2.zip_with(&it.f.second, |g, f| g - g2.mean() * f).unwrap();
            assert!(h.mean().abs() <= 1e-12);
            it = gamma1_apply(&m, z.omega, &ab, &b, &it, 1.0, false).unwrap();
            assert!((it.f.second.mean() - 1.0).abs() <= 1e-12);
        }
        let f = solve_first(&m, z.omega, &z.w0, &c, None).unwrap();
        let [_, g2] = ab.apply(&ab.b(f.lambda), &f.w1).unwrap();
        assert!((f.lambda - (-2.0 + m.eps * g2.mean())).abs() <= 1e-11);
        assert!(f.report.residual.unwrap() <= 1e-10);
        // uniqueness under the normalization from a perturbed guess
        let guess = FirstIterate { b: f.lambda * 1.01, f: f.w1.scale(1.01) };
        let g = solve_first(&m, z.omega, &z.w0, &c, Some(guess)).unwrap();
        assert!((g.lambda - f.lambda).abs() + c0_distance(&g.w1, &f.w1).unwrap() <= 2.0 * c.tol);
    }

    #[test]
    fn first_order_homogeneity() {
        let m = hopf(1e-3);
        let mut c = cfg();
        let z = solve_zero(&m, &c, None).unwrap();
        let one = solve_first(&m, z.omega, &z.w0, &c, None).unwrap();
        c.normalization = 2.0;
        let two = solve_first(&m, z.omega, &z.w0, &c, None).unwrap();
        assert!((one.lambda - two.lambda).abs() <= 1e-10);
        assert!(c0_distance(&one.w1.scale(2.0), &two.w1).unwrap() <= 1e-10);
        let r = |w1: &PlaneLoop, lam| residual_order(&m, z.omega, lam, &FTSeries::new(vec![z.w0.clone(), w1.clone()]).unwrap(), 1).unwrap().1;
        let (r1, r2) = (r(&one.w1, one.lambda), r(&one.w1.scale(2.0), one.lambda));
        assert!((r2 - 2.0 * r1).abs() <= 1e-15 + 1e-6 * r1);
    }

    #[test]
    fn quadratic_second_order() {
        let eps = 1e-2;
        let m = coords(eps, 0.0, ["0", "v2^2"], "0");
        let c = SolverConfig { order: 3, ..cfg() };
        let sol = solve_jet(&m, &c).unwrap();
        let w2 = &sol.jet.coeffs[2];
        // forcing at order two is eps (W1_2)^2 = eps
        let want = eps / (2.0 * sol.lambda - m.lambda0);
        assert!(w2.second.values().iter().all(|v| (v - want).abs() < 1e-15));
        assert!(residual_order(&m, sol.omega, sol.lambda, &sol.jet, 2).unwrap().1 <= 1e-12);
    }

    #[test]
    fn hopf_jet_residuals_and_constant_modes() {
        let m = hopf(1e-3);
        let c = cfg();
        let sol = solve_jet(&m, &c).unwrap();
        for (j, rep) in sol.reports.iter().enumerate() {
            assert!(rep.converged, "stage {j}");
            assert!(rep.residual.unwrap() <= 1e-10, "order {j}: {:e}", rep.residual.unwrap());
        }
        for j in 0..3 {
            assert!(residual_order(&m, sol.omega, sol.lambda, &sol.jet, j).unwrap().1 <= 10.0 * c.tol);
        }
        // zero W^j against its forcing leaves the forcing as residual
        let s = order_forcing(&m, sol.omega, sol.lambda, &sol.jet, 2, false).unwrap();
        let zeroed = sol.jet.with_coeff(2, PlaneLoop::zeros(64).unwrap()).unwrap();
        let r = residual_order(&m, sol.omega, sol.lambda, &zeroed, 2).unwrap().1;
        let sn = s.first.periodic().sup_norm().max(s.second.sup_norm());
        assert!((r - sn).abs() <= 1e-3 * sn);
    }

    #[test]
    fn residual_linear_response() {
        let m = hopf(1e-3);
        let sol = solve_jet(&m, &cfg()).unwrap();
        let z = &sol.jet.coeffs[0];
        let bump = PeriodicFn::sample(64, |t| 1e-5 * (TWO_PI * t).cos()).unwrap();
        let moved = PlaneLoop::new(z.first.clone(), z.second.add(&bump).unwrap()).unwrap();
        let r = residual_zero(&m, sol.omega, &moved).unwrap().1;
        let scale = 1e-5 * (2.0 + TWO_PI * sol.omega);
        assert!(r >= 0.3 * scale && r <= 3.0 * scale, "{r:e}");

        let hp = 1e-5;
        let e = PlaneLoop::periodic(
            PeriodicFn::sample(64, |t| (TWO_PI * t).sin()).unwrap(),
            PeriodicFn::sample(64, |t| (TWO_PI * t).cos() + 0.5).unwrap(),
        )
        .unwrap();
        let j = 2;
        let w2 = &sol.jet.coeffs[j];
        let moved = PlaneLoop::periodic(
            w2.first.periodic().add(&e.first.periodic().scale(hp)).unwrap(),
            w2.second.add(&e.second.scale(hp)).unwrap(),
        )
        .unwrap();
        let (e0, _) = residual_order(&m, sol.omega, sol.lambda, &sol.jet, j).unwrap();
        let (e1, _) = residual_order(&m, sol.omega, sol.lambda, &sol.jet.with_coeff(j, moved).unwrap(), j).unwrap();
        let ab = assemble_ab(&m, sol.omega, &sol.jet.coeffs[0], true).unwrap();
        let [a1, a2] = ab.apply(&ab.b(j as f64 * sol.lambda), &e).unwrap();
        let jl = j as f64 * sol.lambda;
        let de1 = e.first.periodic().differentiate();
        let de2 = e.second.differentiate();
        for k in 0..64 {
            let want1 = hp * (sol.omega * de1.values()[k] + jl * e.first.periodic().values()[k] - m.eps * a1.values()[k]);
            let want2 = hp * (sol.omega * de2.values()[k] + (jl + 2.0) * e.second.values()[k] - m.eps * a2.values()[k]);
            let got1 = e1.first.periodic().values()[2 * k] - e0.first.periodic().values()[2 * k];
            let got2 = e1.second.values()[2 * k] - e0.second.values()[2 * k];
            assert!((got1 - want1).abs() <= 1e-8 * hp.max(want1.abs()));
            assert!((got2 - want2).abs() <= 1e-8 * hp.max(want2.abs()));
        }
    }

    #[test]
    fn cartesian_conversion_is_usable() {
        let cm = match parse_model(HOPF_FIXTURE).unwrap() {
            crate::model::LoadedModel::Cartesian(c) => c,
            _ => unreachable!(),
        };
        let m = cartesian_to_coords(&cm).unwrap();
        assert!(solve_zero(&m, &cfg(), None).unwrap().report.converged);
    }
}
