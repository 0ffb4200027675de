//! Independent checks of a computed parameterization: a fixed-step integrator
//! for the delay equation, the defect of the parameterized orbits, rate fits and
//! the a-posteriori report.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CartesianModel;
use crate::solution::{Residuals, Solution};
use crate::solver::SolveReport;
use crate::tail::Parameterization;

/// Samples of the cycle used for the nearest-point search.
const CYCLE_SAMPLES: usize = 1024;
/// Distance window used for the log-distance fit.
const FIT_DIST_MAX: f64 = 1e-3;
const FIT_DIST_MIN: f64 = 1e-8;
const FIT_MIN_POINTS: usize = 16;

/// Uniform time grid `t0 + i dt`, `i = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl Grid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite() && t0.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid covering `[t0, t0 + T]` with step close to `dt`.
    pub fn span(t0: f64, t: f64, dt: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("integration time must be positive, got {t}")));
        }
        let steps = (t / dt).round().max(1.0) as usize;
        Self::new(t0, t / steps as f64, steps)
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.t(self.steps)
    }
}

/// Values and derivatives on a uniform grid with cubic Hermite dense output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub x: Vec<[f64; 2]>,
    pub dx: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn t(&self, i: usize) -> f64 {
        self.grid.t(i)
    }

    /// Dense value on `[t0, t_end]`.
    pub fn eval(&self, t: f64) -> Result<[f64; 2]> {
        let n = self.len().min(self.dx.len());
        hermite(&self.grid, &self.x[..n], &self.dx[..n], t)
            .ok_or_else(|| Error::Integration(format!("time {t} outside the trajectory")))
    }

    /// `t,x1,x2` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x1,x2\n");
        for (i, x) in self.x.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", self.t(i), x[0], x[1]);
        }
        out
    }
}

fn hermite(grid: &Grid, x: &[[f64; 2]], dx: &[[f64; 2]], t: f64) -> Option<[f64; 2]> {
    let n = x.len();
    if n == 0 {
        return None;
    }
    let u = (t - grid.t0) / grid.dt;
    let last = (n - 1) as f64;
    if !(u >= -1e-12 && u <= last + 1e-12) {
        return None;
    }
    if n == 1 {
        return Some(x[0]);
    }
    let i = (u.floor().max(0.0) as usize).min(n - 2);
    let r = u - i as f64;
    if r == 0.0 {
        return Some(x[i]);
    }
    if r == 1.0 {
        return Some(x[i + 1]);
    }
    let h = grid.dt;
    let (r2, r3) = (r * r, r * r * r);
    let h00 = 2.0 * r3 - 3.0 * r2 + 1.0;
    let h10 = r3 - 2.0 * r2 + r;
    let h01 = -2.0 * r3 + 3.0 * r2;
    let h11 = r3 - r2;
    Some(std::array::from_fn(|c| h00 * x[i][c] + h10 * h * dx[i][c] + h01 * x[i + 1][c] + h11 * h * dx[i + 1][c]))
}

struct Integrator<'a> {
    cm: &'a CartesianModel,
    history: &'a dyn Fn(f64) -> Result<[f64; 2]>,
    h_bar: f64,
    grid: Grid,
    x: Vec<[f64; 2]>,
    dx: Vec<[f64; 2]>,
}

impl Integrator<'_> {
    fn delayed(&self, tau: f64) -> Result<[f64; 2]> {
        if tau <= 0.0 {
            return (self.history)(tau);
        }
        let m = self.dx.len() - 1;
        let tm = self.grid.t(m);
        if tau <= tm {
            return hermite(&self.grid, &self.x[..=m], &self.dx, tau)
                .ok_or_else(|| Error::Integration(format!("lookup at {tau} failed")));
        }
        // inside the current step: first-order extrapolation
        let (xm, dm) = (self.x[m], self.dx[m]);
        Ok([xm[0] + (tau - tm) * dm[0], xm[1] + (tau - tm) * dm[1]])
    }

    fn f(&self, t: f64, x: [f64; 2]) -> Result<[f64; 2]> {
        let r = self.cm.delay(&x)?;
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Integration(format!("delay {r} at t = {t} looks ahead of the current time")));
        }
        if r > self.h_bar {
            return Err(Error::Integration(format!("delay {r} at t = {t} exceeds the history length {}", self.h_bar)));
        }
        let xd = self.delayed(t - r)?;
        let f = self.cm.rhs(x, xd)?;
        if !(f[0].is_finite() && f[1].is_finite()) {
            return Err(Error::Integration(format!("non-finite vector field at t = {t}")));
        }
        Ok(f)
    }
}

fn axpy(x: [f64; 2], a: f64, k: [f64; 2]) -> [f64; 2] {
    [x[0] + a * k[0], x[1] + a * k[1]]
}

/// Classical RK4 for `x' = X(x, eps x(t - r(x)))` from `history` on `[-h_bar, 0]`,
/// with the lag of each stage taken at that stage's state.
pub fn sdde_integrate(
    cm: &CartesianModel,
    history: &dyn Fn(f64) -> Result<[f64; 2]>,
    h_bar: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(h_bar >= 0.0 && h_bar.is_finite()) {
        return Err(Error::Config(format!("history length must be non-negative, got {h_bar}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let grid = Grid::span(0.0, t_end, dt)?;
    let x0 = history(0.0)?;
    let mut it = Integrator { cm, history, h_bar, grid, x: vec![x0], dx: Vec::with_capacity(grid.steps + 1) };
    it.x.reserve(grid.steps);
    let h = grid.dt;
    for n in 0..grid.steps {
        let t = grid.t(n);
        let x = it.x[n];
        let k1 = it.f(t, x)?;
        it.dx.push(k1);
        let k2 = it.f(t + 0.5 * h, axpy(x, 0.5 * h, k1))?;
        let k3 = it.f(t + 0.5 * h, axpy(x, 0.5 * h, k2))?;
        let k4 = it.f(t + h, axpy(x, h, k3))?;
        let next: [f64; 2] = std::array::from_fn(|c| x[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
        if !(next[0].is_finite() && next[1].is_finite()) {
            return Err(Error::Integration(format!("non-finite state at t = {}", grid.t(n + 1))));
        }
        it.x.push(next);
    }
    let last = it.f(grid.end(), it.x[grid.steps])?;
    it.dx.push(last);
    Ok(Trajectory { grid, x: it.x, dx: it.dx })
}

/// A solution mapped to the physical plane through `K`.
pub struct Orbit<'a> {
    pub cm: &'a CartesianModel,
    pub param: Parameterization,
    pub omega: f64,
    pub lambda: f64,
}

impl<'a> Orbit<'a> {
    pub fn new(cm: &'a CartesianModel, sol: &Solution) -> Result<Self> {
        Ok(Self { cm, param: sol.parameterization()?, omega: sol.omega, lambda: sol.lambda })
    }

    /// `x(t) = K(W(theta + omega t, s e^{lambda t}))` and its time derivative.
    pub fn point(&self, theta: f64, s: f64, t: f64) -> Result<([f64; 2], [f64; 2])> {
        let sigma = s * (self.lambda * t).exp();
        if !(sigma.abs() <= self.param.s_max()) {
            return Err(Error::TailDomain(format!("s e^(lambda t) = {sigma} at t = {t} leaves |s| <= {}", self.param.s_max())));
        }
        let (w, [dth, ds]) = self.param.eval_d(theta + self.omega * t, sigma)?;
        let (k, dk) = self.cm.k_jacobian(&w[0], &w[1])?;
        let wdot: [f64; 2] = std::array::from_fn(|c| dth[c] * self.omega + ds[c] * self.lambda * sigma);
        let dx = [dk[0][0] * wdot[0] + dk[0][1] * wdot[1], dk[1][0] * wdot[0] + dk[1][1] * wdot[1]];
        Ok((k, dx))
    }

    /// The cycle point `K(W(theta, 0))` and its `theta` derivative.
    fn cycle(&self, theta: f64) -> Result<([f64; 2], [f64; 2])> {
        let (x, dx) = self.point(theta, 0.0, 0.0)?;
        Ok((x, [dx[0] / self.omega, dx[1] / self.omega]))
    }

    /// History function on `t <= 0` for [`sdde_integrate`].
    pub fn history(&self, theta: f64, s: f64) -> impl Fn(f64) -> Result<[f64; 2]> + '_ {
        move |t| self.point(theta, s, t).map(|p| p.0)
    }
}

pub fn parameterized_orbit(orbit: &Orbit, theta: f64, s: f64, grid: Grid) -> Result<Trajectory> {
    let mut x = Vec::with_capacity(grid.steps + 1);
    let mut dx = Vec::with_capacity(grid.steps + 1);
    for i in 0..=grid.steps {
        let (p, d) = orbit.point(theta, s, grid.t(i))?;
        x.push(p);
        dx.push(d);
    }
    Ok(Trajectory { grid, x, dx })
}

/// Sup over `n_pts` times in `[0, T]` of `|x' - X(x, eps x(t - r(x)))|`, all from the parameterization.
pub fn defect_norm(orbit: &Orbit, theta: f64, s: f64, t_end: f64, n_pts: usize) -> Result<f64> {
    let n = n_pts.max(2);
    let mut sup = 0.0_f64;
    for i in 0..n {
        let t = t_end * i as f64 / (n - 1) as f64;
        let (x, dx) = orbit.point(theta, s, t)?;
        let r = orbit.cm.delay(&x)?;
        let (xd, _) = orbit.point(theta, s, t - r)?;
        let f = orbit.cm.rhs(x, xd)?;
        sup = sup.max((dx[0] - f[0]).abs()).max((dx[1] - f[1]).abs());
    }
    Ok(sup)
}

/// Nearest-point projection onto the cycle.
struct CycleProjector<'a, 'b> {
    orbit: &'b Orbit<'a>,
    samples: Vec<[f64; 2]>,
}

impl<'a, 'b> CycleProjector<'a, 'b> {
    fn new(orbit: &'b Orbit<'a>) -> Result<Self> {
        let samples = (0..CYCLE_SAMPLES)
            .map(|m| orbit.cycle(m as f64 / CYCLE_SAMPLES as f64).map(|p| p.0))
            .collect::<Result<_>>()?;
        Ok(Self { orbit, samples })
    }

    /// Phase in `[0, 1)` of the nearest cycle point and the distance to it.
    fn project(&self, x: [f64; 2]) -> Result<(f64, f64)> {
        let d2 = |p: &[f64; 2]| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
        let n = self.samples.len();
        let (m, _) = self
            .samples
            .iter()
            .map(d2)
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
        let (a, b, c) = (d2(&self.samples[(m + n - 1) % n]), d2(&self.samples[m]), d2(&self.samples[(m + 1) % n]));
        let curv = a - 2.0 * b + c;
        let shift = if curv > 0.0 { (0.5 * (a - c) / curv).clamp(-1.0, 1.0) } else { 0.0 };
        let mut th = (m as f64 + shift) / n as f64;
        // Gauss-Newton on (c(th) - x) . c'(th) = 0
        for _ in 0..6 {
            let (p, dp) = self.orbit.cycle(th)?;
            let g = (p[0] - x[0]) * dp[0] + (p[1] - x[1]) * dp[1];
            let step = g / (dp[0] * dp[0] + dp[1] * dp[1]);
            th -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (p, _) = self.orbit.cycle(th)?;
        let dist = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
        Ok((th.rem_euclid(1.0), dist))
    }
}

/// Least-squares slope of `y` against `x`.
fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (num, den) = x.iter().zip(y).fold((0.0, 0.0), |(a, b), (xi, yi)| (a + (xi - mx) * (yi - my), b + (xi - mx).powi(2)));
    num / den
}

/// Frequency from section crossings of the asymptotic phase in the second half of
/// the run, and exponent from the log distance to the cycle.
pub fn phase_rate_fit(traj: &Trajectory, orbit: &Orbit) -> Result<(f64, f64)> {
    let proj = CycleProjector::new(orbit)?;
    let mut phase = Vec::with_capacity(traj.len());
    let mut dist = Vec::with_capacity(traj.len());
    let mut prev: Option<f64> = None;
    for x in &traj.x {
        let (th, d) = proj.project(*x)?;
        // unwrap
        let th = match prev {
            Some(p) => p + (th - p.rem_euclid(1.0) + 0.5).rem_euclid(1.0) - 0.5,
            None => th,
        };
        prev = Some(th);
        phase.push(th);
        dist.push(d);
    }
    let start = traj.len() / 2;
    let mut crossings = Vec::new();
    for i in start..traj.len() - 1 {
        let (a, b) = (phase[i], phase[i + 1]);
        let k = b.floor();
        if a < k && b >= k {
            crossings.push(traj.t(i) + (k - a) / (b - a) * traj.grid.dt);
        }
    }
    if crossings.len() < 2 {
        return Err(Error::Fit(format!("only {} section crossings; integrate longer", crossings.len())));
    }
    let omega = (crossings.len() - 1) as f64 / (crossings[crossings.len() - 1] - crossings[0]);
    let (ts, ls): (Vec<f64>, Vec<f64>) = dist
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > FIT_DIST_MIN && d < FIT_DIST_MAX)
        .map(|(i, d)| (traj.t(i), d.ln()))
        .unzip();
    if ts.len() < FIT_MIN_POINTS {
        return Err(Error::Fit(format!(
            "distance to the cycle underflows: {} samples in [{FIT_DIST_MIN:e}, {FIT_DIST_MAX:e}]",
            ts.len()
        )));
    }
    Ok((omega, ls_slope(&ts, &ls)))
}

/// Least-squares slope of `ln |a(t) - b(t)|` over the nodes of `a` in `[t0, t1]`.
pub fn log_distance_slope(a: &Trajectory, b: &Trajectory, t0: f64, t1: f64) -> Result<f64> {
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for i in 0..a.len() {
        let t = a.t(i);
        if t < t0 || t > t1 {
            continue;
        }
        let xb = b.eval(t)?;
        let d = ((a.x[i][0] - xb[0]).powi(2) + (a.x[i][1] - xb[1]).powi(2)).sqrt();
        if !(d > 0.0) {
            return Err(Error::Fit(format!("trajectories coincide at t = {t}")));
        }
        ts.push(t);
        ls.push(d.ln());
    }
    if ts.len() < 2 {
        return Err(Error::Fit("fewer than two samples in the fit window".into()));
    }
    Ok(ls_slope(&ts, &ls))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageBound {
    pub stage: String,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub mu_hat: f64,
    pub last_distance: Option<f64>,
    /// `mu/(1 - mu) d_last`; `None` when the estimate does not certify.
    pub bound: Option<f64>,
    pub certifying: bool,
}

impl StageBound {
    pub fn from_report(r: &SolveReport) -> Self {
        let bound = r.bound();
        Self {
            stage: r.stage.clone(),
            iterations: r.iterations,
            residual: r.residual,
            mu_hat: r.mu_hat(),
            last_distance: r.last_distance(),
            bound,
            certifying: bound.is_some(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AposterioriReport {
    pub stages: Vec<StageBound>,
    /// `(1 + (2 + 2 B0)/omega0) |E0_1| - |E0_2| / lambda0`, with `B0` the measured C1
    /// norm of the periodic parts of `W0`.
    pub surrogate: f64,
    pub b0: f64,
}

impl AposterioriReport {
    pub fn certifying(&self) -> bool {
        self.stages.iter().all(|s| s.certifying)
    }
}

pub fn aposteriori_report(omega0: f64, lambda0: f64, sol: &Solution, res: &Residuals) -> Result<AposterioriReport> {
    let w0 = sol.w.first().ok_or(Error::OrderMismatch(1, 0))?;
    let p1 = w0.first.periodic();
    let p2 = &w0.second;
    let b0 = [p1.sup_norm(), p2.sup_norm(), p1.differentiate().sup_norm(), p2.differentiate().sup_norm()]
        .into_iter()
        .fold(0.0, f64::max);
    let [e1, e2] = res.components.first().copied().unwrap_or([0.0, 0.0]);
    let surrogate = (1.0 + (2.0 + 2.0 * b0) / omega0) * e1 - e2 / lambda0;
    Ok(AposterioriReport { stages: sol.reports.iter().map(StageBound::from_report).collect(), surrogate, b0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SolverConfig;
    use crate::model::{parse_model, LoadedModel, HOPF_FIXTURE};
    use crate::solution::solve_all;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn hopf_cm(eps: f64) -> CartesianModel {
        match parse_model(HOPF_FIXTURE).unwrap() {
            LoadedModel::Cartesian(mut cm) => {
                cm.eps = eps;
                cm
            }
            _ => unreachable!(),
        }
    }

    fn unperturbed() -> (CartesianModel, Solution) {
        let cm = hopf_cm(0.0);
        let m = crate::model::cartesian_to_coords(&cm).unwrap();
        let sol = solve_all(&m, &SolverConfig { modes: 16, ..SolverConfig::default() }).unwrap();
        (cm, sol)
    }

    #[test]
    fn hermite_reproduces_nodes_and_cubics() {
        let grid = Grid::new(0.5, 0.25, 4).unwrap();
        let f = |t: f64| [t * t * t - t, 2.0 * t * t];
        let df = |t: f64| [3.0 * t * t - 1.0, 4.0 * t];
        let tr = Trajectory {
            grid,
            x: (0..=4).map(|i| f(grid.t(i))).collect(),
            dx: (0..=4).map(|i| df(grid.t(i))).collect(),
        };
        for i in 0..=4 {
            assert_eq!(tr.eval(grid.t(i)).unwrap(), tr.x[i]);
        }
        for t in [0.6, 0.93, 1.37, 1.5] {
            let v = tr.eval(t).unwrap();
            assert_abs_diff_eq!(v[0], f(t)[0], epsilon = 1e-14);
            assert_abs_diff_eq!(v[1], f(t)[1], epsilon = 1e-14);
        }
        assert!(tr.eval(0.4).is_err());
        assert!(tr.eval(1.6).is_err());
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,x1,x2\n5.0000000000000000e-1,"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn unperturbed_cycle_stays_on_circle() {
        let cm = hopf_cm(0.0);
        let hist = |t: f64| Ok([(2.0 * PI * t).cos(), (2.0 * PI * t).sin()]);
        let tr = sdde_integrate(&cm, &hist, cm.h, 10.0, 1e-3).unwrap();
        for x in &tr.x {
            assert!((x[0].hypot(x[1]) - 1.0).abs() < 1e-9);
        }
        let end = tr.x[tr.len() - 1];
        assert_abs_diff_eq!(end[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn linear_decay_is_monotone() {
        let cm = CartesianModel::new(1.0, -2.0, 0.5, 1.0, Default::default(), ["-x1 + y1", "-x2"], "0.5", ["th", "s"]).unwrap();
        let hist = |_t: f64| Ok([1.0, -1.0]);
        let tr = sdde_integrate(&cm, &hist, 1.0, 20.0, 1e-2).unwrap();
        let norms: Vec<f64> = tr.x.iter().map(|x| x[0].abs().max(x[1].abs())).collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
        assert!(norms[norms.len() - 1] < 1e-2);
    }

    #[test]
    fn integrator_errors() {
        let bad = CartesianModel::new(1.0, -2.0, 0.1, 0.5, Default::default(), ["x1", "x2"], "-0.1", ["th", "s"]).unwrap();
        let hist = |_t: f64| Ok([1.0, 0.0]);
        assert!(matches!(sdde_integrate(&bad, &hist, 0.5, 1.0, 0.1), Err(Error::Integration(_))));
        let long = CartesianModel::new(1.0, -2.0, 0.1, 0.5, Default::default(), ["x1", "x2"], "0.8", ["th", "s"]).unwrap();
        assert!(matches!(sdde_integrate(&long, &hist, 0.5, 1.0, 0.1), Err(Error::Integration(_))));
        let blow = CartesianModel::new(1.0, -2.0, 0.0, 0.5, Default::default(), ["x1^2", "0"], "0", ["th", "s"]).unwrap();
        assert!(sdde_integrate(&blow, &hist, 0.5, 3.0, 0.1).is_err());
        assert!(sdde_integrate(&blow, &hist, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn rk4_self_convergence() {
        let cm = hopf_cm(0.05);
        let hist = |t: f64| Ok([1.2 * (2.0 * PI * t).cos(), 0.9 * (2.0 * PI * t).sin()]);
        let end = |dt: f64| {
            let tr = sdde_integrate(&cm, &hist, cm.h, 1.0, dt).unwrap();
            tr.x[tr.len() - 1]
        };
        let (a, b, c) = (end(0.02), end(0.01), end(0.005));
        let e1 = (a[0] - b[0]).hypot(a[1] - b[1]);
        let e2 = (b[0] - c[0]).hypot(b[1] - c[1]);
        assert!(e1 / e2 >= 11.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn unperturbed_orbit_is_the_conjugacy() {
        let (cm, sol) = unperturbed();
        let orbit = Orbit::new(&cm, &sol).unwrap();
        for (th, s, t) in [(0.1, 0.0, 0.3), (0.7, 0.2, 0.1), (0.25, -0.1, 1.0)] {
            let (x, _) = orbit.point(th, s, t).unwrap();
            let k = cm.k_eval(&(th + t), &(s * (-2.0 * t).exp())).unwrap();
            assert_abs_diff_eq!(x[0], k[0], epsilon = 1e-13);
            assert_abs_diff_eq!(x[1], k[1], epsilon = 1e-13);
        }
        assert!(defect_norm(&orbit, 0.3, 0.1, 2.0, 50).unwrap() <= 1e-9);
        assert!(matches!(orbit.point(0.0, 10.0, 0.0), Err(Error::TailDomain(_))));
        let grid = Grid::span(0.0, 1.0, 0.01).unwrap();
        let a = parameterized_orbit(&orbit, 0.0, 0.0, grid).unwrap();
        let b = parameterized_orbit(&orbit, 0.5, 0.0, grid).unwrap();
        let proj = CycleProjector::new(&orbit).unwrap();
        for x in a.x.iter().chain(&b.x) {
            assert!(proj.project(*x).unwrap().1 <= 1e-9);
        }
    }

    #[test]
    fn rates_of_the_unperturbed_flow() {
        let (cm, sol) = unperturbed();
        let orbit = Orbit::new(&cm, &sol).unwrap();
        let hist = orbit.history(0.2, 0.1);
        let tr = sdde_integrate(&cm, &hist, cm.h, 10.0, 1e-3).unwrap();
        let (w, l) = phase_rate_fit(&tr, &orbit).unwrap();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(l, -2.0, epsilon = 1e-3);
        let on = sdde_integrate(&cm, &orbit.history(0.2, 0.0), cm.h, 3.0, 1e-3).unwrap();
        assert!(matches!(phase_rate_fit(&on, &orbit), Err(Error::Fit(_))));
        let short = sdde_integrate(&cm, &hist, cm.h, 0.5, 1e-2).unwrap();
        assert!(matches!(phase_rate_fit(&short, &orbit), Err(Error::Fit(_))));
    }

    #[test]
    fn report_is_consistent() {
        let (_, sol) = unperturbed();
        let res = Residuals { orders: vec![0.0; 3], components: vec![[1e-10, 2e-10]; 3], tail: Default::default() };
        let rep = aposteriori_report(1.0, -2.0, &sol, &res).unwrap();
        assert!(rep.certifying());
        assert_eq!(rep.b0, 0.0);
        assert_abs_diff_eq!(rep.surrogate, 4e-10, epsilon = 1e-22);
        let mut r = SolveReport::new("x");
        for d in [1.0, 1.1, 1.2] {
            r.record(d);
        }
        let sb = StageBound::from_report(&r);
        assert!(!sb.certifying && sb.bound.is_none());
    }
}
