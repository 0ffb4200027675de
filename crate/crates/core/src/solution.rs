//! The full parameterization: jet plus tail, its residuals and the end-to-end solve.

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::jet::FTSeries;
use crate::model::Model;
use crate::periodic::PlaneLoop;
use crate::solver::{interior_regime, residual_order, solve_jet_from, FirstIterate, SolveReport, ZeroIterate};
use crate::tail::{residual_tail, solve_tail, Parameterization, TailFn, TailResidual};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution {
    pub omega: f64,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub order: usize,
    #[serde(rename = "W")]
    pub w: Vec<PlaneLoop>,
    pub tail: TailFn,
    pub model_fingerprint: String,
    pub reports: Vec<SolveReport>,
    pub converged: bool,
    pub config: SolverConfig,
}

impl Solution {
    pub fn jet(&self) -> Result<FTSeries> {
        FTSeries::new(self.w.clone())
    }

    pub fn parameterization(&self) -> Result<Parameterization> {
        Parameterization::new(&self.jet()?, &self.tail)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.lambda < 0.0) {
            return Err(Error::Config(format!("solution needs omega > 0 and lambda < 0, got {} and {}", self.omega, self.lambda)));
        }
        if self.w.len() != self.order || self.tail.order != self.order {
            return Err(Error::OrderMismatch(self.order, self.w.len()));
        }
        self.tail.check()?;
        self.jet()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sol: Solution = serde_json::from_str(text)?;
        sol.check()?;
        Ok(sol)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks that the solution was computed for `model`.
    pub fn check_model(&self, model: &Model) -> Result<()> {
        let fp = model.fingerprint();
        if fp != self.model_fingerprint {
            return Err(Error::Config(format!("model fingerprint {fp} does not match the solution's {}", self.model_fingerprint)));
        }
        Ok(())
    }
}

/// Jet and tail for `model` under `cfg`.
pub fn solve_all(model: &Model, cfg: &SolverConfig) -> Result<Solution> {
    solve_all_from(model, cfg, None)
}

/// [`solve_all`] warm-started at the frequency, exponent and first two orders of `warm`.
pub fn solve_all_from(model: &Model, cfg: &SolverConfig, warm: Option<&Solution>) -> Result<Solution> {
    let prepared = cfg.prepare(model)?;
    let (zero, first) = match warm {
        Some(w) if w.w.len() >= 2 => (
            Some(ZeroIterate { a: w.omega, z: w.w[0].clone() }),
            Some(FirstIterate { b: w.lambda, f: w.w[1].clone() }),
        ),
        _ => (None, None),
    };
    let jet = solve_jet_from(&prepared, cfg, zero, first)?;
    let tail = solve_tail(&prepared, jet.omega, jet.lambda, &jet.jet, cfg)?;
    let mut reports = jet.reports;
    reports.push(tail.report);
    let converged = reports.iter().all(|r| r.converged);
    let mut sol = Solution {
        omega: jet.omega,
        lambda: jet.lambda,
        order: jet.jet.order(),
        w: jet.jet.coeffs,
        tail: tail.tail,
        model_fingerprint: model.fingerprint(),
        reports,
        converged,
        config: cfg.clone(),
    };
    let res = residuals(model, &sol)?;
    for (r, e) in sol.reports.iter_mut().zip(res.orders.iter()) {
        r.residual = Some(*e);
    }
    Ok(sol)
}

/// Residual norms of every order and of the tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `sup |E^j|` for `j < N`.
    pub orders: Vec<f64>,
    /// Per component, `[sup |E^j_1|, sup |E^j_2|]`.
    pub components: Vec<[f64; 2]>,
    pub tail: TailResidual,
}

impl Residuals {
    pub fn max_jet(&self) -> f64 {
        self.orders.iter().cloned().fold(0.0, f64::max)
    }

    /// Residual of the invariance equation at `|s|` built from the order norms,
    /// with the interior tail norm (valid on the innermost panel).
    pub fn combined(&self, s: f64) -> f64 {
        let s = s.abs();
        let jet: f64 = self.orders.iter().enumerate().map(|(j, e)| e * s.powi(j as i32)).sum();
        jet + self.tail.interior * s.powi(self.orders.len() as i32)
    }
}

pub fn residuals(model: &Model, sol: &Solution) -> Result<Residuals> {
    let prepared = sol.config.prepare(model)?;
    let jet = sol.jet()?;
    let mut orders = Vec::with_capacity(sol.order);
    let mut components = Vec::with_capacity(sol.order);
    for j in 0..sol.order {
        let lambda = if j == 0 { prepared.lambda0 } else { sol.lambda };
        let (e, norm) = residual_order(&prepared, sol.omega, lambda, &jet, j)?;
        orders.push(norm);
        components.push([e.first.periodic().sup_norm(), e.second.sup_norm()]);
    }
    let interior = interior_regime(&prepared, &sol.config, &jet.coeffs[0]);
    let tail = residual_tail(&prepared, sol.omega, sol.lambda, &jet, &sol.tail, interior)?;
    Ok(Residuals { orders, components, tail })
}
