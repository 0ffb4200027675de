use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cutoff, Model};

/// Quadrature settings for the tail operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Minimum number of Gauss–Legendre panels on `[0, T_max]`.
    pub panels: usize,
    pub nodes_per_panel: usize,
    /// Truncation level of the exponentially decaying integrand.
    pub tail_tol: f64,
    /// Largest accepted refinement estimate.
    pub qtol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { panels: 8, nodes_per_panel: 16, tail_tol: 1e-14, qtol: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Fourier grid size in `theta`.
    pub modes: usize,
    /// Jet order `N`: orders `0..N` are solved as a series, the rest by the tail.
    pub order: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Chebyshev–Lobatto nodes per tail panel in `s`.
    pub n_cheb: usize,
    pub quad: QuadConfig,
    /// Evaluate jets without cut-off factors while the cycle stays inside `|s| < a1`.
    pub assume_interior: bool,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    /// Apply the 2/3 filter to the forcing inside each operator.
    pub filter: bool,
    /// Target value of the mean of the second component of `W^1`.
    pub normalization: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            modes: 64,
            order: 3,
            tol: 1e-11,
            max_iter: 200,
            n_cheb: 64,
            quad: QuadConfig::default(),
            assume_interior: true,
            a1: None,
            a2: None,
            filter: false,
            normalization: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check(self.modes >= 8 && self.modes.is_power_of_two(), "modes must be a power of two and at least 8")?;
        check(self.order >= 2, "order must be at least 2")?;
        check(self.tol.is_finite() && self.tol > 0.0, "tol must be positive")?;
        check(self.max_iter >= 1, "max_iter must be at least 1")?;
        check(self.n_cheb >= 4, "n_cheb must be at least 4")?;
        check(self.quad.panels >= 1 && self.quad.nodes_per_panel >= 2, "quadrature needs at least one panel of two nodes")?;
        check(self.quad.tail_tol > 0.0 && self.quad.tail_tol < 1.0, "tail_tol must lie in (0, 1)")?;
        check(self.quad.qtol > 0.0, "qtol must be positive")?;
        check(self.normalization.is_finite() && self.normalization != 0.0, "normalization must be non-zero")
    }

    /// The model with this configuration's cut-off overrides applied.
    pub fn prepare(&self, model: &Model) -> Result<Model> {
        self.validate()?;
        if self.a1.is_none() && self.a2.is_none() {
            return Ok(model.clone());
        }
        let c = Cutoff::new(self.a1.unwrap_or(model.cutoff.a1), self.a2.unwrap_or(model.cutoff.a2))?;
        Ok(model.with_cutoff(c))
    }
}
