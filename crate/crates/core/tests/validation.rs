use std::sync::OnceLock;

use isochron_core::config::SolverConfig;
use isochron_core::model::{cartesian_to_coords, parse_model, CartesianModel, LoadedModel, HOPF_FIXTURE};
use isochron_core::solution::{residuals, solve_all, Solution};
use isochron_core::validate::{aposteriori_report, defect_norm, log_distance_slope, phase_rate_fit, sdde_integrate, Orbit};
use proptest::prelude::*;

fn cm() -> CartesianModel {
    match parse_model(HOPF_FIXTURE).unwrap() {
        LoadedModel::Cartesian(cm) => cm,
        LoadedModel::Coords(_) => unreachable!(),
    }
}

fn solution() -> &'static Solution {
    static SOL: OnceLock<Solution> = OnceLock::new();
    SOL.get_or_init(|| {
        let m = cartesian_to_coords(&cm()).unwrap();
        solve_all(&m, &SolverConfig { n_cheb: 32, ..SolverConfig::default() }).unwrap()
    })
}

#[test]
fn integrated_rates_match_the_solution() {
    let cm = cm();
    let sol = solution();
    let orbit = Orbit::new(&cm, sol).unwrap();
    let tr = sdde_integrate(&cm, &orbit.history(0.1, 0.1), cm.h, 10.0, 1e-3).unwrap();
    let (w, l) = phase_rate_fit(&tr, &orbit).unwrap();
    assert!((w - sol.omega).abs() <= 1e-5, "{w} vs {}", sol.omega);
    assert!((l - sol.lambda).abs() <= 1e-2, "{l} vs {}", sol.lambda);
}

#[test]
fn defect_reacts_to_a_wrong_exponent() {
    let cm = cm();
    let sol = solution();
    let good = defect_norm(&Orbit::new(&cm, sol).unwrap(), 0.2, 0.1, 1.0, 200).unwrap();
    let mut bad = sol.clone();
    bad.lambda *= 1.01;
    let worse = defect_norm(&Orbit::new(&cm, &bad).unwrap(), 0.2, 0.1, 1.0, 200).unwrap();
    assert!(worse >= 10.0 * good, "{worse:e} vs {good:e}");
}

#[test]
fn same_isochron_contracts_at_lambda() {
    let cm = cm();
    let sol = solution();
    let orbit = Orbit::new(&cm, sol).unwrap();
    let a = sdde_integrate(&cm, &orbit.history(0.6, 0.08), cm.h, 4.0, 1e-3).unwrap();
    let b = sdde_integrate(&cm, &orbit.history(0.6, -0.04), cm.h, 4.0, 1e-3).unwrap();
    let slope = log_distance_slope(&a, &b, 0.5, 4.0).unwrap();
    assert!((slope / sol.lambda - 1.0).abs() <= 0.02, "{slope}");
}

#[test]
fn report_bounds_are_consistent() {
    let cm = cm();
    let m = cartesian_to_coords(&cm).unwrap();
    let sol = solution();
    let res = residuals(&m, sol).unwrap();
    let rep = aposteriori_report(m.omega0, m.lambda0, sol, &res).unwrap();
    assert!(rep.certifying());
    for s in &rep.stages {
        let b = s.bound.unwrap();
        assert!(b.is_finite() && b <= s.last_distance.unwrap());
    }
    assert!(rep.surrogate.is_finite() && rep.surrogate >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn defect_on_the_cycle_ignores_phase(theta0 in 0.0f64..1.0) {
        let cm = cm();
        let orbit = Orbit::new(&cm, solution()).unwrap();
        let a = defect_norm(&orbit, 0.0, 0.0, 1.0, 64).unwrap();
        let b = defect_norm(&orbit, theta0, 0.0, 1.0, 64).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn orbit_and_integrator_agree(theta in 0.0f64..1.0, s in -0.1f64..0.1) {
        let cm = cm();
        let orbit = Orbit::new(&cm, solution()).unwrap();
        let tr = sdde_integrate(&cm, &orbit.history(theta, s), cm.h, 0.5, 2e-3).unwrap();
        for (i, x) in tr.x.iter().enumerate() {
            let (p, _) = orbit.point(theta, s, tr.t(i)).unwrap();
            prop_assert!((x[0] - p[0]).abs().max((x[1] - p[1]).abs()) <= 1e-5);
        }
    }
}
