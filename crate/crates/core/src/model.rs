//! Model definitions: the smooth cut-off, the coordinate model consumed by the
//! solvers, Cartesian models with a known conjugacy `K`, and the JSON format.

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::num::{gauss_legendre, solve2, Dual, Num};

/// Smallest accepted `|det DK|`.
pub const MIN_DET: f64 = 1e-8;
/// Gauss–Legendre nodes for the perturbation integral in the delayed argument.
const PERTURBATION_NODES: usize = 8;

const Y_VARS: [&str; 5] = ["u1", "u2", "v1", "v2", "eps"];
const COORD_VARS: [&str; 2] = ["th", "s"];
const X_VARS: [&str; 4] = ["x1", "x2", "y1", "y2"];
const R_VARS: [&str; 2] = ["x1", "x2"];

/// Even C-infinity bump: 1 on `|x| <= a1`, 0 on `|x| >= a2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub a1: f64,
    pub a2: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Self { a1: 0.5, a2: 1.0 }
    }
}

fn q(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

impl Cutoff {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        if !(a1.is_finite() && a2.is_finite() && 0.0 < a1 && a1 < a2) {
            return Err(Error::InvalidModel(format!("cutoff needs 0 < a1 < a2, got a1 = {a1}, a2 = {a2}")));
        }
        Ok(Self { a1, a2 })
    }

    fn u(&self, x: f64) -> f64 {
        ((self.a2 - x.abs()) / (self.a2 - self.a1)).clamp(0.0, 1.0)
    }

    pub fn phi(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.a1 {
            return 1.0;
        }
        if ax >= self.a2 {
            return 0.0;
        }
        let u = self.u(x);
        let (a, b) = (q(u), q(1.0 - u));
        a / (a + b)
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.a1 || ax >= self.a2 {
            return 0.0;
        }
        let u = self.u(x);
        let (a, b) = (q(u), q(1.0 - u));
        // q'(t) = q(t)/t^2 ; d phi/du = (q'(u) q(1-u) + q(u) q'(1-u)) / (q(u)+q(1-u))^2
        let dphi_du = a * b * (1.0 / (u * u) + 1.0 / ((1.0 - u) * (1.0 - u))) / ((a + b) * (a + b));
        let du_dx = -x.signum() / (self.a2 - self.a1);
        dphi_du * du_dx
    }

    /// The cut-off applied to any number type (jets, duals).
    pub fn phi_num<T: Num>(&self, x: &T) -> Result<T> {
        let x0 = x.value();
        let ax = x0.abs();
        if ax <= self.a1 {
            return Ok(x.lift(1.0));
        }
        if ax >= self.a2 {
            return Ok(x.lift(0.0));
        }
        let absx = if x0 < 0.0 { x.neg() } else { x.clone() };
        let u = absx.scale(-1.0).add_f(self.a2).scale(1.0 / (self.a2 - self.a1));
        let one_minus = u.scale(-1.0).add_f(1.0);
        let qa = u.lift(-1.0).div(&u)?.exp();
        let qb = u.lift(-1.0).div(&one_minus)?.exp();
        qa.div(&qa.add(&qb))
    }
}

/// Planar system `x' = X(x, y)` with delay `r(x)` and a conjugacy `K`
/// of the unperturbed flow to `(theta + omega0 t, s e^{lambda0 t})`.
#[derive(Clone, Debug)]
pub struct CartesianModel {
    pub omega0: f64,
    pub lambda0: f64,
    pub eps: f64,
    pub h: f64,
    pub cutoff: Cutoff,
    pub x: [Expr; 2],
    pub r: Expr,
    pub k: [Expr; 2],
}

impl CartesianModel {
    pub fn new(omega0: f64, lambda0: f64, eps: f64, h: f64, cutoff: Cutoff, x: [&str; 2], r: &str, k: [&str; 2]) -> Result<Self> {
        let m = Self {
            omega0,
            lambda0,
            eps,
            h,
            cutoff,
            x: [Expr::parse(x[0], &X_VARS)?, Expr::parse(x[1], &X_VARS)?],
            r: Expr::parse(r, &R_VARS)?,
            k: [Expr::parse(k[0], &COORD_VARS)?, Expr::parse(k[1], &COORD_VARS)?],
        };
        validate_scalars(omega0, lambda0, eps, h)?;
        Ok(m)
    }

    pub fn field<T: Num>(&self, x: &[T; 2], y: &[T; 2]) -> Result<[T; 2]> {
        let args = [x[0].clone(), x[1].clone(), y[0].clone(), y[1].clone()];
        Ok([self.x[0].eval(&args, &x[0])?, self.x[1].eval(&args, &x[0])?])
    }

    /// Right-hand side of the delay equation, `X(x, eps x_d)`.
    pub fn rhs(&self, x: [f64; 2], xd: [f64; 2]) -> Result<[f64; 2]> {
        self.field(&x, &[self.eps * xd[0], self.eps * xd[1]])
    }

    pub fn delay<T: Num>(&self, x: &[T; 2]) -> Result<T> {
        self.r.eval(&[x[0].clone(), x[1].clone()], &x[0])
    }

    pub fn k_eval<T: Num>(&self, th: &T, s: &T) -> Result<[T; 2]> {
        let args = [th.clone(), s.clone()];
        Ok([self.k[0].eval(&args, th)?, self.k[1].eval(&args, th)?])
    }

    /// `K` and its Jacobian `[[dK1/dth, dK1/ds], [dK2/dth, dK2/ds]]`.
    pub fn k_jacobian<T: Num>(&self, th: &T, s: &T) -> Result<([T; 2], [[T; 2]; 2])> {
        let kt = self.k_eval(&Dual::seeded(th.clone(), 1.0), &Dual::seeded(s.clone(), 0.0))?;
        let ks = self.k_eval(&Dual::seeded(th.clone(), 0.0), &Dual::seeded(s.clone(), 1.0))?;
        let [k1, k2] = kt;
        let [s1, s2] = ks;
        Ok(([k1.v, k2.v], [[k1.d, s1.d], [k2.d, s2.d]]))
    }

    /// `P(x, x_d, eps)` with `eps P = X(x, eps x_d) - X(x, 0)`; the `eps -> 0` limit is
    /// the directional derivative `D_y X(x, 0) x_d`.
    pub fn perturbation<T: Num>(&self, x: &[T; 2], xd: &[T; 2], eps: f64) -> Result<[T; 2]> {
        // eps P = int_0^1 D_y X(x, tau eps x_d) eps x_d dtau, free of the cancellation in the difference
        let zero = x[0].lift(0.0);
        let xs = [Dual::constant(x[0].clone()), Dual::constant(x[1].clone())];
        if eps == 0.0 {
            let y = [Dual { v: zero.clone(), d: xd[0].clone() }, Dual { v: zero, d: xd[1].clone() }];
            let [f0, f1] = self.field(&xs, &y)?;
            return Ok([f0.d, f1.d]);
        }
        let (nodes, weights) = gauss_legendre(PERTURBATION_NODES);
        let mut acc = [zero.clone(), zero];
        for (t, w) in nodes.iter().zip(&weights) {
            let tau = 0.5 * (t + 1.0) * eps;
            let y = [Dual { v: xd[0].scale(tau), d: xd[0].clone() }, Dual { v: xd[1].scale(tau), d: xd[1].clone() }];
            let [f0, f1] = self.field(&xs, &y)?;
            acc[0] = acc[0].add(&f0.d.scale(0.5 * w));
            acc[1] = acc[1].add(&f1.d.scale(0.5 * w));
        }
        Ok(acc)
    }

    /// Residual of the conjugacy equation `X(K, 0) - DK (omega0, lambda0 s)`.
    pub fn conjugacy_residual(&self, th: f64, s: f64) -> Result<[f64; 2]> {
        let (k, dk) = self.k_jacobian(&th, &s)?;
        let f = self.field(&k, &[0.0, 0.0])?;
        let ls = self.lambda0 * s;
        Ok([
            f[0] - (dk[0][0] * self.omega0 + dk[0][1] * ls),
            f[1] - (dk[1][0] * self.omega0 + dk[1][1] * ls),
        ])
    }

    pub fn to_json(&self) -> Value {
        json!({
            "type": "cartesian",
            "omega0": self.omega0,
            "lambda0": self.lambda0,
            "eps": self.eps,
            "h": self.h,
            "cutoff": {"a1": self.cutoff.a1, "a2": self.cutoff.a2},
            "X": [self.x[0].text(), self.x[1].text()],
            "r": self.r.text(),
            "K": [self.k[0].text(), self.k[1].text()],
        })
    }
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    /// `Y` over `(u1, u2, v1, v2, eps)` and `rho` over `(th, s)`.
    Coords { y: [Expr; 2], rho: Expr },
    /// `Y` and `rho` induced by a Cartesian system.
    Cartesian(CartesianModel),
}

/// The problem in `(theta, s)` coordinates.
#[derive(Clone, Debug)]
pub struct Model {
    pub omega0: f64,
    pub lambda0: f64,
    pub eps: f64,
    pub h: f64,
    pub cutoff: Cutoff,
    pub kind: ModelKind,
}

fn validate_scalars(omega0: f64, lambda0: f64, eps: f64, h: f64) -> Result<()> {
    let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::InvalidModel(msg.into())) };
    check(omega0.is_finite() && omega0 > 0.0, "omega0 must be positive")?;
    check(lambda0.is_finite() && lambda0 < 0.0, "lambda0 must be negative")?;
    check(eps.is_finite() && eps >= 0.0, "eps must be non-negative")?;
    check(h.is_finite() && h >= 0.0, "h must be non-negative")
}

/// Tolerance on the delay range check.
const DELAY_SLACK: f64 = 1e-12;

impl Model {
    pub fn coords(omega0: f64, lambda0: f64, eps: f64, h: f64, cutoff: Cutoff, y: [&str; 2], rho: &str) -> Result<Self> {
        validate_scalars(omega0, lambda0, eps, h)?;
        Ok(Self {
            omega0,
            lambda0,
            eps,
            h,
            cutoff,
            kind: ModelKind::Coords {
                y: [Expr::parse(y[0], &Y_VARS)?, Expr::parse(y[1], &Y_VARS)?],
                rho: Expr::parse(rho, &COORD_VARS)?,
            },
        })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        validate_scalars(self.omega0, self.lambda0, eps, self.h)?;
        let mut m = self.clone();
        m.eps = eps;
        if let ModelKind::Cartesian(c) = &mut m.kind {
            c.eps = eps;
        }
        Ok(m)
    }

    pub fn with_cutoff(&self, cutoff: Cutoff) -> Self {
        let mut m = self.clone();
        m.cutoff = cutoff;
        if let ModelKind::Cartesian(c) = &mut m.kind {
            c.cutoff = cutoff;
        }
        m
    }

    pub fn cartesian(&self) -> Option<&CartesianModel> {
        match &self.kind {
            ModelKind::Cartesian(c) => Some(c),
            ModelKind::Coords { .. } => None,
        }
    }

    /// The perturbation `Y(u, v, eps)` without cut-offs.
    pub fn y<T: Num>(&self, u: &[T; 2], v: &[T; 2], eps: f64) -> Result<[T; 2]> {
        match &self.kind {
            ModelKind::Coords { y, .. } => {
                let args = [u[0].clone(), u[1].clone(), v[0].clone(), v[1].clone(), u[0].lift(eps)];
                Ok([y[0].eval(&args, &u[0])?, y[1].eval(&args, &u[0])?])
            }
            ModelKind::Cartesian(cm) => {
                let (ku, dk) = cm.k_jacobian(&u[0], &u[1])?;
                let kv = cm.k_eval(&v[0], &v[1])?;
                let p = cm.perturbation(&ku, &kv, eps)?;
                solve2([[&dk[0][0], &dk[0][1]], [&dk[1][0], &dk[1][1]]], [&p[0], &p[1]], MIN_DET)
            }
        }
    }

    /// `rho = r o K` at `(th, s)`, without the cut-off.
    pub fn rho<T: Num>(&self, th: &T, s: &T) -> Result<T> {
        match &self.kind {
            ModelKind::Coords { rho, .. } => rho.eval(&[th.clone(), s.clone()], th),
            ModelKind::Cartesian(cm) => {
                let k = cm.k_eval(th, s)?;
                cm.delay(&k)
            }
        }
    }

    /// Real delay value, checked against `[0, h]`.
    pub fn rho_checked(&self, th: f64, s: f64) -> Result<f64> {
        let r = self.rho(&th, &s)?;
        if !(-DELAY_SLACK..=self.h + DELAY_SLACK).contains(&r) {
            return Err(Error::DelayRange { value: r, h: self.h });
        }
        Ok(r)
    }

    /// Extended delay `rho(th, s) phi(s)`.
    pub fn rho_bar<T: Num>(&self, th: &T, s: &T) -> Result<T> {
        if s.value().abs() >= self.cutoff.a2 {
            return Ok(s.lift(0.0));
        }
        Ok(self.rho(th, s)?.mul(&self.cutoff.phi_num(s)?))
    }

    /// Extended perturbation `Y(u, v) phi(u2) phi(v2)`; skips `Y` where the weight vanishes.
    pub fn y_bar<T: Num>(&self, u: &[T; 2], v: &[T; 2], eps: f64) -> Result<[T; 2]> {
        let w = self.cutoff.phi_num(&u[1])?.mul(&self.cutoff.phi_num(&v[1])?);
        if u[1].value().abs() >= self.cutoff.a2 || v[1].value().abs() >= self.cutoff.a2 {
            return Ok([w.lift(0.0), w.lift(0.0)]);
        }
        let y = self.y(u, v, eps)?;
        Ok([y[0].mul(&w), y[1].mul(&w)])
    }

    pub fn y_contains_division(&self) -> bool {
        match &self.kind {
            ModelKind::Coords { y, .. } => y.iter().any(|e| e.contains_division()),
            ModelKind::Cartesian(_) => false,
        }
    }

    /// Canonical JSON form (Cartesian models serialize their Cartesian data).
    pub fn to_json(&self) -> Value {
        match &self.kind {
            ModelKind::Cartesian(cm) => cm.to_json(),
            ModelKind::Coords { y, rho } => json!({
                "type": "coords",
                "omega0": self.omega0,
                "lambda0": self.lambda0,
                "eps": self.eps,
                "h": self.h,
                "cutoff": {"a1": self.cutoff.a1, "a2": self.cutoff.a2},
                "Y": [y[0].text(), y[1].text()],
                "rho": rho.text(),
            }),
        }
    }

    /// Content hash of the canonical model JSON (keys sorted, compact).
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(&self.to_json()).expect("model JSON serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Converts a Cartesian model to `(theta, s)` coordinates.
pub fn cartesian_to_coords(cm: &CartesianModel) -> Result<Model> {
    validate_scalars(cm.omega0, cm.lambda0, cm.eps, cm.h)?;
    // the Jacobian of K must be usable near the cycle
    for m in 0..16 {
        let th = m as f64 / 16.0;
        let (_, dk) = cm.k_jacobian(&th, &0.0)?;
        let det = dk[0][0] * dk[1][1] - dk[0][1] * dk[1][0];
        if det.abs() < MIN_DET {
            return Err(Error::SingularJacobian(det));
        }
    }
    Ok(Model {
        omega0: cm.omega0,
        lambda0: cm.lambda0,
        eps: cm.eps,
        h: cm.h,
        cutoff: cm.cutoff,
        kind: ModelKind::Cartesian(cm.clone()),
    })
}

/// Either flavour of model file.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Coords(Model),
    Cartesian(CartesianModel),
}

impl LoadedModel {
    pub fn into_model(self) -> Result<Model> {
        match self {
            LoadedModel::Coords(m) => Ok(m),
            LoadedModel::Cartesian(cm) => cartesian_to_coords(&cm),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            LoadedModel::Coords(m) => m.to_json(),
            LoadedModel::Cartesian(cm) => cm.to_json(),
        }
    }
}

fn schema(pointer: &str, msg: impl Into<String>) -> Error {
    Error::Schema { pointer: pointer.to_string(), msg: msg.into() }
}

fn get_number(obj: &Map<String, Value>, key: &str, default: Option<f64>) -> Result<f64> {
    match obj.get(key) {
        None => default.ok_or_else(|| schema(&format!("/{key}"), "missing required number")),
        Some(v) => v.as_f64().ok_or_else(|| schema(&format!("/{key}"), "expected a number")),
    }
}

fn get_expr(v: Option<&Value>, pointer: &str, vars: &[&str]) -> Result<Expr> {
    let text = v
        .ok_or_else(|| schema(pointer, "missing required expression"))?
        .as_str()
        .ok_or_else(|| schema(pointer, "expected an expression string"))?;
    Expr::parse(text, vars).map_err(|e| schema(pointer, e.to_string()))
}

fn get_pair(obj: &Map<String, Value>, key: &str, vars: &[&str]) -> Result<[Expr; 2]> {
    let ptr = format!("/{key}");
    let arr = obj
        .get(key)
        .ok_or_else(|| schema(&ptr, "missing required pair of expressions"))?
        .as_array()
        .ok_or_else(|| schema(&ptr, "expected an array of two expressions"))?;
    if arr.len() != 2 {
        return Err(schema(&ptr, format!("expected 2 expressions, found {}", arr.len())));
    }
    Ok([
        get_expr(arr.first(), &format!("{ptr}/0"), vars)?,
        get_expr(arr.get(1), &format!("{ptr}/1"), vars)?,
    ])
}

/// Parses and validates a model from JSON text.
pub fn parse_model(text: &str) -> Result<LoadedModel> {
    let v: Value = serde_json::from_str(text)?;
    let obj = v.as_object().ok_or_else(|| schema("", "expected a JSON object"))?;
    let kind = match obj.get("type") {
        None => "coords",
        Some(Value::String(s)) if s == "coords" || s == "cartesian" => s.as_str(),
        Some(_) => return Err(schema("/type", "expected \"coords\" or \"cartesian\"")),
    };
    let allowed: &[&str] = if kind == "coords" {
        &["type", "omega0", "lambda0", "eps", "h", "cutoff", "Y", "rho"]
    } else {
        &["type", "omega0", "lambda0", "eps", "h", "cutoff", "X", "r", "K"]
    };
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(schema(&format!("/{k}"), "unknown field"));
    }
    let omega0 = get_number(obj, "omega0", None)?;
    let lambda0 = get_number(obj, "lambda0", None)?;
    let eps = get_number(obj, "eps", None)?;
    let h = get_number(obj, "h", None)?;
    let cutoff = match obj.get("cutoff") {
        None => Cutoff::default(),
        Some(Value::Object(c)) => {
            if let Some(k) = c.keys().find(|k| *k != "a1" && *k != "a2") {
                return Err(schema(&format!("/cutoff/{k}"), "unknown field"));
            }
            let a1 = c.get("a1").map_or(Some(0.5), |v| v.as_f64()).ok_or_else(|| schema("/cutoff/a1", "expected a number"))?;
            let a2 = c.get("a2").map_or(Some(1.0), |v| v.as_f64()).ok_or_else(|| schema("/cutoff/a2", "expected a number"))?;
            Cutoff::new(a1, a2)?
        }
        Some(_) => return Err(schema("/cutoff", "expected an object")),
    };
    validate_scalars(omega0, lambda0, eps, h)?;
    if kind == "coords" {
        let y = get_pair(obj, "Y", &Y_VARS)?;
        let rho = get_expr(obj.get("rho"), "/rho", &COORD_VARS)?;
        let m = Model { omega0, lambda0, eps, h, cutoff, kind: ModelKind::Coords { y, rho } };
        if m.y_contains_division() {
            log::warn!("Y contains a division; keeping denominators away from zero is up to the model");
        }
        Ok(LoadedModel::Coords(m))
    } else {
        let x = get_pair(obj, "X", &X_VARS)?;
        let r = get_expr(obj.get("r"), "/r", &R_VARS)?;
        let k = get_pair(obj, "K", &COORD_VARS)?;
        let cm = CartesianModel { omega0, lambda0, eps, h, cutoff, x, r, k };
        spot_check_delay(&cm);
        Ok(LoadedModel::Cartesian(cm))
    }
}

/// Advisory grid check that `r o K` stays in `[0, h]` near the cycle.
fn spot_check_delay(cm: &CartesianModel) {
    for i in 0..32 {
        for j in 0..5 {
            let th = i as f64 / 32.0;
            let s = -0.5 + 0.25 * j as f64;
            let r = cm.k_eval(&th, &s).and_then(|k| cm.delay(&k));
            match r {
                Ok(r) if (-DELAY_SLACK..=cm.h + DELAY_SLACK).contains(&r) => {}
                Ok(r) => {
                    log::warn!("delay r(K({th}, {s})) = {r} lies outside [0, {}]", cm.h);
                    return;
                }
                Err(e) => {
                    log::warn!("delay spot check failed at ({th}, {s}): {e}");
                    return;
                }
            }
        }
    }
}

pub fn load_model(path: &std::path::Path) -> Result<LoadedModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

/// Pretty JSON with a trailing newline; the on-disk model format.
pub fn model_to_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("model JSON serializes");
    s.push('\n');
    s
}

/// The shipped Hopf fixture: `K(theta, s) = (1 + s)^(-1/2) (cos 2 pi theta, sin 2 pi theta)`.
pub const HOPF_FIXTURE: &str = include_str!("../fixtures/hopf_delay.json");
/// Null perturbation in coordinates.
pub const NULL_FIXTURE: &str = include_str!("../fixtures/null.json");
