//! Large-population limit of the frequency process: the limit ODE, its
//! equilibria, closed-form analyses of the linear and logistic families, and
//! the Monte Carlo convergence experiment.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::Kind;
use crate::model::{ModelParams, PolynomialMalthusian};
use crate::simulate::{grid_end, Estimate, EventKind, FrequencySimulator, PathConfig, Recording, Trajectory};

const GRID_CELLS: usize = 1024;
const BISECT_TOL: f64 = 1e-12;
const DEDUP_TOL: f64 = 1e-9;
const FLAT_SLOPE: f64 = 1e-9;
const SIDE_STEP: f64 = 1e-6;
const ZERO_VALUE: f64 = 1e-12;

/// Limits `β_ij(r)` of `b_ij(zr)/z` and the two cross-jump means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub beta11: PolynomialMalthusian,
    pub beta12: PolynomialMalthusian,
    pub beta21: PolynomialMalthusian,
    pub beta22: PolynomialMalthusian,
    /// `∫ w₁ μ₂(dw)`.
    pub j21: f64,
    /// `∫ w₂ μ₁(dw)`.
    pub j12: f64,
}

impl LimitParams {
    /// Linear family reduced to `d₁ r(1−r) + d₂(1−r)² − d₃ r²`.
    pub fn linear(d1: f64, d2: f64, d3: f64) -> Self {
        LimitParams {
            beta11: PolynomialMalthusian::new(vec![0.0, d1]),
            beta12: PolynomialMalthusian::new(vec![0.0, d2]),
            beta21: PolynomialMalthusian::new(vec![0.0, d3]),
            ..LimitParams::default()
        }
    }

    /// Logistic family reduced to `r(1−r)(d₁ r − d₂)`.
    pub fn logistic(d1: f64, d2: f64) -> Self {
        LimitParams {
            beta11: PolynomialMalthusian::new(vec![0.0, -d2, d1]),
            ..LimitParams::default()
        }
    }

    /// Structural checks a limit of a valid model satisfies.
    pub fn validate(&self) -> Result<()> {
        if !self.beta12.is_coefficientwise_nonnegative() || !self.beta21.is_coefficientwise_nonnegative() {
            return Err(Error::arg("beta", "cross terms must be coefficientwise nonnegative"));
        }
        if !(self.j12 >= 0.0 && self.j21 >= 0.0) {
            return Err(Error::arg("j", "cross-jump means must be nonnegative"));
        }
        Ok(())
    }
}

/// The family `z ↦ b^{(z)}` a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// `b_ij^{(z)}(x) = a_ij x`.
    Linear,
    /// `b_ii^{(z)}(x) = c_ii x²/z + a_ii x`, `b_ij ≡ 0`, and `μ_i` does not
    /// charge the other coordinate.
    Logistic,
}

/// A model indexed by `z`. `base` is the member at `z = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFamily {
    pub base: ModelParams,
    pub scaling: Scaling,
}

impl ModelFamily {
    pub fn new(base: ModelParams, scaling: Scaling) -> Result<Self> {
        check_family(&base, scaling)?;
        Ok(ModelFamily { base, scaling })
    }

    pub fn at(&self, z: f64) -> ModelParams {
        let mut p = self.base.clone();
        if self.scaling == Scaling::Logistic {
            for b in [&mut p.b11, &mut p.b22] {
                let (a, c) = (b.coeff(1), b.coeff(2));
                *b = PolynomialMalthusian::new(vec![0.0, a, c / z]);
            }
        }
        p
    }

    pub fn limit(&self) -> LimitParams {
        limit_of(&self.base, self.scaling)
    }
}

fn check_family(params: &ModelParams, scaling: Scaling) -> Result<()> {
    let named = [
        ("b11", &params.b11),
        ("b12", &params.b12),
        ("b21", &params.b21),
        ("b22", &params.b22),
    ];
    let mismatch = |msg: String| Err(Error::ScalingMismatch(msg));
    match scaling {
        Scaling::Linear => {
            for (name, b) in named {
                if b.coeff(0) != 0.0 || b.degree() > 1 {
                    return mismatch(format!("{name} must have the form [0, a] in the linear family"));
                }
            }
        }
        Scaling::Logistic => {
            for (name, b) in [named[0], named[3]] {
                if b.coeff(0) != 0.0 || b.degree() > 2 {
                    return mismatch(format!("{name} must have the form [0, a, c] in the logistic family"));
                }
            }
            for (name, b) in [named[1], named[2]] {
                if !b.is_zero() {
                    return mismatch(format!("{name} must vanish in the logistic family"));
                }
            }
            if params.mu1.charges(Kind::Two) {
                return mismatch("mu1 must not charge the w2 coordinate in the logistic family".into());
            }
            if params.mu2.charges(Kind::One) {
                return mismatch("mu2 must not charge the w1 coordinate in the logistic family".into());
            }
        }
    }
    Ok(())
}

fn limit_of(params: &ModelParams, scaling: Scaling) -> LimitParams {
    let trimmed =
        |b: &PolynomialMalthusian, deg: usize| PolynomialMalthusian::new((0..=deg).map(|k| b.coeff(k)).collect());
    let deg = match scaling {
        Scaling::Linear => 1,
        Scaling::Logistic => 2,
    };
    LimitParams {
        beta11: trimmed(&params.b11, deg),
        beta12: trimmed(&params.b12, 1),
        beta21: trimmed(&params.b21, 1),
        beta22: trimmed(&params.b22, deg),
        j21: params.mu2.mean_component(Kind::One),
        j12: params.mu1.mean_component(Kind::Two),
    }
}

/// Limit coefficients of a model read as the `z = 1` member of `scaling`.
pub fn limit_params_from_model(params: &ModelParams, scaling: Scaling) -> Result<LimitParams> {
    check_family(params, scaling)?;
    Ok(limit_of(params, scaling))
}

/// Right-hand side of the limit ODE.
pub fn limit_rhs(lp: &LimitParams, r: f64) -> f64 {
    let q = 1.0 - r;
    lp.beta11.eval_polynomial(r) * q - lp.beta22.eval_polynomial(q) * r + lp.beta12.eval_polynomial(q) * q
        - lp.beta21.eval_polynomial(r) * r
        + q * q * lp.j21
        - r * r * lp.j12
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(acc: &mut Vec<f64>, p: &[f64], sign: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, x) in acc.iter_mut().zip(p) {
        *a += sign * x;
    }
}

/// `b(1 − r)` as a polynomial in `r`.
fn reflect(b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; b.len()];
    let mut power = vec![1.0];
    for &c in b {
        poly_add(&mut out, &power, c);
        power = poly_mul(&power, &[1.0, -1.0]);
    }
    out
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_derivative(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect()
}

/// Power-basis coefficients `[c₀, c₁, …]` of the limit RHS, trailing zeros
/// trimmed.
pub fn rhs_polynomial(lp: &LimitParams) -> Vec<f64> {
    let q = [1.0, -1.0];
    let r = [0.0, 1.0];
    let mut out = Vec::new();
    poly_add(&mut out, &poly_mul(lp.beta11.coeffs(), &q), 1.0);
    poly_add(&mut out, &poly_mul(&reflect(lp.beta22.coeffs()), &r), -1.0);
    poly_add(&mut out, &poly_mul(&reflect(lp.beta12.coeffs()), &q), 1.0);
    poly_add(&mut out, &poly_mul(lp.beta21.coeffs(), &r), -1.0);
    poly_add(&mut out, &[lp.j21, -2.0 * lp.j21, lp.j21], 1.0);
    poly_add(&mut out, &[0.0, 0.0, lp.j12], -1.0);
    while out.last() == Some(&0.0) {
        out.pop();
    }
    out
}

/// RK4 on the grid `k·dt` (last step snapped to `horizon`), clamped to
/// `[0, 1]` with every clamp logged.
pub fn integrate(lp: &LimitParams, r0: f64, horizon: f64, dt: f64) -> Result<Trajectory<f64>> {
    if !(0.0..=1.0).contains(&r0) {
        return Err(Error::arg("r0", format!("{r0} is outside [0, 1]")));
    }
    if !(dt > 0.0 && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::arg("dt", "need dt > 0 and a finite positive horizon"));
    }
    let f = |r: f64| limit_rhs(lp, r);
    let mut path = Trajectory::start(r0);
    let mut r = r0;
    let mut t = 0.0;
    let mut k = 0u64;
    while t < horizon {
        k += 1;
        let end = grid_end(k, dt, horizon);
        let h = end - t;
        let k1 = f(r);
        let k2 = f(r + 0.5 * h * k1);
        let k3 = f(r + 0.5 * h * k2);
        let k4 = f(r + h * k3);
        let next = r + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        r = if next < 0.0 {
            path.log(end, EventKind::Clamp, -next);
            0.0
        } else if next > 1.0 {
            path.log(end, EventKind::Clamp, next - 1.0);
            1.0
        } else {
            next
        };
        t = end;
        path.push(t, r);
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Semistable,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Semistable => "semistable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub location: f64,
    pub stability: Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// Sorted by location; empty when `degenerate`.
    pub equilibria: Vec<Equilibrium>,
    pub case_label: Option<String>,
    /// The RHS vanishes identically.
    pub degenerate: bool,
}

impl EquilibriumReport {
    fn new(mut equilibria: Vec<Equilibrium>, case_label: Option<&str>) -> Self {
        equilibria.sort_by(|a, b| a.location.total_cmp(&b.location));
        EquilibriumReport {
            equilibria,
            case_label: case_label.map(str::to_owned),
            degenerate: false,
        }
    }

    fn degenerate(case_label: Option<&str>) -> Self {
        EquilibriumReport {
            equilibria: Vec::new(),
            case_label: case_label.map(str::to_owned),
            degenerate: true,
        }
    }

    pub fn interior(&self) -> impl Iterator<Item = &Equilibrium> {
        self.equilibria.iter().filter(|e| e.location > 0.0 && e.location < 1.0)
    }

    /// One line per equilibrium, `location stability`, after an optional
    /// `case <label>` line.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        if let Some(label) = &self.case_label {
            let _ = writeln!(out, "case {label}");
        }
        if self.degenerate {
            out.push_str("degenerate: rhs vanishes identically\n");
        }
        for e in &self.equilibria {
            let _ = writeln!(out, "{} {}", e.location, e.stability.as_str());
        }
        out
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sign-change roots of `f` on a uniform grid over `[0, 1]`, plus exact
/// zeros at grid nodes.
fn bracketed_roots(f: impl Fn(f64) -> f64 + Copy) -> Vec<f64> {
    let xs: Vec<f64> = (0..=GRID_CELLS).map(|i| i as f64 / GRID_CELLS as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();
    for i in 0..GRID_CELLS {
        if fs[i] == 0.0 {
            roots.push(xs[i]);
        } else if fs[i] * fs[i + 1] < 0.0 {
            roots.push(bisect(f, xs[i], xs[i + 1]));
        }
    }
    if fs[GRID_CELLS] == 0.0 {
        roots.push(1.0);
    }
    roots
}

fn classify(p: &[f64], dp: &[f64], x: f64) -> Stability {
    let slope = poly_eval(dp, x);
    if slope < -FLAT_SLOPE {
        return Stability::Stable;
    }
    if slope > FLAT_SLOPE {
        return Stability::Unstable;
    }
    let left = if x > 0.0 {
        poly_eval(p, (x - SIDE_STEP).max(0.0))
    } else {
        f64::NAN
    };
    let right = if x < 1.0 {
        poly_eval(p, (x + SIDE_STEP).min(1.0))
    } else {
        f64::NAN
    };
    match (left.is_nan(), right.is_nan()) {
        // at 0 only the right side exists: inward flow means stable
        (true, false) if right < 0.0 => Stability::Stable,
        (true, false) if right > 0.0 => Stability::Unstable,
        (false, true) if left > 0.0 => Stability::Stable,
        (false, true) if left < 0.0 => Stability::Unstable,
        (false, false) if left > 0.0 && right < 0.0 => Stability::Stable,
        (false, false) if left < 0.0 && right > 0.0 => Stability::Unstable,
        _ => Stability::Semistable,
    }
}

/// All equilibria in `[0, 1]` located numerically, with stability read off
/// the derivative or, where it is flat, the sign of the RHS on either side.
pub fn find_equilibria(lp: &LimitParams) -> EquilibriumReport {
    let p = rhs_polynomial(lp);
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale <= 1e-14 {
        return EquilibriumReport::degenerate(None);
    }
    let dp = poly_derivative(&p);
    let f = |x: f64| poly_eval(&p, x);
    let mut candidates = bracketed_roots(f);
    // even-multiplicity roots do not change sign; look for them at
    // critical points where the RHS is numerically zero
    if !dp.is_empty() {
        for c in bracketed_roots(|x| poly_eval(&dp, x)) {
            if f(c).abs() <= ZERO_VALUE * scale.max(1.0) {
                candidates.push(c);
            }
        }
    }
    for x in [0.0, 1.0] {
        if f(x).abs() <= ZERO_VALUE * scale.max(1.0) {
            candidates.push(x);
        }
    }
    candidates.sort_by(f64::total_cmp);
    let mut roots: Vec<f64> = Vec::new();
    for x in candidates {
        match roots.last_mut() {
            Some(last) if x - *last <= DEDUP_TOL => {
                // prefer exact boundary points, then the smaller residual
                if x == 0.0 || x == 1.0 || (*last != 0.0 && f(x).abs() < f(*last).abs()) {
                    *last = x;
                }
            }
            _ => roots.push(x),
        }
    }
    let equilibria = roots
        .into_iter()
        .map(|x| Equilibrium {
            location: x,
            stability: classify(&p, &dp, x),
        })
        .collect();
    EquilibriumReport::new(equilibria, None)
}

/// `(d₁, d₂, d₃)` of a limit from the linear family.
pub fn linear_coefficients(lp: &LimitParams) -> (f64, f64, f64) {
    (
        lp.beta11.coeff(1) - lp.beta22.coeff(1),
        lp.beta12.coeff(1) + lp.j21,
        lp.beta21.coeff(1) + lp.j12,
    )
}

/// `(d₁, d₂)` of a limit from the logistic family.
pub fn logistic_coefficients(lp: &LimitParams) -> (f64, f64) {
    (
        lp.beta11.coeff(2) + lp.beta22.coeff(2),
        lp.beta22.coeff(2) - lp.beta11.coeff(1) + lp.beta22.coeff(1),
    )
}

fn eq(location: f64, stability: Stability) -> Equilibrium {
    Equilibrium { location, stability }
}

/// Equilibria of `d₁ r(1−r) + d₂(1−r)² − d₃ r²` by the case table for
/// `d₂, d₃ ≥ 0`. Other inputs fall through to the quadratic formula without
/// a case label.
///
/// With `A = d₂ − d₁ − d₃ ≠ 0` the roots are
/// `(2d₂ − d₁ ± √(d₁² + 4d₂d₃)) / (2A)`; the RHS slope at each is `±√·`, so
/// the root taken with the minus sign is the stable one.
pub fn linear_case_closed_form(d1: f64, d2: f64, d3: f64) -> EquilibriumReport {
    use Stability::*;
    let a = d2 - d1 - d3;
    let scale = d1.abs() + d2.abs() + d3.abs();
    if scale == 0.0 {
        return EquilibriumReport::degenerate(None);
    }
    let nonneg = d2 >= 0.0 && d3 >= 0.0;
    if a.abs() <= 1e-12 * scale {
        // linear RHS (d₁ − 2d₂) r + d₂ with root d₂ / (2d₂ − d₁)
        let slope = d1 - 2.0 * d2;
        if slope == 0.0 {
            return EquilibriumReport::new(Vec::new(), None);
        }
        let root = d2 / (2.0 * d2 - d1);
        let stability = if slope < 0.0 { Stable } else { Unstable };
        let label = if !nonneg {
            None
        } else if d2 == 0.0 {
            Some("2a")
        } else if d3 == 0.0 {
            Some("2b")
        } else {
            Some("2c")
        };
        let root = match label {
            Some("2a") => 0.0,
            Some("2b") => 1.0,
            _ => root,
        };
        let found = if (0.0..=1.0).contains(&root) {
            vec![eq(root, stability)]
        } else {
            Vec::new()
        };
        return EquilibriumReport::new(found, label);
    }
    if nonneg {
        let disc = (d1 * d1 + 4.0 * d2 * d3).sqrt();
        let stable_root = (2.0 * d2 - d1 - disc) / (2.0 * a);
        let (found, label) = match (d2 == 0.0, d3 == 0.0) {
            (true, true) if d1 < 0.0 => (vec![eq(0.0, Stable), eq(1.0, Unstable)], "1a"),
            (true, true) => (vec![eq(0.0, Unstable), eq(1.0, Stable)], "1b"),
            (true, false) if d1 <= 0.0 => (vec![eq(0.0, Stable)], "1c"),
            (false, true) if d1 >= 0.0 => (vec![eq(1.0, Stable)], "1d"),
            (true, false) => (vec![eq(0.0, Unstable), eq(d1 / (d1 + d3), Stable)], "1e"),
            (false, true) => (vec![eq(1.0, Unstable), eq(d2 / (d2 - d1), Stable)], "1f"),
            (false, false) => (vec![eq(stable_root, Stable)], "1g"),
        };
        return EquilibriumReport::new(found, Some(label));
    }
    // unlabeled: both quadratic roots, kept when they lie in [0, 1]
    let disc2 = d1 * d1 + 4.0 * d2 * d3;
    if disc2 < 0.0 {
        return EquilibriumReport::new(Vec::new(), None);
    }
    let disc = disc2.sqrt();
    let mut found = Vec::new();
    for (sign, stability) in [(-1.0, Stable), (1.0, Unstable)] {
        let root = (2.0 * d2 - d1 + sign * disc) / (2.0 * a);
        let st = if disc <= FLAT_SLOPE { Semistable } else { stability };
        if (0.0..=1.0).contains(&root)
            && !found
                .iter()
                .any(|e: &Equilibrium| (e.location - root).abs() <= DEDUP_TOL)
        {
            found.push(eq(root, st));
        }
    }
    EquilibriumReport::new(found, None)
}

/// Equilibria of `r(1−r)(d₁ r − d₂)`: the boundary points always, and the
/// interior point `d₂/d₁` when `d₁d₂ > 0` and `|d₁| > |d₂|`.
pub fn logistic_case_closed_form(d1: f64, d2: f64) -> EquilibriumReport {
    use Stability::*;
    if d1 == 0.0 && d2 == 0.0 {
        return EquilibriumReport::degenerate(None);
    }
    let by_slope = |slope: f64, flat: Stability| {
        if slope < 0.0 {
            Stable
        } else if slope > 0.0 {
            Unstable
        } else {
            flat
        }
    };
    // flat boundaries: near 0 the RHS is d₁r², near 1 it is −d₁(1−r)²
    let flat = if d1 < 0.0 { Stable } else { Unstable };
    let mut found = vec![eq(0.0, by_slope(-d2, flat)), eq(1.0, by_slope(-(d1 - d2), flat))];
    let interior = d1 * d2 > 0.0 && d1.abs() > d2.abs();
    let label = if interior {
        let stability = if d2 < 0.0 { Stable } else { Unstable };
        found.push(eq(d2 / d1, stability));
        if d2 < 0.0 {
            "logistic-stable"
        } else {
            "logistic-unstable"
        }
    } else {
        "logistic-none"
    };
    EquilibriumReport::new(found, Some(label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    /// `(r, rhs(r))` on a uniform grid including both ends.
    pub samples: Vec<(f64, f64)>,
    pub report: EquilibriumReport,
}

pub fn phase_diagram(lp: &LimitParams, grid_size: usize) -> Result<PhaseDiagram> {
    if grid_size < 2 {
        return Err(Error::arg("grid_size", "need at least 2 points"));
    }
    let samples = (0..grid_size)
        .map(|i| {
            let r = i as f64 / (grid_size - 1) as f64;
            (r, limit_rhs(lp, r))
        })
        .collect();
    Ok(PhaseDiagram {
        samples,
        report: find_equilibria(lp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub z: f64,
    /// Estimate of `E[sup_{t ≤ T} |R^{(z)}_t − R^{(∞)}_t|²]` over the grid.
    pub sup_sq: Estimate,
    pub clamps: usize,
}

/// For each `z`, the mean of the squared sup-distance between culled
/// frequency paths and the RK4 limit path, both read on the `cfg.dt` grid up
/// to `cfg.horizon`. Entry `s` of `z_list` uses stream sub-index `s`.
pub fn large_population_experiment(
    family: &ModelFamily,
    r0: f64,
    z_list: &[f64],
    cfg: &PathConfig,
) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let limit = integrate(&family.limit(), r0, cfg.horizon, cfg.dt)?;
    z_list
        .iter()
        .enumerate()
        .map(|(s, &z)| {
            let sim = FrequencySimulator::new(&family.at(z), z)?;
            let paths = sim.ensemble(r0, cfg, Recording::Steps, s as u64)?;
            let sups: Vec<f64> = paths
                .par_iter()
                .map(|path| {
                    path.values
                        .iter()
                        .zip(&limit.values)
                        .map(|(a, b)| (a - b) * (a - b))
                        .fold(0.0, f64::max)
                })
                .collect();
            Ok(ConvergenceRow {
                z,
                sup_sq: Estimate::from_samples(sups)?,
                clamps: paths.iter().map(|p| p.clamp_count()).sum(),
            })
        })
        .collect()
}
