//! Model parameterization: polynomial Malthusians, diffusion and immigration
//! constants, jump measures, and the coefficient functions of the culled
//! frequency SDE together with its generator evaluated on monomials.

use serde::{Deserialize, Serialize};

use crate::measures::{sc_coefficient, JumpMeasure, Kind, PushedMeasure};

/// `b(x) = Σ a⁽ᵏ⁾ xᵏ` for `x > 0` and `b(x) = 0` for `x ≤ 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolynomialMalthusian {
    coeffs: Vec<f64>,
}

impl PolynomialMalthusian {
    pub fn new(coeffs: Vec<f64>) -> Self {
        PolynomialMalthusian { coeffs }
    }

    pub fn zero() -> Self {
        PolynomialMalthusian::default()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `xᵏ`, zero past the stored degree.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Index of the highest nonzero coefficient; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&a| a != 0.0).unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&a| a == 0.0)
    }

    pub fn is_coefficientwise_nonnegative(&self) -> bool {
        self.coeffs.iter().all(|&a| a >= 0.0)
    }

    /// Value with the `x ≤ 0 ⇒ 0` convention.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.eval_polynomial(x)
        }
    }

    /// Plain polynomial value, no cutoff.
    pub fn eval_polynomial(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }
}

pub fn eval_malthusian(b: &PolynomialMalthusian, x: f64) -> f64 {
    b.eval(x)
}

/// Full parameterization of the two-type branching SDE with immigration
/// and competition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub c1: f64,
    pub c2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub b11: PolynomialMalthusian,
    pub b12: PolynomialMalthusian,
    pub b21: PolynomialMalthusian,
    pub b22: PolynomialMalthusian,
    pub mu1: JumpMeasure,
    pub mu2: JumpMeasure,
    pub nu: JumpMeasure,
}

impl ModelParams {
    pub fn null() -> Self {
        ModelParams::default()
    }

    /// Diffusion-only model with `c₁ = c₂ = c`.
    pub fn pure_diffusion(c: f64) -> Self {
        ModelParams {
            c1: c,
            c2: c,
            ..ModelParams::default()
        }
    }

    pub fn mu(&self, kind: Kind) -> &JumpMeasure {
        match kind {
            Kind::One => &self.mu1,
            Kind::Two => &self.mu2,
        }
    }

    /// `m̃`, the largest degree among the four Malthusians.
    pub fn max_degree(&self) -> usize {
        [&self.b11, &self.b12, &self.b21, &self.b22]
            .iter()
            .map(|b| b.degree())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

pub fn validate_params(params: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: &str| {
        out.push(Violation {
            field: field.to_string(),
            message: message.to_string(),
        })
    };
    for (field, value) in [
        ("c1", params.c1),
        ("c2", params.c2),
        ("eta1", params.eta1),
        ("eta2", params.eta2),
    ] {
        if !value.is_finite() || value < 0.0 {
            push(field, "must be a finite nonnegative constant");
        }
    }
    for (field, b) in [
        ("b11", &params.b11),
        ("b12", &params.b12),
        ("b21", &params.b21),
        ("b22", &params.b22),
    ] {
        if b.coeffs().iter().any(|a| !a.is_finite()) {
            push(field, "coefficients must be finite");
        }
    }
    for (field, b) in [("b12", &params.b12), ("b21", &params.b21)] {
        if !b.is_coefficientwise_nonnegative() {
            push(field, "off-diagonal Malthusian must be nonnegative");
        }
    }
    for (field, mu) in [("mu1", &params.mu1), ("mu2", &params.mu2), ("nu", &params.nu)] {
        for (i, atom) in mu.atoms().iter().enumerate() {
            if let Err(e) = atom.check() {
                push(&format!("{field}[{i}]"), &e.to_string());
            }
        }
    }
    out
}

/// Values of the seven coefficient functions of the culled frequency SDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermBundle {
    pub d_tilde: f64,
    pub s: f64,
    pub s_c: f64,
    pub m: f64,
    pub m_c1: f64,
    pub m_c2: f64,
    pub sigma: f64,
}

impl TermBundle {
    /// `D̃ + S + S_c + m + m_c¹ + m_c²`, the drift against compensated jumps.
    pub fn compensated_drift(&self) -> f64 {
        self.d_tilde + self.s + self.s_c + self.m + self.m_c1 + self.m_c2
    }
}

/// The model frozen at a population size `z`, with every measure integral
/// precomputed.
#[derive(Debug, Clone)]
pub struct FrequencyModel {
    pub params: ModelParams,
    pub z: f64,
    pub pushed_mu1: PushedMeasure,
    pub pushed_mu2: PushedMeasure,
    pub pushed_nu: PushedMeasure,
    sc: f64,
    mc1: f64,
    mc2: f64,
    /// `∫ w₂ dμ₂ − ∫ w₁ dμ₁`.
    own_mean_gap: f64,
}

impl FrequencyModel {
    pub fn new(params: &ModelParams, z: f64) -> Self {
        assert!(z > 0.0, "population size must be positive");
        FrequencyModel {
            pushed_mu1: params.mu1.pushforward(z),
            pushed_mu2: params.mu2.pushforward(z),
            pushed_nu: params.nu.pushforward(z),
            sc: sc_coefficient(&params.mu1, &params.mu2, z),
            mc1: params.mu1.mc_coefficient(z, Kind::One),
            mc2: params.mu2.mc_coefficient(z, Kind::Two),
            own_mean_gap: params.mu2.mean_component(Kind::Two) - params.mu1.mean_component(Kind::One),
            params: params.clone(),
            z,
        }
    }

    pub fn d_tilde(&self, r: f64) -> f64 {
        let p = &self.params;
        let z = self.z;
        let q = 1.0 - r;
        (p.b11.eval(z * r) * q - p.b22.eval(z * q) * r + p.b12.eval(z * q) * q - p.b21.eval(z * r) * r) / z
    }

    pub fn selection(&self, r: f64) -> f64 {
        2.0 / self.z * (self.params.c2 - self.params.c1) * r * (1.0 - r)
    }

    pub fn immigration(&self, r: f64) -> f64 {
        (self.params.eta1 * (1.0 - r) - self.params.eta2 * r) / self.z
    }

    pub fn sigma_squared(&self, r: f64) -> f64 {
        let p = &self.params;
        let v = 2.0 / self.z * r * (1.0 - r) * (p.c1 * (1.0 - r) + p.c2 * r);
        v.max(0.0)
    }

    pub fn terms(&self, r: f64) -> TermBundle {
        let rq = r * (1.0 - r);
        TermBundle {
            d_tilde: self.d_tilde(r),
            s: self.selection(r),
            s_c: self.sc * rq,
            m: self.immigration(r),
            m_c1: -r * r * self.mc1,
            m_c2: (1.0 - r) * (1.0 - r) * self.mc2,
            sigma: self.sigma_squared(r).sqrt(),
        }
    }

    /// Drift to pair with raw (uncompensated) jump events of all three
    /// measures: the compensated drift minus the mean rate of change carried
    /// by the raw `μ₁` and `μ₂` events. It reduces to
    /// `D̃ + S + m + r(1−r)(∫w₂dμ₂ − ∫w₁dμ₁)`.
    pub fn raw_event_drift(&self, r: f64) -> f64 {
        self.d_tilde(r) + self.selection(r) + self.immigration(r) + r * (1.0 - r) * self.own_mean_gap
    }

    /// Mean rate of change of `r` carried by raw `μ₁` and `μ₂` events,
    /// `rz∫Δ dT₂μ₁ + (1−r)z∫Δ dT₂μ₂` with `Δ = (1−r)u₁ − r u₂`.
    pub fn raw_jump_mean(&self, r: f64) -> f64 {
        let z = self.z;
        let mean = |p: &PushedMeasure| -> f64 { p.atoms.iter().map(|a| a.mass * ((1.0 - r) * a.u1 - r * a.u2)).sum() };
        r * z * mean(&self.pushed_mu1) + (1.0 - r) * z * mean(&self.pushed_mu2)
    }

    /// `𝓛^{(z)} rⁿ` with jump integrals taken against the pushed-forward
    /// measures.
    pub fn generator_on_monomial(&self, n: u32, r: f64) -> f64 {
        assert!(n >= 1, "monomial degree must be at least 1");
        let nf = n as f64;
        let rn = r.powi(n as i32);
        let d1 = nf * r.powi(n as i32 - 1);
        let d2 = if n >= 2 {
            nf * (nf - 1.0) * r.powi(n as i32 - 2)
        } else {
            0.0
        };
        let drift = (self.d_tilde(r) + self.selection(r) + self.immigration(r)) * d1;
        let diffusion = 0.5 * self.sigma_squared(r) * d2;
        let z = self.z;

        let landed = |u1: f64, rest: f64| (u1 + r * rest).powi(n as i32);
        let mu1: f64 = self
            .pushed_mu1
            .atoms
            .iter()
            .map(|a| a.mass * (landed(a.u1, a.rest) - rn - (1.0 - r) * a.u1 / a.rest * d1))
            .sum();
        let mu2: f64 = self
            .pushed_mu2
            .atoms
            .iter()
            .map(|a| a.mass * (landed(a.u1, a.rest) - rn + r * a.u2 / a.rest * d1))
            .sum();
        let nu: f64 = self
            .pushed_nu
            .atoms
            .iter()
            .map(|a| a.mass * (landed(a.u1, a.rest) - rn))
            .sum();
        drift + diffusion + r * z * mu1 + (1.0 - r) * z * mu2 + nu
    }
}

pub fn term_bundle(params: &ModelParams, z: f64, r: f64) -> TermBundle {
    FrequencyModel::new(params, z).terms(r)
}

pub fn generator_on_monomial(params: &ModelParams, z: f64, n: u32, r: f64) -> f64 {
    FrequencyModel::new(params, z).generator_on_monomial(n, r)
}
