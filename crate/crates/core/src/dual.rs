//! The moment-dual block-counting chain on `ℕ₀ ∪ {†}`.
//!
//! [`build_rates`] assembles the transition-rate table from the model's
//! polynomial coefficients and the pushed-forward jump measures, rejecting
//! any negative off-diagonal rate. The table extends itself lazily when a
//! simulated chain climbs past the rows already built, up to a hard cap.
//!
//! Two checks tie the chain to the frequency process: an exact one,
//! [`generator_identity_residual`], comparing the generator applied to `rⁿ`
//! with `Σ q_{nm}(rᵐ − rⁿ) − q_{n†} rⁿ`, and a Monte Carlo one,
//! [`duality_check`], comparing `E[R_tⁿ]` with `E[r^{N_t}]`.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Kind, PushedMeasure};
use crate::model::{FrequencyModel, ModelParams};
use crate::simulate::{moment_estimate, Estimate, FrequencySimulator, PathConfig, Recording};
use crate::streams::{path_rng, stream_id, Domain};

/// Rates above `-NEGATIVE_SLACK · scale` are rounding noise and stored as 0.
const NEGATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualState {
    Count(usize),
    Dagger,
}

impl DualState {
    /// `H(r, ·)`: `rⁿ` on counts, 0 at the cemetery.
    pub fn duality_function(&self, r: f64) -> f64 {
        match *self {
            DualState::Count(n) => r.powi(n as i32),
            DualState::Dagger => 0.0,
        }
    }

    pub fn is_absorbing(&self) -> bool {
        matches!(self, DualState::Count(0) | DualState::Dagger)
    }
}

impl fmt::Display for DualState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DualState::Count(n) => write!(f, "{n}"),
            DualState::Dagger => f.write_str("dagger"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateViolation {
    pub n: usize,
    pub m: DualState,
    pub rate: f64,
}

/// Negative off-diagonal rates found while building the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityViolation {
    pub violations: Vec<RateViolation>,
}

impl fmt::Display for PositivityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "negative dual rates:")?;
        for v in self.violations.iter().take(8) {
            write!(f, " q({}, {}) = {:e};", v.n, v.m, v.rate)?;
        }
        if self.violations.len() > 8 {
            write!(f, " and {} more", self.violations.len() - 8)?;
        }
        Ok(())
    }
}

impl std::error::Error for PositivityViolation {}

/// Off-diagonal rates out of a single state `n ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualRow {
    /// `down[m]` is `q_{n,m}` for `0 ≤ m < n`.
    pub down: Vec<f64>,
    /// `up[j − 1]` is `q_{n,n+j}` for `1 ≤ j ≤ max(m̃, 1)`.
    pub up: Vec<f64>,
    pub kill: f64,
    pub total: f64,
}

/// `θ_k` for `k ≥ 1`, from the polynomial coefficients of the Malthusians.
pub fn theta_k(params: &ModelParams, z: f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let zp = |e: usize| z.powi(e as i32 - 1);
    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
    let (b11, b12, b21, b22) = (&params.b11, &params.b12, &params.b21, &params.b22);
    let (m11, m12, m21, m22) = (b11.degree(), b12.degree(), b21.degree(), b22.degree());
    let mut theta = 0.0;
    if k < m11 {
        theta += b11.coeff(k + 1) * z.powi(k as i32);
    }
    if k <= m11 {
        theta -= b11.coeff(k) * zp(k);
    }
    if k <= m21 {
        theta -= b21.coeff(k) * zp(k);
    }
    if k <= m22 {
        let s: f64 = (k..=m22).map(|l| binomial(l, k) * b22.coeff(l) * zp(l)).sum();
        theta += sign * s;
    }
    if k < m12 {
        let s: f64 = (k + 1..=m12)
            .map(|l| binomial(l + 1, k + 1) * b12.coeff(l) * zp(l))
            .sum();
        theta += sign * s;
    }
    if k <= m12 {
        theta += sign * b12.coeff(k) * zp(k);
    }
    theta
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64)
}

/// `C(n,k) λ_{n,k}` for `k = 0..=n` over one pushed measure, in log space
/// when the binomials overflow.
fn weighted_lambdas(measure: &PushedMeasure, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut choose = vec![1.0f64; n + 1];
    for k in 0..n {
        choose[k + 1] = choose[k] * (n - k) as f64 / (k + 1) as f64;
    }
    let overflow = choose.iter().any(|c| !c.is_finite());
    let ln_choose: Vec<f64> = if overflow {
        let mut v = vec![0.0; n + 1];
        for k in 0..n {
            v[k + 1] = v[k] + ((n - k) as f64 / (k + 1) as f64).ln();
        }
        v
    } else {
        Vec::new()
    };
    for atom in &measure.atoms {
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            let term = if overflow {
                (ln_choose[k] + k as f64 * atom.u1.ln() + (n - k) as f64 * atom.rest.ln()).exp()
            } else {
                choose[k] * atom.u1.powi(k as i32) * atom.rest.powi((n - k) as i32)
            };
            *slot += atom.mass * term;
        }
    }
    out
}

/// Sum of terms that may cancel, with the magnitude needed to judge whether
/// a negative result is rounding noise.
#[derive(Default, Clone, Copy)]
struct Acc {
    value: f64,
    scale: f64,
}

impl Acc {
    fn add(&mut self, x: f64) {
        self.value += x;
        self.scale += x.abs();
    }
}

/// Row-independent pieces of the table.
#[derive(Debug, Clone)]
struct RateInputs {
    model: FrequencyModel,
    m_tilde: usize,
    thetas: Vec<f64>,
    down_const: f64,
    kill_const: f64,
}

impl RateInputs {
    fn new(params: &ModelParams, z: f64) -> Self {
        let model = FrequencyModel::new(params, z);
        let m_tilde = params.max_degree();
        let thetas = (1..=m_tilde.max(1)).map(|k| theta_k(params, z, k)).collect();
        RateInputs {
            down_const: (params.b11.coeff(0) + params.b12.eval_polynomial(z) + params.eta1) / z,
            kill_const: (params.b22.coeff(0) + params.b21.eval_polynomial(z) + params.eta2) / z,
            model,
            m_tilde,
            thetas,
        }
    }

    fn row(&self, n: usize, violations: &mut Vec<RateViolation>) -> DualRow {
        let p = &self.model.params;
        let z = self.model.z;
        let nf = n as f64;
        let l1 = weighted_lambdas(&self.model.pushed_mu1, n);
        let l2 = weighted_lambdas(&self.model.pushed_mu2, n);
        let li = weighted_lambdas(&self.model.pushed_nu, n);

        let mut settle = |m: DualState, acc: Acc| -> f64 {
            if acc.value >= 0.0 {
                acc.value
            } else if acc.value >= -NEGATIVE_SLACK * acc.scale {
                0.0
            } else {
                violations.push(RateViolation { n, m, rate: acc.value });
                acc.value
            }
        };

        let mut down = Vec::with_capacity(n);
        for m in 0..n {
            let mut acc = Acc::default();
            if m == n - 1 {
                acc.add(nf * (nf - 1.0) / z * p.c1);
                acc.add(nf * self.down_const);
            }
            if m > 0 {
                let k = n - m + 1;
                acc.add(z * l1[k]);
                acc.add(-z * l2[k]);
            }
            acc.add(z * l2[n - m]);
            acc.add(li[n - m]);
            down.push(settle(DualState::Count(m), acc));
        }

        let mut up = Vec::with_capacity(self.thetas.len());
        for (i, theta) in self.thetas.iter().enumerate() {
            let j = i + 1;
            let mut acc = Acc::default();
            if j == 1 {
                acc.add((nf + 1.0) * nf / z * (p.c1 - p.c2));
                acc.add(-z * self.model.pushed_mu1.gamma(n as u32, Kind::One));
                acc.add(z * self.model.pushed_mu2.gamma(n as u32, Kind::Two));
            }
            acc.add(nf * theta);
            up.push(settle(DualState::Count(n + j), acc));
        }

        let mut acc = Acc::default();
        acc.add(z * self.model.pushed_mu1.vartheta(n as u32));
        acc.add(self.model.pushed_nu.vartheta(n as u32));
        acc.add(nf * self.kill_const);
        let kill = settle(DualState::Dagger, acc);

        let total = down.iter().chain(&up).sum::<f64>() + kill;
        DualRow { down, up, kill, total }
    }
}

/// The rate table `q_{nm}`, built eagerly up to `n_max` and extended on
/// demand up to `cap`.
///
/// Readers take a snapshot of the complete rows; an extension swaps in a new
/// snapshot under the write lock, so a reader never sees a partial row.
#[derive(Debug)]
pub struct DualRates {
    inputs: RateInputs,
    n_max: usize,
    cap: usize,
    rows: RwLock<Arc<Vec<DualRow>>>,
}

impl DualRates {
    pub fn z(&self) -> f64 {
        self.inputs.model.z
    }

    pub fn params(&self) -> &ModelParams {
        &self.inputs.model.params
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn m_tilde(&self) -> usize {
        self.inputs.m_tilde
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap.max(self.n_max);
        self
    }

    /// Rows currently built.
    pub fn built(&self) -> usize {
        self.snapshot().len()
    }

    fn snapshot(&self) -> Arc<Vec<DualRow>> {
        self.rows.read().expect("rate table lock poisoned").clone()
    }

    /// Snapshot holding at least rows `1..=n`.
    fn ensure(&self, n: usize) -> Result<Arc<Vec<DualRow>>> {
        let rows = self.snapshot();
        if n <= rows.len() {
            return Ok(rows);
        }
        if n > self.cap {
            return Err(Error::DualCapExceeded {
                state: n,
                cap: self.cap,
            });
        }
        let mut guard = self.rows.write().expect("rate table lock poisoned");
        if n <= guard.len() {
            return Ok(guard.clone());
        }
        let target = n.max(2 * guard.len()).min(self.cap);
        let mut extended: Vec<DualRow> = guard.as_ref().clone();
        let mut violations = Vec::new();
        for k in extended.len() + 1..=target {
            extended.push(self.inputs.row(k, &mut violations));
        }
        if !violations.is_empty() {
            return Err(PositivityViolation { violations }.into());
        }
        *guard = Arc::new(extended);
        Ok(guard.clone())
    }

    pub fn row(&self, n: usize) -> Result<DualRow> {
        if n == 0 {
            return Err(Error::arg("n", "state 0 is absorbing and has no row"));
        }
        Ok(self.ensure(n)?[n - 1].clone())
    }

    /// `q_{n,m}` for `n ≥ 1`, `m ≠ n`.
    pub fn rate(&self, n: usize, m: DualState) -> Result<f64> {
        let row = self.row(n)?;
        Ok(match m {
            DualState::Dagger => row.kill,
            DualState::Count(m) if m < n => row.down[m],
            DualState::Count(m) if m == n => {
                return Err(Error::arg("m", "diagonal entries are not stored"));
            }
            DualState::Count(m) => row.up.get(m - n - 1).copied().unwrap_or(0.0),
        })
    }

    /// Every off-diagonal entry of rows `1..=n_max`, in row order.
    pub fn entries(&self) -> Result<Vec<(usize, DualState, f64)>> {
        let rows = self.ensure(self.n_max)?;
        let mut out = Vec::new();
        for (i, row) in rows.iter().take(self.n_max).enumerate() {
            let n = i + 1;
            out.extend(row.down.iter().enumerate().map(|(m, &q)| (n, DualState::Count(m), q)));
            out.extend(
                row.up
                    .iter()
                    .enumerate()
                    .map(|(j, &q)| (n, DualState::Count(n + j + 1), q)),
            );
            out.push((n, DualState::Dagger, row.kill));
        }
        Ok(out)
    }

    /// CSV with header `n,m,rate`; the cemetery is written as `dagger`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "m", "rate"])?;
        for (n, m, q) in self.entries()? {
            w.write_record([n.to_string(), m.to_string(), format!("{q:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds rows `1..=n_max`; the table may later grow to `10·n_max` rows.
pub fn build_rates(params: &ModelParams, z: f64, n_max: usize) -> Result<DualRates> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::arg("z", "population size must be positive"));
    }
    if n_max == 0 {
        return Err(Error::arg("n_max", "must be at least 1"));
    }
    let inputs = RateInputs::new(params, z);
    let mut violations = Vec::new();
    let rows: Vec<DualRow> = (1..=n_max).map(|n| inputs.row(n, &mut violations)).collect();
    if !violations.is_empty() {
        return Err(PositivityViolation { violations }.into());
    }
    Ok(DualRates {
        inputs,
        n_max,
        cap: 10 * n_max,
        rows: RwLock::new(Arc::new(rows)),
    })
}

/// Gillespie run from `n0` to `horizon`; returns the state at `horizon`.
pub fn simulate_dual<R: Rng + ?Sized>(rates: &DualRates, n0: usize, horizon: f64, rng: &mut R) -> Result<DualState> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::arg("horizon", "must be finite and nonnegative"));
    }
    let mut rows = rates.snapshot();
    let mut state = DualState::Count(n0);
    let mut t = 0.0;
    while let DualState::Count(n) = state {
        if n == 0 {
            break;
        }
        if n > rows.len() {
            rows = rates.ensure(n)?;
        }
        let row = &rows[n - 1];
        if row.total <= 0.0 {
            break;
        }
        let e: f64 = Exp1.sample(rng);
        t += e / row.total;
        if t > horizon {
            break;
        }
        state = pick(row, n, rng.random::<f64>() * row.total);
    }
    Ok(state)
}

fn pick(row: &DualRow, n: usize, target: f64) -> DualState {
    let mut acc = 0.0;
    let mut last = DualState::Dagger;
    for (m, &q) in row.down.iter().enumerate() {
        acc += q;
        if q > 0.0 {
            last = DualState::Count(m);
            if target < acc {
                return last;
            }
        }
    }
    for (j, &q) in row.up.iter().enumerate() {
        acc += q;
        if q > 0.0 {
            last = DualState::Count(n + j + 1);
            if target < acc {
                return last;
            }
        }
    }
    if row.kill > 0.0 {
        DualState::Dagger
    } else {
        // target fell in the rounding gap past the last positive rate
        last
    }
}

/// Monte Carlo estimate of `E_{n0}[H(r, N_t)]`; run `i` uses stream
/// `stream_id(Dual, n0, i)`.
pub fn dual_moment(rates: &DualRates, n0: usize, r: f64, t: f64, n_paths: usize, seed: u64) -> Result<Estimate> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::arg("r", format!("{r} is outside [0, 1]")));
    }
    if n_paths == 0 {
        return Err(Error::arg("n_paths", "must be positive"));
    }
    if n0 > rates.n_max() {
        return Err(Error::arg("n0", format!("{n0} exceeds n_max = {}", rates.n_max())));
    }
    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, stream_id(Domain::Dual, n0 as u64 & 0xffff, i));
            simulate_dual(rates, n0, t, &mut rng).map(|s| s.duality_function(r))
        })
        .collect::<Result<_>>()?;
    Estimate::from_samples(values)
}

/// Largest `|𝓛rⁿ − (Σ_{m≠n} q_{nm}(rᵐ − rⁿ) − q_{n†} rⁿ)|` over `n ≤ n_max`
/// and the grid.
pub fn generator_identity_residual(params: &ModelParams, z: f64, n_max: usize, r_grid: &[f64]) -> Result<f64> {
    let rates = build_rates(params, z, n_max)?;
    let model = FrequencyModel::new(params, z);
    let mut worst = 0.0f64;
    for n in 1..=n_max {
        let row = rates.row(n)?;
        for &r in r_grid {
            let rn = r.powi(n as i32);
            let down: f64 = row
                .down
                .iter()
                .enumerate()
                .map(|(m, q)| q * (r.powi(m as i32) - rn))
                .sum();
            let up: f64 = row
                .up
                .iter()
                .enumerate()
                .map(|(j, q)| q * (r.powi((n + j + 1) as i32) - rn))
                .sum();
            let dual_side = down + up - row.kill * rn;
            let lhs = model.generator_on_monomial(n as u32, r);
            worst = worst.max((lhs - dual_side).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub n0: usize,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub z_score: f64,
}

/// `E_r[R_tⁿ⁰]` against `E_{n0}[r^{N_t}]` for each `n0`. The frequency side
/// runs `cfg.n_paths` paths to `t = cfg.horizon` once and reads every moment
/// off the same ensemble; the dual side uses `cfg.n_paths` chains per `n0`.
pub fn duality_check_many(
    params: &ModelParams,
    z: f64,
    r: f64,
    n0s: &[usize],
    cfg: &PathConfig,
) -> Result<Vec<DualityReport>> {
    let n_max = n0s.iter().copied().max().unwrap_or(1).max(1);
    let rates = build_rates(params, z, n_max)?;
    let sim = FrequencySimulator::new(params, z)?;
    let paths = sim.ensemble(r, cfg, Recording::Final, 1)?;
    n0s.iter()
        .map(|&n0| {
            let lhs = moment_estimate(&paths, cfg.horizon, n0 as u32)?;
            let rhs = dual_moment(&rates, n0, r, cfg.horizon, cfg.n_paths, cfg.seed)?;
            Ok(DualityReport {
                n0,
                lhs,
                rhs,
                z_score: lhs.z_score(&rhs),
            })
        })
        .collect()
}

pub fn duality_check(params: &ModelParams, z: f64, r: f64, n0: usize, cfg: &PathConfig) -> Result<DualityReport> {
    Ok(duality_check_many(params, z, r, &[n0], cfg)?.remove(0))
}
