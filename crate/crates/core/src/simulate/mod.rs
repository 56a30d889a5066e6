//! Path simulation: the two-type branching SDE, the culled frequency SDE,
//! the culling chain, and Monte Carlo estimators over path ensembles.

mod cbi;
mod culling;
mod frequency;

pub use cbi::{simulate_cbi, CbiSimulator};
pub use culling::{simulate_culling_chain, CullingSimulator};
pub use frequency::{coupled_pair, simulate_culled_frequency, FrequencySimulator};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    pub n_paths: usize,
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64, n_paths: usize) -> Result<Self> {
        let cfg = PathConfig {
            dt,
            horizon,
            seed,
            n_paths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::arg("dt", "must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::arg("horizon", "must be finite and at least dt"));
        }
        if self.n_paths == 0 {
            return Err(Error::arg("n_paths", "must be positive"));
        }
        Ok(())
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
}

/// Lower and upper exit levels for the total population, `τ = τ_ε⁻ ∧ τ_L⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopBand {
    pub eps: f64,
    pub cap: f64,
}

impl StopBand {
    pub fn new(eps: f64, cap: f64) -> Result<Self> {
        let band = StopBand { eps, cap };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.cap && self.cap.is_finite()) {
            return Err(Error::arg("band", "need 0 < eps < cap < inf"));
        }
        Ok(())
    }

    pub fn contains(&self, total: f64) -> bool {
        total > self.eps && total <= self.cap
    }
}

/// Which states an engine keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recording {
    /// Every Euler sub-step and every jump.
    #[default]
    Full,
    /// The end of every grid step of length `dt`.
    Steps,
    /// Initial and terminal states only.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    JumpMu1,
    JumpMu2,
    JumpNu,
    Clamp,
    StopTau,
    CullRestart,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::JumpMu1 => "jump-mu1",
            EventKind::JumpMu2 => "jump-mu2",
            EventKind::JumpNu => "jump-nu",
            EventKind::Clamp => "clamp",
            EventKind::StopTau => "stop-tau",
            EventKind::CullRestart => "cull-restart",
        }
    }
}

/// A logged event. `payload` holds the pre-clamp overshoot for clamps, the
/// signed increment for jumps, the total population for stops and the new
/// frequency for culling restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub payload: f64,
}

/// Sampled path of a scalar (`f64`) or two-type (`[f64; 2]`) process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub values: Vec<S>,
    pub events: Vec<Event>,
    /// Jumps whose exact update left the state space. Always zero for valid
    /// models; kept as a checked counter.
    pub jump_exits: usize,
}

impl<S: Copy> Trajectory<S> {
    pub(crate) fn start(value: S) -> Self {
        Trajectory {
            times: vec![0.0],
            values: vec![value],
            events: Vec::new(),
            jump_exits: 0,
        }
    }

    pub(crate) fn push(&mut self, time: f64, value: S) {
        match self.times.last() {
            Some(&last) if time <= last => {
                // same instant: keep the latest state
                *self.values.last_mut().unwrap() = value;
            }
            _ => {
                self.times.push(time);
                self.values.push(value);
            }
        }
    }

    pub(crate) fn log(&mut self, time: f64, kind: EventKind, payload: f64) {
        self.events.push(Event { time, kind, payload });
    }

    /// Last recorded value at or before `t`.
    pub fn value_at(&self, t: f64) -> S {
        let idx = self.times.partition_point(|&s| s <= t + 1e-12);
        self.values[idx.saturating_sub(1)]
    }

    pub fn final_value(&self) -> S {
        *self.values.last().expect("trajectory is never empty")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn clamp_count(&self) -> usize {
        self.count(EventKind::Clamp)
    }

    pub fn max_overshoot(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Clamp)
            .map(|e| e.payload)
            .fold(0.0, f64::max)
    }

    pub fn stopped(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::StopTau)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Result<Self> {
        // Welford
        let (mut count, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        for x in samples {
            count += 1;
            let delta = x - mean;
            mean += delta / count as f64;
            m2 += delta * (x - mean);
        }
        if count == 0 {
            return Err(Error::arg("samples", "need at least one sample"));
        }
        let stderr = if count > 1 {
            (m2 / (count - 1) as f64 / count as f64).sqrt()
        } else {
            0.0
        };
        Ok(Estimate { mean, stderr })
    }

    /// `|a − b| / sqrt(se_a² + se_b²)`; zero when both sides agree exactly.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let diff = (self.mean - other.mean).abs();
        let se = self.stderr.hypot(other.stderr);
        if diff == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            diff / se
        }
    }
}

/// Monte Carlo estimate of `E[R_t^n]` read off an ensemble of frequency paths.
pub fn moment_estimate(paths: &[Trajectory<f64>], t: f64, n: u32) -> Result<Estimate> {
    if paths.is_empty() {
        return Err(Error::arg("paths", "empty path list"));
    }
    if let Some(p) = paths.iter().find(|p| p.end_time() + 1e-12 < t) {
        return Err(Error::arg(
            "t",
            format!("{t} lies past the end of a path ending at {}", p.end_time()),
        ));
    }
    Estimate::from_samples(paths.iter().map(|p| p.value_at(t).powi(n as i32)))
}

/// End time of grid step `k` (1-based), snapped onto the horizon.
pub(crate) fn grid_end(k: u64, dt: f64, horizon: f64) -> f64 {
    let t = k as f64 * dt;
    if t >= horizon || horizon - t < 1e-9 * dt {
        horizon
    } else {
        t
    }
}
