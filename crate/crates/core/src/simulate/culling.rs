use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use super::{CbiSimulator, EventKind, PathConfig, Recording, StopBand, Trajectory};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::streams::{path_rng, stream_id, Domain};

/// Pure-jump culling chain with epoch rate `n`.
///
/// At each epoch the two-type process is restarted from `(r z, (1 − r) z)`,
/// run for `1/n` (inner grid step `min(dt, 1/n)`), and the chain moves to the
/// resulting type-1 frequency. If the inner run leaves the stop band the
/// chain is absorbed at its current value and a `StopTau` event is logged.
#[derive(Debug, Clone)]
pub struct CullingSimulator {
    cbi: CbiSimulator,
    z: f64,
    n: u32,
}

impl CullingSimulator {
    pub fn new(params: &ModelParams, z: f64, n: u32, band: StopBand) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::arg("z", "population size must be positive"));
        }
        if n == 0 {
            return Err(Error::arg("n", "culling rate must be at least 1"));
        }
        Ok(CullingSimulator {
            cbi: CbiSimulator::new(params, band)?,
            z,
            n,
        })
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        r0: f64,
        cfg: &PathConfig,
        recording: Recording,
        rng: &mut R,
    ) -> Result<Trajectory<f64>> {
        if !(0.0..=1.0).contains(&r0) {
            return Err(Error::arg("r0", format!("{r0} is outside [0, 1]")));
        }
        cfg.validate()?;
        let n = self.n as f64;
        let inner = 1.0 / n;
        let inner_dt = cfg.dt.min(inner);
        let mut r = r0;
        let mut t = 0.0;
        let mut path = Trajectory::start(r);
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / n;
            if t > cfg.horizon {
                break;
            }
            let x0 = [r * self.z, (1.0 - r) * self.z];
            let run = self.cbi.run(x0, inner, inner_dt, Recording::Final, rng)?;
            let x = run.final_value();
            if run.stopped() {
                path.log(t, EventKind::StopTau, x[0] + x[1]);
                break;
            }
            r = x[0] / (x[0] + x[1]);
            path.log(t, EventKind::CullRestart, r);
            if recording != Recording::Final {
                path.push(t, r);
            }
        }
        path.push(cfg.horizon, r);
        Ok(path)
    }
}

/// `cfg.n_paths` culling-chain paths; `Recording::Full` and `Steps` both keep
/// every epoch.
pub fn simulate_culling_chain(
    params: &ModelParams,
    z: f64,
    r0: f64,
    n: u32,
    band: StopBand,
    cfg: &PathConfig,
    recording: Recording,
) -> Result<Vec<Trajectory<f64>>> {
    let sim = CullingSimulator::new(params, z, n, band)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, stream_id(Domain::Culling, n as u64 & 0xffff, i));
            sim.run(r0, cfg, recording, &mut rng)
        })
        .collect()
}
