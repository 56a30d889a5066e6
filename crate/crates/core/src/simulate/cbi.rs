use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use super::{grid_end, EventKind, PathConfig, Recording, StopBand, Trajectory};
use crate::error::{Error, Result};
use crate::measures::Kind;
use crate::model::ModelParams;
use crate::streams::{path_rng, stream_id, Domain};

/// Euler–Maruyama engine for the two-type branching SDE.
///
/// Reproduction events of type `i` fire at rate `X⁽ⁱ⁾·mass(μᵢ)`, with the rate
/// frozen at the left end of each grid step, and add the whole atom `w` to
/// both coordinates. The compensator of the own-type part is the drift
/// `−X⁽ⁱ⁾ ∫ wᵢ μᵢ(dw)`; the cross-type part is uncompensated.
fn sample_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

#[derive(Debug, Clone)]
pub struct CbiSimulator {
    params: ModelParams,
    band: StopBand,
    mass: [f64; 2],
    own_mean: [f64; 2],
    nu_mass: f64,
}

impl CbiSimulator {
    pub fn new(params: &ModelParams, band: StopBand) -> Result<Self> {
        band.validate()?;
        Ok(CbiSimulator {
            params: params.clone(),
            band,
            mass: [params.mu1.total_mass(), params.mu2.total_mass()],
            own_mean: [
                params.mu1.mean_component(Kind::One),
                params.mu2.mean_component(Kind::Two),
            ],
            nu_mass: params.nu.total_mass(),
        })
    }

    pub fn band(&self) -> StopBand {
        self.band
    }

    fn drift(&self, x: [f64; 2]) -> [f64; 2] {
        let p = &self.params;
        [
            p.eta1 + p.b11.eval(x[0]) + p.b12.eval(x[1]) - x[0] * self.own_mean[0],
            p.eta2 + p.b22.eval(x[1]) + p.b21.eval(x[0]) - x[1] * self.own_mean[1],
        ]
    }

    /// One path from `x0` over `[0, horizon]` with grid step `dt`. Stops at
    /// the first grid or event time where `X⁽¹⁾ + X⁽²⁾` leaves `(eps, cap]`;
    /// a start outside the band stops at time 0.
    pub fn run<R: Rng + ?Sized>(
        &self,
        x0: [f64; 2],
        horizon: f64,
        dt: f64,
        recording: Recording,
        rng: &mut R,
    ) -> Result<Trajectory<[f64; 2]>> {
        if !(x0[0] >= 0.0 && x0[1] >= 0.0 && x0.iter().all(|v| v.is_finite())) {
            return Err(Error::arg("x0", "components must be finite and nonnegative"));
        }
        let mut x = x0;
        let mut path = Trajectory::start(x);
        if self.stop_if_outside(&mut path, 0.0, x) {
            return Ok(path);
        }
        let mut t = 0.0;
        let mut k = 0u64;
        while t < horizon {
            k += 1;
            let end = grid_end(k, dt, horizon);
            let rates = [self.nu_mass, x[0] * self.mass[0], x[1] * self.mass[1]];
            let total: f64 = rates.iter().sum();
            let mut next = if total > 0.0 {
                t + sample_exp(rng) / total
            } else {
                f64::INFINITY
            };
            while next < end {
                x = self.euler(&mut path, x, next - t, next, rng);
                t = next;
                x = self.jump(&mut path, x, &rates, total, t, rng);
                if recording == Recording::Full {
                    path.push(t, x);
                }
                if self.stop_if_outside(&mut path, t, x) {
                    return Ok(path);
                }
                next = t + sample_exp(rng) / total;
            }
            x = self.euler(&mut path, x, end - t, end, rng);
            t = end;
            if recording != Recording::Final {
                path.push(t, x);
            }
            if self.stop_if_outside(&mut path, t, x) {
                return Ok(path);
            }
        }
        path.push(t, x);
        Ok(path)
    }

    fn stop_if_outside(&self, path: &mut Trajectory<[f64; 2]>, t: f64, x: [f64; 2]) -> bool {
        let total = x[0] + x[1];
        if self.band.contains(total) {
            return false;
        }
        path.push(t, x);
        path.log(t, EventKind::StopTau, total);
        true
    }

    fn euler<R: Rng + ?Sized>(
        &self,
        path: &mut Trajectory<[f64; 2]>,
        x: [f64; 2],
        h: f64,
        t_end: f64,
        rng: &mut R,
    ) -> [f64; 2] {
        let drift = self.drift(x);
        let c = [self.params.c1, self.params.c2];
        let sqrt_h = h.sqrt();
        let mut out = [0.0; 2];
        for i in 0..2 {
            let xi: f64 = StandardNormal.sample(rng);
            let next = x[i] + drift[i] * h + (2.0 * c[i] * x[i]).sqrt() * sqrt_h * xi;
            out[i] = if next < 0.0 {
                path.log(t_end, EventKind::Clamp, -next);
                0.0
            } else {
                next
            };
        }
        out
    }

    fn jump<R: Rng + ?Sized>(
        &self,
        path: &mut Trajectory<[f64; 2]>,
        x: [f64; 2],
        rates: &[f64; 3],
        total: f64,
        t: f64,
        rng: &mut R,
    ) -> [f64; 2] {
        let p = &self.params;
        let pick = rng.random::<f64>() * total;
        let (kind, atom) = if pick < rates[0] {
            (EventKind::JumpNu, p.nu.atoms()[p.nu.pick(pick)])
        } else if pick < rates[0] + rates[1] {
            let i = p.mu1.pick((pick - rates[0]) / x[0]);
            (EventKind::JumpMu1, p.mu1.atoms()[i])
        } else {
            let i = p.mu2.pick((pick - rates[0] - rates[1]) / x[1]);
            (EventKind::JumpMu2, p.mu2.atoms()[i])
        };
        path.log(t, kind, atom.w1 + atom.w2);
        [x[0] + atom.w1, x[1] + atom.w2]
    }

    pub fn path(
        &self,
        x0: [f64; 2],
        cfg: &PathConfig,
        recording: Recording,
        stream: u64,
    ) -> Result<Trajectory<[f64; 2]>> {
        cfg.validate()?;
        let mut rng = path_rng(cfg.seed, stream);
        self.run(x0, cfg.horizon, cfg.dt, recording, &mut rng)
    }
}

/// `cfg.n_paths` independent CBI paths from `x0`.
pub fn simulate_cbi(
    params: &ModelParams,
    x0: [f64; 2],
    band: StopBand,
    cfg: &PathConfig,
    recording: Recording,
) -> Result<Vec<Trajectory<[f64; 2]>>> {
    let sim = CbiSimulator::new(params, band)?;
    cfg.validate()?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| sim.path(x0, cfg, recording, stream_id(Domain::Cbi, 0, i)))
        .collect()
}
