use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use super::{grid_end, EventKind, PathConfig, Recording, Trajectory};
use crate::error::{Error, Result};
use crate::model::{FrequencyModel, ModelParams};
use crate::streams::{path_rng, stream_id, Domain};

/// Euler–Maruyama engine for the culled frequency SDE with event-exact jumps.
///
/// The three jump sources are superposed into a single Poisson clock of rate
/// `mass(ν) + z·mass(μ₁) + z·mass(μ₂)`, which does not depend on the state.
/// A `μ₁` event lands only when its thinning uniform `v ∈ [0,1)` satisfies
/// `v ≤ r`, a `μ₂` event when `v ≤ 1 − r`. Jumps are raw, so the drift is
/// [`FrequencyModel::raw_event_drift`].
#[derive(Debug, Clone)]
pub struct FrequencySimulator {
    model: FrequencyModel,
    nu_rate: f64,
    mu1_rate: f64,
    total_rate: f64,
}

impl FrequencySimulator {
    pub fn new(params: &ModelParams, z: f64) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::arg("z", "population size must be positive"));
        }
        let nu_rate = params.nu.total_mass();
        let mu1_rate = z * params.mu1.total_mass();
        let mu2_rate = z * params.mu2.total_mass();
        Ok(FrequencySimulator {
            model: FrequencyModel::new(params, z),
            nu_rate,
            mu1_rate,
            total_rate: nu_rate + mu1_rate + mu2_rate,
        })
    }

    pub fn model(&self) -> &FrequencyModel {
        &self.model
    }

    /// Runs one path per entry of `starts`, all driven by the same Brownian
    /// increments, jump clock, atoms and thinning uniforms.
    pub fn run<R: Rng + ?Sized>(
        &self,
        starts: &[f64],
        cfg: &PathConfig,
        recording: Recording,
        rng: &mut R,
    ) -> Result<Vec<Trajectory<f64>>> {
        if let Some(&r) = starts.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::arg("r0", format!("{r} is outside [0, 1]")));
        }
        cfg.validate()?;
        let mut state: Vec<f64> = starts.to_vec();
        let mut paths: Vec<Trajectory<f64>> = starts.iter().map(|&r| Trajectory::start(r)).collect();

        let mut t = 0.0;
        let mut next_event = t + self.waiting_time(rng);
        let mut k = 0u64;
        while t < cfg.horizon {
            k += 1;
            let end = grid_end(k, cfg.dt, cfg.horizon);
            while next_event < end {
                self.euler(&mut state, &mut paths, next_event - t, next_event, rng);
                t = next_event;
                self.jump(&mut state, &mut paths, t, rng);
                if recording == Recording::Full {
                    record(&mut paths, &state, t);
                }
                next_event = t + self.waiting_time(rng);
            }
            self.euler(&mut state, &mut paths, end - t, end, rng);
            t = end;
            if recording != Recording::Final {
                record(&mut paths, &state, t);
            }
        }
        record(&mut paths, &state, t);
        Ok(paths)
    }

    fn waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.total_rate > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / self.total_rate
        } else {
            f64::INFINITY
        }
    }

    fn euler<R: Rng + ?Sized>(
        &self,
        state: &mut [f64],
        paths: &mut [Trajectory<f64>],
        h: f64,
        t_end: f64,
        rng: &mut R,
    ) {
        let xi: f64 = StandardNormal.sample(rng);
        let dw = h.sqrt() * xi;
        for (r, path) in state.iter_mut().zip(paths.iter_mut()) {
            let next = *r + self.model.raw_event_drift(*r) * h + self.model.sigma_squared(*r).sqrt() * dw;
            *r = if next < 0.0 {
                path.log(t_end, EventKind::Clamp, -next);
                0.0
            } else if next > 1.0 {
                path.log(t_end, EventKind::Clamp, next - 1.0);
                1.0
            } else {
                next
            };
        }
    }

    fn jump<R: Rng + ?Sized>(&self, state: &mut [f64], paths: &mut [Trajectory<f64>], t: f64, rng: &mut R) {
        let params = &self.model.params;
        let z = self.model.z;
        let pick: f64 = rng.random::<f64>() * self.total_rate;
        let (kind, atom) = if pick < self.nu_rate {
            (EventKind::JumpNu, params.nu.atoms()[params.nu.pick(pick)])
        } else if pick < self.nu_rate + self.mu1_rate {
            let i = params.mu1.pick((pick - self.nu_rate) / z);
            (EventKind::JumpMu1, params.mu1.atoms()[i])
        } else {
            let i = params.mu2.pick((pick - self.nu_rate - self.mu1_rate) / z);
            (EventKind::JumpMu2, params.mu2.atoms()[i])
        };
        let v: f64 = rng.random();
        for (r, path) in state.iter_mut().zip(paths.iter_mut()) {
            let lands = match kind {
                EventKind::JumpMu1 => v <= *r,
                EventKind::JumpMu2 => v <= 1.0 - *r,
                _ => true,
            };
            if !lands {
                continue;
            }
            let next = jump_update(*r, z, atom.w1, atom.w2);
            if !(0.0..=1.0).contains(&next) {
                path.jump_exits += 1;
            }
            path.log(t, kind, next - *r);
            *r = next.clamp(0.0, 1.0);
        }
    }

    /// One path started at `r0`, on stream `stream` of the run seed.
    pub fn path(&self, r0: f64, cfg: &PathConfig, recording: Recording, stream: u64) -> Result<Trajectory<f64>> {
        let mut rng = path_rng(cfg.seed, stream);
        Ok(self.run(&[r0], cfg, recording, &mut rng)?.pop().unwrap())
    }

    /// `cfg.n_paths` independent paths; path `i` uses stream
    /// `stream_id(Frequency, sub, i)`.
    pub fn ensemble(&self, r0: f64, cfg: &PathConfig, recording: Recording, sub: u64) -> Result<Vec<Trajectory<f64>>> {
        (0..cfg.n_paths as u64)
            .into_par_iter()
            .map(|i| self.path(r0, cfg, recording, stream_id(Domain::Frequency, sub, i)))
            .collect()
    }
}

/// `(rz + w₁)/(z + w₁ + w₂) = r + (1−r)u₁ − r u₂`, written so that monotone
/// rounding keeps it inside `[0, 1]`.
pub(crate) fn jump_update(r: f64, z: f64, w1: f64, w2: f64) -> f64 {
    (r * z + w1) / ((z + w1) + w2)
}

fn record(paths: &mut [Trajectory<f64>], state: &[f64], t: f64) {
    for (path, &r) in paths.iter_mut().zip(state) {
        path.push(t, r);
    }
}

pub fn simulate_culled_frequency(
    params: &ModelParams,
    z: f64,
    r0: f64,
    cfg: &PathConfig,
    recording: Recording,
) -> Result<Vec<Trajectory<f64>>> {
    FrequencySimulator::new(params, z)?.ensemble(r0, cfg, recording, 0)
}

/// `cfg.n_paths` pairs of paths from `r0` and `s0` sharing all noise.
pub fn coupled_pair(
    params: &ModelParams,
    z: f64,
    r0: f64,
    s0: f64,
    cfg: &PathConfig,
    recording: Recording,
) -> Result<Vec<(Trajectory<f64>, Trajectory<f64>)>> {
    let sim = FrequencySimulator::new(params, z)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, stream_id(Domain::Coupled, 0, i));
            let mut pair = sim.run(&[r0, s0], cfg, recording, &mut rng)?;
            let second = pair.pop().unwrap();
            let first = pair.pop().unwrap();
            Ok((first, second))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::JumpMeasure;
    use crate::model::PolynomialMalthusian;
    use crate::simulate::moment_estimate;

    fn cfg(dt: f64, horizon: f64, n_paths: usize) -> PathConfig {
        PathConfig::new(dt, horizon, 42, n_paths).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = ModelParams::null();
        assert!(FrequencySimulator::new(&p, 0.0).is_err());
        assert!(simulate_culled_frequency(&p, 1.0, 1.5, &cfg(0.1, 1.0, 1), Recording::Full).is_err());
    }

    #[test]
    fn zero_is_absorbing_without_type_one_inflow() {
        let p = ModelParams {
            c1: 0.4,
            c2: 0.2,
            eta2: 0.5,
            b11: PolynomialMalthusian::new(vec![0.0, 0.3]),
            b22: PolynomialMalthusian::new(vec![0.0, 0.1]),
            b21: PolynomialMalthusian::new(vec![0.0, 0.2]),
            mu1: JumpMeasure::from_triples(&[[1.0, 0.5, 0.5]]).unwrap(),
            nu: JumpMeasure::from_triples(&[[0.0, 0.7, 1.0]]).unwrap(),
            ..ModelParams::null()
        };
        for path in simulate_culled_frequency(&p, 1.0, 0.0, &cfg(0.01, 2.0, 20), Recording::Full).unwrap() {
            assert!(path.values.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn one_is_absorbing_without_type_two_inflow() {
        let p = ModelParams {
            c1: 0.4,
            c2: 0.2,
            eta1: 0.5,
            b12: PolynomialMalthusian::new(vec![0.0, 0.3]),
            mu2: JumpMeasure::from_triples(&[[0.5, 1.0, 0.5]]).unwrap(),
            nu: JumpMeasure::from_triples(&[[0.7, 0.0, 1.0]]).unwrap(),
            ..ModelParams::null()
        };
        for path in simulate_culled_frequency(&p, 1.0, 1.0, &cfg(0.01, 2.0, 20), Recording::Full).unwrap() {
            assert!(path.values.iter().all(|&r| r == 1.0));
        }
    }

    #[test]
    fn null_model_is_constant() {
        let paths =
            simulate_culled_frequency(&ModelParams::null(), 2.0, 0.37, &cfg(0.1, 1.0, 3), Recording::Full).unwrap();
        for p in paths {
            assert!(p.values.iter().all(|&r| r == 0.37));
            assert!(p.events.is_empty());
            assert_eq!(p.end_time(), 1.0);
        }
    }

    #[test]
    fn pure_diffusion_is_a_martingale() {
        let p = ModelParams::pure_diffusion(0.5);
        let paths = simulate_culled_frequency(&p, 1.0, 0.3, &cfg(0.01, 0.5, 100_000), Recording::Final).unwrap();
        let e = moment_estimate(&paths, 0.5, 1).unwrap();
        assert!((e.mean - 0.3).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn pure_diffusion_second_moment_follows_moment_ode() {
        // d/dt E[R²] = (2c/z)(E[R] − E[R²]) with E[R] = r0:
        // E[R_t²] = r0 − (r0 − r0²) e^{−2ct/z}.
        let (c, z, r0, t) = (0.5, 2.0, 0.3, 0.5);
        let p = ModelParams::pure_diffusion(c);
        let paths = simulate_culled_frequency(&p, z, r0, &cfg(1e-3, t, 20_000), Recording::Final).unwrap();
        let e = moment_estimate(&paths, t, 2).unwrap();
        let expected = r0 - (r0 - r0 * r0) * (-2.0 * c * t / z).exp();
        assert!((e.mean - expected).abs() < 3.0 * e.stderr, "{e:?} vs {expected}");
    }

    #[test]
    fn same_seed_same_path() {
        let p = ModelParams {
            c1: 0.5,
            c2: 0.3,
            eta1: 0.2,
            mu1: JumpMeasure::from_triples(&[[1.0, 0.2, 0.5]]).unwrap(),
            nu: JumpMeasure::from_triples(&[[0.3, 0.1, 2.0]]).unwrap(),
            ..ModelParams::null()
        };
        let a = simulate_culled_frequency(&p, 1.0, 0.5, &cfg(0.01, 1.0, 4), Recording::Full).unwrap();
        let b = simulate_culled_frequency(&p, 1.0, 0.5, &cfg(0.01, 1.0, 4), Recording::Full).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|t| !t.events.is_empty()));
    }

    #[test]
    fn recording_modes_agree_on_terminal_value() {
        let p = ModelParams {
            c1: 0.5,
            c2: 0.3,
            mu2: JumpMeasure::from_triples(&[[0.4, 0.2, 1.0]]).unwrap(),
            nu: JumpMeasure::from_triples(&[[0.3, 0.1, 2.0]]).unwrap(),
            ..ModelParams::null()
        };
        let sim = FrequencySimulator::new(&p, 1.0).unwrap();
        let c = cfg(0.01, 1.0, 1);
        let full = sim.path(0.4, &c, Recording::Full, 9).unwrap();
        let steps = sim.path(0.4, &c, Recording::Steps, 9).unwrap();
        let last = sim.path(0.4, &c, Recording::Final, 9).unwrap();
        assert_eq!(full.final_value(), last.final_value());
        assert_eq!(steps.final_value(), last.final_value());
        assert_eq!(steps.times.len(), 101);
        assert_eq!(last.times, vec![0.0, 1.0]);
        assert!(full.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coupled_pairs() {
        let p = ModelParams {
            c1: 0.5,
            c2: 0.25,
            eta1: 0.3,
            mu1: JumpMeasure::from_triples(&[[1.0, 0.0, 0.3]]).unwrap(),
            nu: JumpMeasure::from_triples(&[[0.2, 0.1, 0.5]]).unwrap(),
            ..ModelParams::null()
        };
        let c = cfg(0.01, 0.5, 10);
        for (a, b) in coupled_pair(&p, 1.0, 0.4, 0.4, &c, Recording::Full).unwrap() {
            assert_eq!(a, b);
        }
        for (a, b) in coupled_pair(&ModelParams::null(), 1.0, 0.2, 0.7, &c, Recording::Full).unwrap() {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!(((y - x) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn diffusion_coupling_is_lipschitz_in_start() {
        let p = ModelParams::pure_diffusion(0.5);
        let c = cfg(1e-3, 0.5, 4000);
        let fits: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&d| {
                let pairs = coupled_pair(&p, 1.0, 0.5 - d / 2.0, 0.5 + d / 2.0, &c, Recording::Final).unwrap();
                let mean: f64 = pairs
                    .iter()
                    .map(|(a, b)| (a.final_value() - b.final_value()).abs())
                    .sum::<f64>()
                    / pairs.len() as f64;
                mean / d
            })
            .collect();
        let (lo, hi) = fits.iter().fold((f64::MAX, 0.0f64), |(l, h), &k| (l.min(k), h.max(k)));
        assert!(hi <= 2.0 * lo, "{fits:?}");
    }

    proptest::proptest! {
        #[test]
        fn jump_update_stays_in_the_unit_interval(
            r in 0.0f64..=1.0,
            z in 1e-6f64..1e6,
            w1 in 0.0f64..1e6,
            w2 in 0.0f64..1e6,
        ) {
            let next = jump_update(r, z, w1, w2);
            proptest::prop_assert!((0.0..=1.0).contains(&next));
            let ends = [jump_update(0.0, z, w1, w2), jump_update(1.0, z, w1, w2)];
            proptest::prop_assert!((0.0..=1.0).contains(&ends[0]) && (0.0..=1.0).contains(&ends[1]));
        }

        #[test]
        fn random_jump_models_never_exit(
            atoms in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.1f64..3.0), 1..4),
            r0 in 0.0f64..=1.0,
            z in 0.05f64..5.0,
            seed in 0u64..1000,
        ) {
            let triples: Vec<[f64; 3]> = atoms
                .iter()
                .filter(|(a, b, _)| a + b > 0.0)
                .map(|&(a, b, m)| [a, b, m])
                .collect();
            let measure = JumpMeasure::from_triples(&triples).unwrap();
            let p = ModelParams {
                mu1: measure.clone(),
                mu2: measure.clone(),
                nu: measure,
                ..ModelParams::null()
            };
            let cfg = PathConfig::new(0.05, 1.0, seed, 4).unwrap();
            for path in simulate_culled_frequency(&p, z, r0, &cfg, Recording::Full).unwrap() {
                proptest::prop_assert_eq!(path.jump_exits, 0);
                proptest::prop_assert!(path.values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
