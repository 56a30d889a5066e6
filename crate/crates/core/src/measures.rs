//! Finite atomic jump measures on `U₂ = ℝ₊² ∖ {0}` and the integral
//! functionals of them that drive the frequency dynamics and the dual rates.
//!
//! Every functional is an exact atom sum. Relative rounding error per atom
//! term stays below `1e-12` for the exponents used here (`n ≤ 1000`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two types (and, equally, one of the two mass coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    One,
    Two,
}

/// A point mass at `(w1, w2)` with weight `mass`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub w1: f64,
    pub w2: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(w1: f64, w2: f64, mass: f64) -> Result<Self> {
        let atom = Atom { w1, w2, mass };
        atom.check()?;
        Ok(atom)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let fail = |reason| {
            Err(Error::InvalidAtom {
                w1: self.w1,
                w2: self.w2,
                mass: self.mass,
                reason,
            })
        };
        if !(self.w1.is_finite() && self.w2.is_finite() && self.mass.is_finite()) {
            return fail("coordinates and mass must be finite");
        }
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return fail("coordinates must be nonnegative");
        }
        if self.w1 + self.w2 <= 0.0 {
            return fail("atom must not sit at the origin");
        }
        if self.mass <= 0.0 {
            return fail("mass must be positive");
        }
        Ok(())
    }

    pub fn coord(&self, kind: Kind) -> f64 {
        match kind {
            Kind::One => self.w1,
            Kind::Two => self.w2,
        }
    }

    /// Image under `w ↦ w / (z + w₁ + w₂)`.
    pub fn push(&self, z: f64) -> PushedAtom {
        let scale = z + self.w1 + self.w2;
        PushedAtom {
            u1: self.w1 / scale,
            u2: self.w2 / scale,
            rest: z / scale,
            mass: self.mass,
        }
    }
}

/// A finite atomic measure. The empty list is the zero measure.
///
/// Serialized as an array of `[w1, w2, mass]` triples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct JumpMeasure {
    atoms: Vec<Atom>,
}

impl JumpMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for atom in &atoms {
            atom.check()?;
        }
        Ok(JumpMeasure { atoms })
    }

    pub fn zero() -> Self {
        JumpMeasure::default()
    }

    /// Builds a measure from `[w1, w2, mass]` triples.
    pub fn from_triples(triples: &[[f64; 3]]) -> Result<Self> {
        let atoms = triples
            .iter()
            .map(|&[w1, w2, mass]| Atom::new(w1, w2, mass))
            .collect::<Result<Vec<_>>>()?;
        Ok(JumpMeasure { atoms })
    }

    pub fn triples(&self) -> Vec<[f64; 3]> {
        self.atoms.iter().map(|a| [a.w1, a.w2, a.mass]).collect()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Sum of the two measures (atom lists concatenated).
    pub fn plus(&self, other: &JumpMeasure) -> JumpMeasure {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        JumpMeasure { atoms }
    }

    /// True when some atom has positive mass on `{w_kind > 0}`.
    pub fn charges(&self, kind: Kind) -> bool {
        self.atoms.iter().any(|a| a.coord(kind) > 0.0)
    }

    pub fn pushforward(&self, z: f64) -> PushedMeasure {
        PushedMeasure {
            atoms: self.atoms.iter().map(|a| a.push(z)).collect(),
        }
    }

    /// `∫ w_kind dμ`.
    pub fn mean_component(&self, kind: Kind) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.coord(kind)).sum()
    }

    pub fn lambda_nk(&self, z: f64, n: u32, k: u32) -> Result<f64> {
        self.pushforward(z).lambda(n, k)
    }

    pub fn gamma_n(&self, z: f64, n: u32, which: Kind) -> f64 {
        self.pushforward(z).gamma(n, which)
    }

    pub fn vartheta_n(&self, z: f64, n: u32) -> f64 {
        self.pushforward(z).vartheta(n)
    }

    /// `∫ z w_j / (z + w₁ + w₂) dμ` with `j` the coordinate other than `which`:
    /// `which = One` gives the `μ₁` cross-mass integral, `Two` the `μ₂` one.
    pub fn mc_coefficient(&self, z: f64, which: Kind) -> f64 {
        let other = match which {
            Kind::One => Kind::Two,
            Kind::Two => Kind::One,
        };
        self.atoms
            .iter()
            .map(|a| a.mass * z * a.coord(other) / (z + a.w1 + a.w2))
            .sum()
    }

    /// `∫ w_kind (w₁ + w₂) / (z + w₁ + w₂) dμ`.
    pub(crate) fn size_biased(&self, z: f64, kind: Kind) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let s = a.w1 + a.w2;
                a.mass * a.coord(kind) * s / (z + s)
            })
            .sum()
    }

    /// Index of an atom drawn with probability proportional to its mass.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        Ok(self.pick(rng.random::<f64>() * self.total_mass()))
    }

    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Atom> {
        self.sample_index(rng).map(|i| self.atoms[i])
    }

    /// Atom whose cumulative-mass interval contains `target ∈ [0, total)`.
    pub(crate) fn pick(&self, target: f64) -> usize {
        let mut acc = 0.0;
        for (i, atom) in self.atoms.iter().enumerate() {
            acc += atom.mass;
            if target < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }
}

impl TryFrom<Vec<[f64; 3]>> for JumpMeasure {
    type Error = Error;

    fn try_from(triples: Vec<[f64; 3]>) -> Result<Self> {
        JumpMeasure::from_triples(&triples)
    }
}

impl From<JumpMeasure> for Vec<[f64; 3]> {
    fn from(measure: JumpMeasure) -> Self {
        measure.triples()
    }
}

/// `S_c` bracket: `−∫ w₁(w₁+w₂)/(z+w₁+w₂) dμ₁ + ∫ w₂(w₁+w₂)/(z+w₁+w₂) dμ₂`.
pub fn sc_coefficient(mu1: &JumpMeasure, mu2: &JumpMeasure, z: f64) -> f64 {
    mu2.size_biased(z, Kind::Two) - mu1.size_biased(z, Kind::One)
}

/// An atom of the pushed-forward measure on `{u₁ + u₂ < 1}`.
///
/// `rest = 1 − u₁ − u₂` is kept separately, computed as `z / (z + w₁ + w₂)`,
/// so it is exactly positive and free of cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushedAtom {
    pub u1: f64,
    pub u2: f64,
    pub rest: f64,
    pub mass: f64,
}

impl PushedAtom {
    pub fn coord(&self, kind: Kind) -> f64 {
        match kind {
            Kind::One => self.u1,
            Kind::Two => self.u2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushedMeasure {
    pub atoms: Vec<PushedAtom>,
}

impl PushedMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// `λ_{n,k} = ∫ u₁^k (1 − u₁ − u₂)^{n−k}`, for `1 ≤ k ≤ n`.
    pub fn lambda(&self, n: u32, k: u32) -> Result<f64> {
        if k == 0 || k > n {
            return Err(Error::arg("k", format!("need 1 <= k <= n, got k={k}, n={n}")));
        }
        Ok(self.lambda_unchecked(n, k))
    }

    pub(crate) fn lambda_unchecked(&self, n: u32, k: u32) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * a.u1.powi(k as i32) * a.rest.powi((n - k) as i32))
            .sum()
    }

    /// `γ_n = ∫ 1 − (1 − u₁ − u₂)^n − n u_which / (1 − u₁ − u₂)`; may be negative.
    pub fn gamma(&self, n: u32, which: Kind) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * (1.0 - a.rest.powi(n as i32) - n as f64 * a.coord(which) / a.rest))
            .sum()
    }

    /// `ϑ_n = ∫ 1 − (1 − u₂)^n`.
    pub fn vartheta(&self, n: u32) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * (1.0 - (1.0 - a.u2).powi(n as i32)))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w1: f64, w2: f64, mass: f64) -> JumpMeasure {
        JumpMeasure::from_triples(&[[w1, w2, mass]]).unwrap()
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(Atom::new(0.0, 0.0, 1.0).is_err());
        assert!(Atom::new(-1.0, 2.0, 1.0).is_err());
        assert!(Atom::new(1.0, 0.0, 0.0).is_err());
        assert!(Atom::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(Atom::new(0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn pushforward_examples() {
        let p = single(1.0, 0.0, 2.0).pushforward(1.0);
        assert_eq!(p.atoms.len(), 1);
        assert_eq!((p.atoms[0].u1, p.atoms[0].u2, p.atoms[0].mass), (0.5, 0.0, 2.0));

        let p = single(1.0, 1.0, 1.0).pushforward(2.0);
        assert_eq!((p.atoms[0].u1, p.atoms[0].u2, p.atoms[0].mass), (0.25, 0.25, 1.0));

        assert!(JumpMeasure::zero().pushforward(3.0).atoms.is_empty());
    }

    #[test]
    fn mean_component_examples() {
        let mu = single(1.0, 0.0, 2.0);
        assert_eq!(mu.mean_component(Kind::One), 2.0);
        assert_eq!(mu.mean_component(Kind::Two), 0.0);
        assert_eq!(JumpMeasure::zero().mean_component(Kind::One), 0.0);
    }

    #[test]
    fn lambda_examples() {
        let mu = single(1.0, 0.0, 2.0);
        assert_relative_eq!(mu.lambda_nk(1.0, 2, 1).unwrap(), 0.5);
        assert_relative_eq!(mu.lambda_nk(1.0, 2, 2).unwrap(), 0.5);
        assert_eq!(JumpMeasure::zero().lambda_nk(1.7, 5, 3).unwrap(), 0.0);
        assert!(mu.lambda_nk(1.0, 2, 0).is_err());
        assert!(mu.lambda_nk(1.0, 2, 3).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_relative_eq!(single(1.0, 0.0, 1.0).gamma_n(1.0, 1, Kind::One), -0.5);
        assert_relative_eq!(single(0.0, 1.0, 1.0).gamma_n(1.0, 1, Kind::One), 0.5);
        assert_eq!(JumpMeasure::zero().gamma_n(1.0, 4, Kind::Two), 0.0);
    }

    #[test]
    fn vartheta_examples() {
        let mu = single(1.0, 0.0, 5.0);
        for n in [1, 2, 7] {
            assert_eq!(mu.vartheta_n(0.3, n), 0.0);
        }
        assert_relative_eq!(single(0.0, 1.0, 1.0).vartheta_n(1.0, 2), 0.75);
        assert_eq!(JumpMeasure::zero().vartheta_n(1.0, 3), 0.0);
    }

    #[test]
    fn sc_and_mc_examples() {
        let diag = JumpMeasure::from_triples(&[[1.0, 1.0, 0.7], [0.3, 0.3, 2.0]]).unwrap();
        assert_relative_eq!(sc_coefficient(&diag, &diag, 1.3), 0.0);
        let a = single(1.0, 0.0, 1.0);
        assert_relative_eq!(sc_coefficient(&a, &JumpMeasure::zero(), 1.0), -0.5);
        assert_eq!(sc_coefficient(&JumpMeasure::zero(), &a, 1.0), 0.0);

        assert_relative_eq!(single(0.0, 1.0, 1.0).mc_coefficient(1.0, Kind::One), 0.5);
        assert_eq!(a.mc_coefficient(1.0, Kind::One), 0.0);
        assert_eq!(JumpMeasure::zero().mc_coefficient(1.0, Kind::Two), 0.0);
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let one = single(0.2, 0.1, 4.0);
        for _ in 0..10 {
            assert_eq!(one.sample_atom(&mut rng).unwrap(), one.atoms()[0]);
        }
        assert!(matches!(
            JumpMeasure::zero().sample_atom(&mut rng),
            Err(Error::EmptyMeasure)
        ));

        let two = JumpMeasure::from_triples(&[[1.0, 0.0, 1.0], [0.0, 1.0, 3.0]]).unwrap();
        let draws = 100_000;
        let hits = (0..draws).filter(|_| two.sample_index(&mut rng).unwrap() == 1).count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");

        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            assert_eq!(two.sample_index(&mut a).unwrap(), two.sample_index(&mut b).unwrap());
        }
    }

    fn binomial(n: u32, k: u32) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    fn atoms() -> impl Strategy<Value = JumpMeasure> {
        prop::collection::vec((0.0..5.0f64, 0.0..5.0f64, 0.01..3.0f64), 0..6).prop_map(|v| {
            let triples: Vec<[f64; 3]> = v.into_iter().map(|(a, b, m)| [a + 1e-3, b, m]).collect();
            JumpMeasure::from_triples(&triples).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pushforward_conserves_mass_and_stays_in_simplex(mu in atoms(), z in 0.01..50.0f64) {
            let p = mu.pushforward(z);
            prop_assert!((p.total_mass() - mu.total_mass()).abs() <= 1e-12 * (1.0 + mu.total_mass()));
            for a in &p.atoms {
                prop_assert!(a.u1 + a.u2 < 1.0);
                prop_assert!(a.rest > 0.0);
            }
            for n in 1..=64u32 {
                prop_assert!(p.vartheta(n) >= 0.0 && p.vartheta(n).is_finite());
                for k in [1, n / 2 + 1, n] {
                    let l = p.lambda(n, k).unwrap();
                    prop_assert!(l >= 0.0 && l.is_finite());
                }
            }
        }

        #[test]
        fn binomial_identity(mu in atoms(), z in 0.05..10.0f64, n in 1u32..=10) {
            // Σ_{k=0}^{n} C(n,k) ∫ u₁^k (1−u₁−u₂)^{n−k} = ∫ (1−u₂)^n
            let p = mu.pushforward(z);
            let k0: f64 = p.atoms.iter().map(|a| a.mass * a.rest.powi(n as i32)).sum();
            let lhs = k0 + (1..=n).map(|k| binomial(n, k) * p.lambda(n, k).unwrap()).sum::<f64>();
            let rhs: f64 = p.atoms.iter().map(|a| a.mass * (1.0 - a.u2).powi(n as i32)).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn functionals_are_linear(a in atoms(), b in atoms(), z in 0.05..10.0f64, n in 1u32..=8) {
            let ab = a.plus(&b);
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * (1.0 + x.abs() + y.abs());
            prop_assert!(close(ab.mean_component(Kind::One), a.mean_component(Kind::One) + b.mean_component(Kind::One)));
            prop_assert!(close(ab.lambda_nk(z, n, 1).unwrap(), a.lambda_nk(z, n, 1).unwrap() + b.lambda_nk(z, n, 1).unwrap()));
            prop_assert!(close(ab.gamma_n(z, n, Kind::Two), a.gamma_n(z, n, Kind::Two) + b.gamma_n(z, n, Kind::Two)));
            prop_assert!(close(ab.vartheta_n(z, n), a.vartheta_n(z, n) + b.vartheta_n(z, n)));
            prop_assert!(close(ab.mc_coefficient(z, Kind::One), a.mc_coefficient(z, Kind::One) + b.mc_coefficient(z, Kind::One)));
            prop_assert!(close(sc_coefficient(&ab, &ab, z), sc_coefficient(&a, &a, z) + sc_coefficient(&b, &b, z)));
            prop_assert_eq!(ab.pushforward(z).atoms.len(), a.atoms().len() + b.atoms().len());
        }
    }
}
