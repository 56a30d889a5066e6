//! Simulation and verification toolkit for the culled frequency process of a
//! two-type continuous-state branching process with immigration and
//! competition.
//!
//! * [`measures`]: finite atomic jump measures and their integral functionals.
//! * [`model`]: model parameters, SDE coefficients and the generator on
//!   monomials.
//! * [`simulate`]: the branching SDE, the culled frequency SDE and the
//!   culling chain, with Monte Carlo estimators.
//! * [`dual`]: the block-counting dual chain and the duality checks.
//! * [`ode`]: the large-population limit ODE and its equilibria.
//! * [`cli`]: the `freqsim` command-line front end.

pub mod cli;
pub mod dual;
pub mod error;
pub mod io;
pub mod measures;
pub mod model;
pub mod ode;
pub mod simulate;
pub mod streams;

pub use error::{Error, Result};
pub use measures::{Atom, JumpMeasure, Kind, PushedAtom, PushedMeasure};
pub use model::{validate_params, ModelParams, PolynomialMalthusian};
