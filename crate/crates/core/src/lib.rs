//! Numerical laboratory for classifier-free guidance on tractable targets.
//!
//! The crate pairs every guided sampler with a closed form or brute-force
//! oracle: Gaussian-mixture priors with linear-Gaussian or class-mixture
//! classifiers ([`analytic`]), guidance combinators ([`guidance`]),
//! probability-flow solvers ([`solvers`]), the Gibbs-like refinement sampler
//! and a Feynman–Kac corrector ([`cfgig`], [`smc`]), Gaussian closed forms
//! ([`gaussian_theory`]) and sample-based metrics ([`metrics`]).
//! [`experiment`] ties them to declarative configs and CSV/JSON artifacts.

pub mod analytic;
pub mod error;
pub mod experiment;
pub mod gaussian_theory;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod smc;
pub mod solvers;
pub mod cfgig;

pub use error::{Error, Result};

/// A point in data space.
pub type Point = nalgebra::DVector<f64>;
