//! Friction estimation for hydraulic cylinders.
//!
//! The crate covers the full workflow for estimating the friction force
//! acting on a hydraulic cylinder piston from position and chamber-pressure
//! measurements sampled at a fixed rate:
//!
//! * [`signal`] — causal filtering, numerical differentiation, and feature
//!   standardization for the measured channels.
//! * [`plant`] — a forward simulation of a single-rod cylinder (prescribed
//!   pressures or valve-driven) with an injected ground-truth friction model,
//!   used to produce synthetic datasets with known answers.
//! * [`inverse`] — friction computed from the equations of motion (the
//!   "calculated" friction that serves as the training/evaluation target).
//! * [`lugre`] — a LuGre dynamic friction model plus a two-stage parameter
//!   identification routine; the physics baseline.
//! * [`lstm`] — a small stacked-LSTM regression engine trained with Adam on
//!   mean absolute error, written in plain Rust.
//! * [`forest`] — a random-forest regressor over the LSTM's learned features.
//! * [`hybrid`] — the two-stage estimator (LSTM features + forest head),
//!   batch and streaming inference, and hyperparameter search.
//! * [`eval`] — error metrics, residual diagnostics, parity fits, and
//!   latency benchmarking.
//! * [`io`] — dataset/model/report file formats with exact round-tripping.
//!
//! Numeric code is generic over the floating-point type through [`Scalar`];
//! the aliases at the crate root pin the common `f64` instantiations.

pub mod error;
pub mod eval;
pub mod forest;
pub mod hybrid;
pub mod inverse;
pub mod io;
pub mod lstm;
pub mod lugre;
mod mat;
pub mod plant;
pub mod signal;
pub mod simplex;

pub use error::Error;
pub use mat::Matrix;

use rand::Rng;

/// Floating-point scalar the numeric modules are generic over.
///
/// Implemented for `f32` and `f64`. The `f64` instantiation is the supported
/// configuration for file formats and the CLI; `f32` trades accuracy for
/// footprint and is exercised by a handful of smoke tests only.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + std::iter::Sum<Self>
    + for<'a> std::iter::Sum<&'a Self>
    + serde::Serialize
    + serde::de::DeserializeOwned
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`, rounding to the nearest representable value.
    fn from_f64(value: f64) -> Self;

    /// Widens to `f64` exactly for `f64`/`f32` inputs.
    fn to_f64(self) -> f64;

    /// One standard-normal draw from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn from_f64(value: f64) -> Self {
        value as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

impl Scalar for f64 {
    fn from_f64(value: f64) -> Self {
        value
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

/// Measurement series sampled at the fixed acquisition rate, in SI units.
pub type Series = signal::TimeSeries<f64>;
/// Filtered kinematic frame (position, velocity, acceleration, pressures).
pub type Frame = signal::KinematicFrame<f64>;
/// Friction labels plus the feature matrix derived from one recording.
pub type LabelSet = inverse::LabeledDataset<f64>;
/// LuGre parameter set.
pub type LugreParams = lugre::LuGreParams<f64>;
/// Trained two-stage estimator.
pub type HybridModel = hybrid::HybridModel<f64>;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;
