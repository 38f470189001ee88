//! Online parameter estimation for general state-space hidden Markov models.
//!
//! The crate implements recursive maximum likelihood (RML) where the
//! tangent-filter statistics needed for the per-observation score are
//! maintained by the PaRIS backward-sampling smoother (linear cost in the
//! number of particles). The quadratic-cost forward-filtering backward
//! smoother is kept as a baseline, and an exact Kalman score recursion on a
//! linear-Gaussian model serves as the reference for validation.
//!
//! Layout:
//!
//! * [`model`]: state-space model abstraction, the stochastic volatility and
//!   linear-Gaussian models, parameter vectors and constraint sets.
//! * [`rng`] and [`sampling`]: keyed random streams, categorical draws and
//!   accept-reject backward index sampling.
//! * [`filter`]: bootstrap particle filter targeting the prediction filter.
//! * [`smoother`]: PaRIS and quadratic updates of the tangent statistics.
//! * [`rml`]: score assembly and the Robbins-Monro parameter recursion.
//! * [`kalman`]: exact log-likelihood and score for the linear-Gaussian model.
//! * [`config`], [`experiment`], [`bench`], [`oracle`]: the command-line
//!   harness (simulation, replicated runs, benchmarks, oracle checks).

pub mod bench;
pub mod config;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod io;
pub mod kalman;
pub mod model;
pub mod oracle;
pub mod rml;
pub mod rng;
pub mod sampling;
pub mod smoother;

pub use error::{Error, Result};
pub use model::{AnyModel, ConstraintSet, LgssmModel, ParameterVector, StateSpaceModel, SvModel};
pub use rml::{Algorithm, OnlineRml, RmlOptions, ScoreIncrement, StepRecord, StepSchedule};
pub use rng::{Purpose, RngStream, Streams};
