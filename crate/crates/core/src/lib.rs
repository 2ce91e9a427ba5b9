//! Numerical laboratory for constant step-size stochastic gradient descent.
//!
//! The library treats SGD with a fixed step size as a homogeneous Markov
//! chain and provides the pieces needed to study it quantitatively:
//!
//! * [`models`]: finite-support least-squares and logistic objectives with
//!   exact gradient, Hessian, third-derivative and noise-covariance oracles.
//! * [`chain`]: the recursion itself, Polyak-Ruppert averaging, decaying-step
//!   baselines and trajectory recording on geometric grids.
//! * [`extrapolate`]: Richardson-Romberg combinations of averaged iterates
//!   run at step sizes (g, 2g) and (g, 2g, 4g), optionally coupled.
//! * [`tensorops`]: dense Kronecker-product operator calculus on d x d
//!   matrices, exact stationary second moments for quadratic objectives and
//!   the leading averaged-bias constant.
//! * [`stationary`]: Monte Carlo estimation of stationary quantities with
//!   batch-means errors, bias/variance scaling fits, synchronous-coupling
//!   contraction curves and moment-growth checks.
//! * [`flow`]: the deterministic gradient flow, its Poisson-equation
//!   solutions and weak-error measurements against the flow predictions.
//! * [`experiments`] and [`verify`]: the reproducible experiment harness
//!   behind the `sgdlab` command-line tool.
//!
//! All randomness flows through [`rng`], which derives independent named
//! streams from a master seed so that every run is reproducible and replicas
//! can be distributed over worker threads without coordination.

pub mod chain;
pub mod config;
pub mod error;
pub mod experiments;
pub mod extrapolate;
pub mod flow;
pub mod models;
pub mod output;
pub mod rng;
pub mod stationary;
pub mod stats;
pub mod tensorops;
pub mod verify;

pub use error::{Error, Result};
