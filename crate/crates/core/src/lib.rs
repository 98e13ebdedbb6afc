//! Physics-informed DeepONet operator learning with multi-objective
//! evolutionary training and replica-exchange Langevin refinement.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`diffkit`] — scalar/vector automatic differentiation (reverse-mode for
//!   parameters, forward-mode jets for query coordinates) and an Adam stepper.
//! - [`opnet`] — branch/trunk operator networks with an optional spectral
//!   mixing layer, plus checkpoint I/O.
//! - [`physics`] — data, residual and boundary losses for the Burgers and
//!   time-fractional diffusion-wave benchmarks.
//! - [`refsolve`] — reference solvers, exact solutions and dataset assembly.
//! - [`evoopt`] — refined NSGA-III with reference-direction niching and
//!   Pareto-front thinning.
//! - [`resgld`] — replica-exchange stochastic gradient Langevin dynamics with
//!   bias-corrected swaps.
//! - [`uqbench`] — ensemble statistics, confidence bands and error metrics.
//! - [`cli`] — experiment configuration and the `generate`/`train`/`sample`/
//!   `evaluate`/`report` commands.

pub mod cli;
pub mod diffkit;
pub mod evoopt;
pub mod opnet;
pub mod physics;
pub mod refsolve;
pub mod resgld;
pub mod rngutil;
pub mod uqbench;
