//! Drift-implicit Euler time stepping for stochastic evolution equations
//!
//! ```text
//! du = A(t, u) dt + Σ_k B_k(t, u) dW^k
//! ```
//!
//! posed in a Gelfand triple `V ↪ H ↪ V*`, realized here on a one-dimensional
//! periodic grid. The crate contains the discrete triple ([`space`]), the
//! operator contract and an example gallery of quasilinear parabolic SPDEs
//! ([`problem`]), coupled Brownian increments ([`noise`]), the implicit scheme
//! with its inner solvers ([`stepper`]) and a Monte-Carlo harness measuring
//! strong convergence rates ([`study`]).

pub mod banded;
pub mod cli;
pub mod error;
pub mod noise;
pub mod problem;
pub mod space;
pub mod stepper;
pub mod study;

pub use stepper::{CoeffMode, FirstStepDiffusion, InnerMethod, InnerSolverConfig, SchemeConfig, Trajectory};
pub use study::{ConvergenceReport, ErrorSample, StudyConfig};

pub use error::{Error, Result};
pub use noise::BrownianLattice;
pub use problem::{DeclaredConstants, EvolutionProblem, ProbeReport};
pub use space::{GridSpace, StateVector};


