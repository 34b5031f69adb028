//! Numerical solver for worst-case expectation bounds of the form
//!
//! ```text
//! phi(f) = sup { ∫ f dν : ν in Q }
//! ```
//!
//! where `Q` is a set of probability measures cut out by hedging
//! constraints (fixed marginals, martingale increments, moment
//! equalities). The solver works on the dual side: it minimizes the
//! penalized superhedging objective
//!
//! ```text
//! ∫ h dμ0  +  ∫ β_γ(f − h) dθ
//! ```
//!
//! over a structured hedging space whose building blocks are small
//! fully connected ReLU networks, using fresh Monte-Carlo batches from
//! a sampling measure `θ` and the Adam optimizer. Exact linear-program
//! and closed-form oracles are included so every solver run can be
//! checked against an independent reference on desk-scale instances.
//!
//! Module map:
//!
//! - [`penalty`]: the penalty families `β_γ` (exponential and power),
//!   their derivatives and convex conjugates.
//! - [`measures`]: composable sampling measures with seeded sampling,
//!   acceptance-rejection for reweighted measures, and quantization.
//! - [`problems`]: cost functions and hedging structures for the
//!   supported problem classes (multi-marginal transport, martingale
//!   transport, moment-constrained transport, tail-probability bounds,
//!   robust portfolio selection).
//! - [`network`]: feed-forward networks, reverse-mode gradients and
//!   Adam steps on flat parameter vectors.
//! - [`solver`]: the stochastic-gradient training loop, dual/primal
//!   value estimators, duality-gap bounds and the reference-measure
//!   update.
//! - [`oracles`]: an exact dense-simplex solver for discretized
//!   instances, comonotone references and closed-form values.
//!
//! The crate is `no_std`-compatible (`alloc` is required); disable the
//! default `std` feature for freestanding builds. Wall-clock timing of
//! solves is only recorded when `std` is available.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod batch;
pub mod error;
mod linalg;
pub mod measures;
pub mod network;
pub mod oracles;
pub mod penalty;
pub mod problems;
pub mod rng;
pub mod solver;

pub use batch::PointBatch;
pub use error::{Error, Result};
pub use measures::{SamplingMeasure, WeightFunction};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use problems::{CostFunction, HedgeFunction, HedgingStructure, ProblemSpec};
pub use solver::{SolveReport, TrainConfig};
