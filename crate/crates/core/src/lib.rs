//! Bayesian shape-constrained spline regression for S-shaped longitudinal
//! trajectories.
//!
//! Progression curves are modelled as integrated quadratic splines whose
//! coefficients are nonnegative and unimodal (monotone curve, unique
//! inflection point) with boundary coefficients pinned to zero (vanishing
//! derivatives at both ends). Inference runs a Gibbs sampler over a
//! hierarchical random-intercept model; the coefficient block is drawn from
//! a truncated Gaussian with exact Hamiltonian dynamics, and the inflection
//! index from Monte Carlo orthant probabilities.
//!
//! Module map:
//!
//! - [`spline_basis`]: B-spline / I-spline bases and beta-kernel knot placement.
//! - [`shape_constraints`]: Planck-taper window, prior precision, coefficient cones.
//! - [`constrained_gaussian`]: Gaussian mass of polyhedral regions and exact HMC sampling.
//! - [`data`]: long-format dataset ingestion and preprocessing.
//! - [`model`]: likelihood, priors and Gaussian full conditionals.
//! - [`sampler`]: the Gibbs cycle and posterior sample storage.
//! - [`summary`]: curve summaries, milestones and effect tables.
//! - [`simulation`]: synthetic truths, data generator and evaluation metrics.

pub mod config;
pub mod constrained_gaussian;
pub mod data;
pub mod error;
pub mod model;
pub mod normal;
pub mod sampler;
pub mod shape_constraints;
pub mod simulation;
pub mod spline_basis;
pub mod summary;

pub use error::{Error, Result};
