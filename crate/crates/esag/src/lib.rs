//! Truncated elliptically symmetric angular Gaussian (ESAG⁺) distributions and
//! Bayesian spatial hyperspheric regression for compositional data.
//!
//! Compositional observations (non-negative vectors with unit sum) are mapped to
//! the non-negative orthant of the unit hypersphere by the element-wise square
//! root. This crate provides:
//!
//! - [`sphere`]: simplex ↔ sphere transforms and uniform sampling on the sphere
//!   and its non-negative orthant;
//! - [`dist`]: the ESAG distribution in its unconstrained `(μ, γ)`
//!   parameterization — shape assembly, density, and sampling;
//! - [`truncated`]: the ESAG⁺ distribution (truncation to the non-negative
//!   orthant) with a Monte Carlo normalizing constant;
//! - [`spatial`]: Matérn 3/2 correlation and the matrix-variate linear model of
//!   coregionalization (LMC) used for the latent spatial fields;
//! - [`model`]: the Bayesian hierarchical regression (softplus link, uncertainty
//!   propagation term, priors, likelihood);
//! - [`mcmc`]: blocked random-walk Metropolis with an elliptical slice sampler
//!   for the latent fields, plus R-hat/ESS diagnostics;
//! - [`predict`]: compositional prediction estimators and model scoring
//!   (logarithmic score, chi-square compositional distance).

pub mod dist;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod predict;
pub mod quad;
pub mod spatial;
pub mod sphere;
pub mod truncated;

pub use error::{Error, Result};
