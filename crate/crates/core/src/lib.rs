//! Geostatistical inference engine for disease-prevalence surveys that use
//! two diagnostic tests.
//!
//! The engine fits binomial spatial generalized linear mixed models by Monte
//! Carlo maximum likelihood, produces plug-in spatial predictions with
//! exceedance probabilities, and validates fitted covariance structures with
//! a variogram-based Monte Carlo envelope test. Two bivariate structures are
//! provided: an asymmetric form that calibrates a gold-standard diagnostic
//! against a cheaper one, and a symmetric form that predicts both
//! diagnostics jointly through a shared spatial process.

pub mod error;
pub mod geometry;
pub mod gp;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod prediction;
pub mod rng;
pub mod validation;

pub use error::{Error, Result};
