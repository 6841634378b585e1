//! Multivariate heavy-tailed random vectors whose pairwise tail dependence is
//! parameterized separately from correlation.
//!
//! The crate provides the univariate tail transform ([`htqf`]), the
//! lower-triangular and one-factor dependence models ([`dependence`]), their
//! recursive quantile-regression / method-of-moments fit ([`learning`]), an
//! AR(1)-GARCH(1,1)-t pre-filter ([`garch`]), proxy tail dependence
//! estimators ([`tail_metrics`]), two-dimensional coverage backtests
//! ([`coverage`]) and competing baseline models ([`baselines`]).

pub mod baselines;
pub mod coverage;
pub mod dependence;
pub mod error;
pub mod garch;
pub mod htqf;
pub mod learning;
pub mod model_io;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod tail_metrics;

pub use dependence::{JointSampler, OneFactorModel, TriangularModel};
pub use error::{Error, Result};
pub use htqf::{HtqfParams, LatentLaw};
