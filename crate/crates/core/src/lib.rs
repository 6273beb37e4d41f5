//! Hierarchical variance-optimal estimation of location parameters under
//! missing data.
//!
//! Rows are grouped by their missing pattern; each pattern's moment estimate
//! is corrected with information absorbed, bottom-up, from the patterns with
//! strictly more missing components. With known covariances the corrected
//! estimator is unbiased with the smallest dispersion ellipsoid in its linear
//! class; with plug-in covariances the same holds asymptotically. The crate
//! also ships the right-censoring specialization (which reproduces the
//! Kaplan-Meier product-limit estimator exactly), closed forms for the
//! bivariate case (mean vector, change score, compound symmetry, and a
//! non-ignorable shift adjustment), and a seeded Monte Carlo harness used to
//! validate the variance formulas.
//!
//! The numeric core is generic over [`Scalar`] (any `f32`/`f64`-like real
//! field); the simulation harness is `f64`.

pub mod bivariate;
pub mod error;
pub mod estimator;
pub mod km;
pub mod params;
pub mod pattern;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64`-backed aliases for the common instantiations.
pub type Dataset64 = pattern::Dataset<f64>;
pub type ParameterDef64 = params::ParameterDef<f64>;
pub type CovarianceMode64 = estimator::CovarianceMode<f64>;
pub type HierarchicalEstimate64 = estimator::HierarchicalEstimate<f64>;
pub type CensoredSample64 = km::CensoredSample<f64>;
pub type StepCdf64 = km::StepCdf<f64>;
pub type BivariateConfig64 = bivariate::BivariateConfig<f64>;
