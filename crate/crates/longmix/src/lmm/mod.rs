//! The mixed model at the heart of the pipeline: a random intercept per
//! subject (or per subject-day) on top of serially correlated residuals
//! within each day's measurement series, estimated by REML or ML.
//!
//! The marginal covariance of a group's stacked observations is
//! `σ_b²·J + σ_ε²·blockdiag(R)` where `J` is the all-ones matrix over the
//! group and `R` is the within-series correlation (AR1, compound-symmetric,
//! or identity). Residual correlation never crosses a day boundary; only the
//! shared intercept does.

mod cov;
mod fit;
mod gls;

pub use cov::{correlation_matrix, marginal_covariance};
pub use fit::{
    fit, fit_with_options, format_estimate_ci, information_criteria, round_away_from_zero,
    stratified_fit, wald_intervals, ConvergenceReport, CountsReport, Criteria, EffectRow,
    EffectTable, FitOptions, FitReport, FittedModel, StratifiedFit, StratumDifference,
    VarianceReport,
};
pub use gls::{gls_estimate, objective, GlsFit};

use crate::dataset::CorrFamily;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised during model estimation.
#[derive(Debug, Error)]
pub enum LmmError {
    #[error("lmm: correlation {rho} outside the {family:?} family's domain")]
    RhoOutOfDomain { rho: f64, family: CorrFamily },
    #[error("lmm: variance parameter {name} = {value} invalid ({requirement})")]
    InvalidVariance { name: &'static str, value: f64, requirement: &'static str },
    #[error("lmm: design matrix is rank deficient (column '{column}' is linearly dependent)")]
    SingularDesign { column: String },
    #[error("lmm: covariance block for group '{group}' is not positive definite")]
    NonPositiveDefiniteV { group: String },
    #[error("lmm: optimizer failed to converge in {starts} starts × {max_iter} iterations")]
    DidNotConverge { starts: usize, max_iter: usize },
    #[error(
        "lmm: correlation parameter unidentifiable: every series has a single \
         observation (family {family:?} needs at least one series of length ≥ 2)"
    )]
    Identifiability { family: CorrFamily },
    #[error("lmm: fit has not converged; refusing to compute {what}")]
    NotConverged { what: &'static str },
    #[error("lmm: stratum '{stratum}': {source}")]
    Stratum { stratum: String, #[source] source: Box<LmmError> },
    #[error("lmm: stratification variable has a single level")]
    SingleStratum,
    #[error("lmm: unknown stratification variable '{name}' (only 'smoker' is available)")]
    UnknownStratifier { name: String },
    #[error("lmm: confidence level {level} outside [0, 1)")]
    InvalidLevel { level: f64 },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
}

/// Variance parameters of the mixed model: random-intercept variance,
/// residual variance, and (except under the Independent family) the
/// within-series residual correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    /// Random-intercept variance σ_b² ≥ 0.
    pub sigma_b2: f64,
    /// Residual variance σ_ε² > 0.
    pub sigma_e2: f64,
    /// Residual correlation ρ; `None` under the Independent family.
    pub rho: Option<f64>,
}

impl VarianceParams {
    /// Parameters for a correlated-residual family.
    pub fn with_rho(sigma_b2: f64, sigma_e2: f64, rho: f64) -> Self {
        VarianceParams { sigma_b2, sigma_e2, rho: Some(rho) }
    }

    /// Parameters for the Independent family (no ρ).
    pub fn independent(sigma_b2: f64, sigma_e2: f64) -> Self {
        VarianceParams { sigma_b2, sigma_e2, rho: None }
    }

    /// Validate against a correlation family's domain: σ_ε² > 0, σ_b² ≥ 0,
    /// ρ ∈ (−1, 1) for AR1, ρ ∈ [0, 1) for compound symmetry, ρ absent for
    /// Independent.
    pub fn validate(&self, family: CorrFamily) -> Result<(), LmmError> {
        if !(self.sigma_e2 > 0.0) || !self.sigma_e2.is_finite() {
            return Err(LmmError::InvalidVariance {
                name: "sigma_e2",
                value: self.sigma_e2,
                requirement: "must be finite and > 0",
            });
        }
        if !(self.sigma_b2 >= 0.0) || !self.sigma_b2.is_finite() {
            return Err(LmmError::InvalidVariance {
                name: "sigma_b2",
                value: self.sigma_b2,
                requirement: "must be finite and ≥ 0",
            });
        }
        match (family, self.rho) {
            (CorrFamily::Independent, None) => Ok(()),
            (CorrFamily::Independent, Some(rho)) => {
                Err(LmmError::RhoOutOfDomain { rho, family })
            }
            (_, None) => Err(LmmError::InvalidVariance {
                name: "rho",
                value: f64::NAN,
                requirement: "required for AR1/CompoundSymmetric",
            }),
            (CorrFamily::Ar1, Some(rho)) => {
                if rho > -1.0 && rho < 1.0 {
                    Ok(())
                } else {
                    Err(LmmError::RhoOutOfDomain { rho, family })
                }
            }
            (CorrFamily::CompoundSymmetric, Some(rho)) => {
                if (0.0..1.0).contains(&rho) {
                    Ok(())
                } else {
                    Err(LmmError::RhoOutOfDomain { rho, family })
                }
            }
        }
    }
}
