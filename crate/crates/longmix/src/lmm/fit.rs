//! Model fitting and inference: multi-start minimization of the REML/ML
//! objective over transformed variance parameters, Wald intervals,
//! information criteria, and per-stratum fits with difference tests.

use super::gls::{gls_estimate, ObjectiveWorkspace};
use super::{marginal_covariance, LmmError, VarianceParams};
use crate::classical::dist;
use crate::dataset::{
    encode_design, CorrFamily, DesignMatrices, FitMethod, LongDataset, ModelSpec,
};
use crate::linalg::Matrix;
use crate::optim::{self, OptimError, OptimProblem};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

/// Optimizer controls for [`fit_with_options`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Relative convergence tolerance handed to the optimizer.
    pub tol_rel: f64,
    /// Iteration budget per start.
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol_rel: 1e-8, max_iter: 2000 }
    }
}

/// A converged mixed-model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// Fixed-effect column labels, aligned with `beta`.
    pub column_names: Vec<String>,
    /// Fixed-effect estimates.
    pub beta: Vec<f64>,
    /// Estimated covariance of `beta`: (XᵀV̂⁻¹X)⁻¹.
    pub beta_cov: Matrix,
    /// Estimated variance parameters.
    pub vparams: VarianceParams,
    /// Maximized (restricted) log-likelihood.
    pub loglik: f64,
    pub n_obs: usize,
    /// Number of fixed-effect columns.
    pub p: usize,
    /// Number of free variance parameters (2 or 3 by family).
    pub k_var: usize,
    pub converged: bool,
    /// Total optimizer iterations across all starts.
    pub iterations: usize,
    /// True when an estimate sits at the parameter-space boundary
    /// (σ̂_b² < 1e-10 or |ρ̂| > 1 − 1e-6).
    pub boundary: bool,
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    /// estimate / std_error; absent when the standard error is zero.
    pub z_value: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when the interval collapsed to a point (zero standard error).
    pub degenerate: bool,
}

/// Coefficient table with symmetric Wald intervals at a common level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub level: f64,
    pub rows: Vec<EffectRow>,
}

/// AIC/BIC pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub aic: f64,
    pub bic: f64,
}

/// Fit the mixed model with default optimizer controls.
///
/// Minimizes the REML/ML objective over the transformed variance parameters
/// from five deterministic starts (three correlation values crossed with
/// variance splits seeded by the pooled OLS residual variance) and keeps the
/// best converged result. The returned coefficients come from one final GLS
/// solve at the winning parameters, so re-running [`gls_estimate`] at
/// `vparams` reproduces `beta` exactly.
pub fn fit(data: &LongDataset, spec: &ModelSpec) -> Result<FittedModel, LmmError> {
    fit_with_options(data, spec, &FitOptions::default())
}

/// [`fit`] with explicit optimizer controls.
pub fn fit_with_options(
    data: &LongDataset,
    spec: &ModelSpec,
    options: &FitOptions,
) -> Result<FittedModel, LmmError> {
    spec.validate()?;
    let design = encode_design(data, spec)?;
    let y = data.response_vector();
    fit_design(&design, &y, spec, options)
}

fn fit_design(
    design: &DesignMatrices,
    y: &[f64],
    spec: &ModelSpec,
    options: &FitOptions,
) -> Result<FittedModel, LmmError> {
    let family = spec.corr_family;
    if family != CorrFamily::Independent
        && design.series.iter().all(|s| s.rows.len() < 2)
    {
        return Err(LmmError::Identifiability { family });
    }
    let p = design.x.n_cols();
    let n = y.len();

    // OLS pass: rank check with a named column, plus residual-variance
    // heuristics that seed the optimizer starts.
    let (between0, within0, s2) = ols_heuristics(design, y)?;

    let rho_grid: &[f64] = match family {
        CorrFamily::Ar1 => &[-0.5, 0.0, 0.5],
        CorrFamily::CompoundSymmetric => &[0.25, 0.5, 0.75],
        CorrFamily::Independent => &[],
    };
    let mid_rho = match family {
        CorrFamily::Ar1 => 0.0,
        _ => 0.5,
    };
    let mut start_params: Vec<VarianceParams> = Vec::new();
    if family == CorrFamily::Independent {
        start_params.push(VarianceParams::independent(between0, within0));
        start_params.push(VarianceParams::independent(0.25 * s2, 0.75 * s2));
        start_params.push(VarianceParams::independent(0.75 * s2, 0.25 * s2));
    } else {
        for &r in rho_grid {
            start_params.push(VarianceParams::with_rho(between0, within0, r));
        }
        start_params.push(VarianceParams::with_rho(0.25 * s2, 0.75 * s2, mid_rho));
        start_params.push(VarianceParams::with_rho(0.75 * s2, 0.25 * s2, mid_rho));
    }
    let starts: Vec<Vec<f64>> = start_params
        .iter()
        .map(|vp| optim::to_unconstrained(vp, family))
        .collect::<Result<_, _>>()?;

    let workspace = RefCell::new(ObjectiveWorkspace::new(design, y, spec));
    let objective = |x: &[f64]| -> f64 {
        let vp = optim::from_unconstrained(x, family);
        // Inadmissible points (correlation saturating in floating point, a
        // covariance block losing positive definiteness) act as an infinite
        // barrier rather than an error.
        workspace
            .borrow_mut()
            .eval(&vp)
            .unwrap_or(f64::INFINITY)
    };
    let mut problem = OptimProblem::new(objective, starts);
    problem.tol_rel = options.tol_rel;
    problem.max_iter = options.max_iter;
    let result = optim::minimize(&problem).map_err(|e| match e {
        OptimError::DidNotConverge { starts, max_iter } => {
            LmmError::DidNotConverge { starts, max_iter }
        }
        other => LmmError::Optim(other),
    })?;

    let vparams = optim::from_unconstrained(&result.argmin, family);
    let boundary = vparams.sigma_b2 < 1e-10
        || vparams.rho.is_some_and(|r| r.abs() > 1.0 - 1e-6);
    // Final solve through the public GLS surface at the winning parameters.
    let blocks = marginal_covariance(&vparams, design, family)?;
    let gls = gls_estimate(&design.x, y, &blocks)?;
    Ok(FittedModel {
        spec: *spec,
        column_names: design.column_names.clone(),
        beta: gls.beta,
        beta_cov: gls.beta_cov,
        vparams,
        loglik: -result.value,
        n_obs: n,
        p,
        k_var: spec.k_var(),
        converged: true,
        iterations: result.iterations,
        boundary,
    })
}

/// OLS residual pass: returns (between-variance start, within-variance
/// start, pooled residual variance), all clamped away from zero.
fn ols_heuristics(design: &DesignMatrices, y: &[f64]) -> Result<(f64, f64, f64), LmmError> {
    let n = design.x.n_rows();
    let p = design.x.n_cols();
    let beta = crate::linalg::ols_beta(&design.x, y).map_err(|e| LmmError::SingularDesign {
        column: design.column_names.get(e.0).cloned().unwrap_or_else(|| format!("column {}", e.0)),
    })?;
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - design.x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let dof = n.saturating_sub(p).max(1) as f64;
    let s2 = (resid.iter().map(|r| r * r).sum::<f64>() / dof).max(1e-12);

    // Between/within split over the random-intercept groups.
    let n_groups = design.groups.len();
    let mut start = 0;
    let mut means = Vec::with_capacity(n_groups);
    let mut within_ss = 0.0;
    for g in &design.groups {
        let slice = &resid[start..start + g.n_obs];
        let mean = slice.iter().sum::<f64>() / g.n_obs as f64;
        within_ss += slice.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>();
        means.push(mean);
        start += g.n_obs;
    }
    let (between_raw, within_raw) = if n_groups >= 2 && n > n_groups {
        let grand = means.iter().sum::<f64>() / n_groups as f64;
        let between =
            means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (n_groups - 1) as f64;
        let within = within_ss / (n - n_groups) as f64;
        // Group means carry within-noise of order σ_w²/m̄; subtract it to
        // aim the start nearer the intercept variance itself.
        let mean_size = n as f64 / n_groups as f64;
        ((between - within / mean_size).max(0.0), within)
    } else {
        (0.5 * s2, 0.5 * s2)
    };
    let floor = 0.05 * s2;
    Ok((between_raw.max(floor), within_raw.max(floor), s2))
}

/// Wald coefficient table at the given confidence level.
///
/// Intervals are `estimate ± z·se` with `z` the standard-normal
/// `(1+level)/2` quantile and `se` the square root of the corresponding
/// `beta_cov` diagonal entry.
pub fn wald_intervals(fit: &FittedModel, level: f64) -> Result<EffectTable, LmmError> {
    if !(0.0..1.0).contains(&level) {
        return Err(LmmError::InvalidLevel { level });
    }
    if !fit.converged {
        return Err(LmmError::NotConverged { what: "Wald intervals" });
    }
    let z = dist::normal_inverse_cdf(0.5 + 0.5 * level);
    let rows = fit
        .column_names
        .iter()
        .zip(&fit.beta)
        .enumerate()
        .map(|(j, (name, &estimate))| {
            let se = fit.beta_cov[(j, j)].max(0.0).sqrt();
            let degenerate = se == 0.0;
            EffectRow {
                name: name.clone(),
                estimate,
                std_error: se,
                z_value: if degenerate { None } else { Some(estimate / se) },
                ci_low: estimate - z * se,
                ci_high: estimate + z * se,
                degenerate,
            }
        })
        .collect();
    Ok(EffectTable { level, rows })
}

/// AIC and BIC for a converged fit: `AIC = −2ℓ + 2k`,
/// `BIC = −2ℓ + k·log(n_eff)` with `k = p + k_var` and `n_eff = n − p`
/// under REML, `n` under ML.
pub fn information_criteria(fit: &FittedModel) -> Criteria {
    let k = (fit.p + fit.k_var) as f64;
    let minus2ll = -2.0 * fit.loglik;
    let n_eff = match fit.spec.method {
        FitMethod::Reml => (fit.n_obs - fit.p) as f64,
        FitMethod::Ml => fit.n_obs as f64,
    };
    Criteria { aic: minus2ll + 2.0 * k, bic: minus2ll + k * n_eff.ln() }
}

/// Outcome of fitting one stratum: the label plus either a model or the
/// labeled error that stratum produced.
#[derive(Debug)]
pub struct StratifiedFit {
    /// (stratum label, fit outcome), in stratum order (nonsmokers first).
    pub strata: Vec<(String, Result<FittedModel, LmmError>)>,
    /// Difference tests for coefficients shared by the first two successful
    /// strata; empty unless at least two fits succeeded.
    pub differences: Vec<StratumDifference>,
}

/// Two-sample z comparison of one coefficient across strata:
/// `z = (b₁ − b₂) / sqrt(se₁² + se₂²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDifference {
    pub name: String,
    pub estimate_a: f64,
    pub estimate_b: f64,
    pub difference: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_two_sided: f64,
}

/// Fit the model separately within each level of the stratifying variable
/// (currently `smoker` — the only covariate in the schema), dropping that
/// variable from the within-stratum mean model, and test each shared
/// coefficient for equality across strata.
///
/// A failing stratum does not poison the others: its slot carries the
/// labeled error while the rest are returned normally.
pub fn stratified_fit(
    data: &LongDataset,
    spec: &ModelSpec,
    stratum: &str,
) -> Result<StratifiedFit, LmmError> {
    if stratum != "smoker" {
        return Err(LmmError::UnknownStratifier { name: stratum.to_string() });
    }
    let any_smoker = data.rows().iter().any(|o| o.smoker);
    let any_nonsmoker = data.rows().iter().any(|o| !o.smoker);
    if !(any_smoker && any_nonsmoker) {
        return Err(LmmError::SingleStratum);
    }
    let mut within_spec = *spec;
    within_spec.fixed.smoker = false;

    let mut strata = Vec::new();
    for (label, keep_smoker) in [("nonsmoker", false), ("smoker", true)] {
        let outcome = data
            .retain(|o| o.smoker == keep_smoker)
            .map_err(LmmError::from)
            .and_then(|sub| fit(&sub, &within_spec))
            .map_err(|e| LmmError::Stratum { stratum: label.to_string(), source: Box::new(e) });
        strata.push((label.to_string(), outcome));
    }

    let mut differences = Vec::new();
    let fitted: Vec<&FittedModel> =
        strata.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    if let [a, b] = fitted.as_slice() {
        for (ja, name) in a.column_names.iter().enumerate() {
            if let Some(jb) = b.column_names.iter().position(|n| n == name) {
                let (ea, eb) = (a.beta[ja], b.beta[jb]);
                let var = a.beta_cov[(ja, ja)].max(0.0) + b.beta_cov[(jb, jb)].max(0.0);
                let se = var.sqrt();
                let diff = ea - eb;
                let z = if se > 0.0 { diff / se } else { 0.0 };
                let p = 2.0 * (1.0 - dist::normal_cdf(z.abs()));
                differences.push(StratumDifference {
                    name: name.clone(),
                    estimate_a: ea,
                    estimate_b: eb,
                    difference: diff,
                    std_error: se,
                    z_value: z,
                    p_two_sided: p.clamp(0.0, 1.0),
                });
            }
        }
    }
    Ok(StratifiedFit { strata, differences })
}

// ---------------------------------------------------------------------------
// Report serialization and formatting
// ---------------------------------------------------------------------------

/// Serializable fit report, schema `longmix-fit/1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    pub spec: ModelSpec,
    pub coefficients: EffectTable,
    pub variance: VarianceReport,
    pub loglik: f64,
    pub criteria: Criteria,
    pub counts: CountsReport,
    pub convergence: ConvergenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub sigma_b2: f64,
    pub sigma_e2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsReport {
    pub n_obs: usize,
    pub p: usize,
    pub k_var: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
}

impl FittedModel {
    /// Package the fit as the versioned `longmix-fit/1` report with Wald
    /// intervals at `level`.
    pub fn report(&self, level: f64) -> Result<FitReport, LmmError> {
        Ok(FitReport {
            schema: "longmix-fit/1".to_string(),
            spec: self.spec,
            coefficients: wald_intervals(self, level)?,
            variance: VarianceReport {
                sigma_b2: self.vparams.sigma_b2,
                sigma_e2: self.vparams.sigma_e2,
                rho: self.vparams.rho,
                boundary: self.boundary,
            },
            loglik: self.loglik,
            criteria: information_criteria(self),
            counts: CountsReport { n_obs: self.n_obs, p: self.p, k_var: self.k_var },
            convergence: ConvergenceReport {
                converged: self.converged,
                iterations: self.iterations,
            },
        })
    }
}

/// Round the magnitude of `x` upward at `decimals` places (away from zero),
/// after snapping values that are within ~1e-9 of a representable rounding
/// boundary (so `-0.08` stays `-0.08` even though `-0.08 × 100` is not an
/// exact integer in floating point).
pub fn round_away_from_zero(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let snapped = if (scaled - scaled.round()).abs() < 1e-9 * scaled.abs().max(1.0) {
        scaled.round()
    } else if scaled >= 0.0 {
        scaled.ceil()
    } else {
        scaled.floor()
    };
    // Normalize -0.0 so formatting never prints a negative zero.
    snapped / scale + 0.0
}

/// Compact `estimate(ci_low, ci_high)` string in the house style of the
/// report tables, magnitudes rounded away from zero.
pub fn format_estimate_ci(estimate: f64, ci_low: f64, ci_high: f64, decimals: u32) -> String {
    let d = decimals as usize;
    format!(
        "{:.d$}({:.d$},{:.d$})",
        round_away_from_zero(estimate, decimals),
        round_away_from_zero(ci_low, decimals),
        round_away_from_zero(ci_high, decimals),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_long_csv, FixedTerms, Grouping};
    use approx::assert_abs_diff_eq;

    /// Deterministic balanced one-way layout: `n_groups` subjects, `m`
    /// observations each on one day, intercept-only design.
    fn balanced_csv(n_groups: usize, m: usize) -> String {
        let mut csv = String::from("subject_id,day,time_point,hour_actual,smoker,fev1\n");
        for g in 0..n_groups {
            // Deterministic pseudo-noise with clear between-group spread.
            let shift = (g as f64 * 0.7).sin() * 0.8;
            for j in 0..m {
                let noise = ((g * 31 + j * 7 + 3) % 17) as f64 / 17.0 - 0.5;
                let y = 4.0 + shift + 0.3 * noise;
                csv.push_str(&format!("s{g:03},1,{j},{j}.0,0,{y}\n"));
            }
        }
        csv
    }

    fn intercept_spec(family: CorrFamily) -> ModelSpec {
        ModelSpec {
            fixed: FixedTerms::intercept_only(),
            grouping: Grouping::PerSubject,
            corr_family: family,
            method: FitMethod::Reml,
            poly_degree: 1,
        }
    }

    #[test]
    fn balanced_reml_matches_anova_moments() {
        // On balanced one-way data with Independent residuals, the REML
        // variance estimates coincide with the classical moment estimators:
        // σ̂_ε² = MS_within, σ̂_b² = (MS_between − MS_within)/m.
        let (n_groups, m) = (30, 5);
        let data = parse_long_csv(balanced_csv(n_groups, m).as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Independent);
        let model = fit(&data, &spec).unwrap();

        let y = data.response_vector();
        let grand = y.iter().sum::<f64>() / y.len() as f64;
        let mut ms_within = 0.0;
        let mut ms_between = 0.0;
        for g in 0..n_groups {
            let slice = &y[g * m..(g + 1) * m];
            let mean = slice.iter().sum::<f64>() / m as f64;
            ms_within += slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            ms_between += m as f64 * (mean - grand) * (mean - grand);
        }
        ms_within /= (n_groups * m - n_groups) as f64;
        ms_between /= (n_groups - 1) as f64;
        let sigma_b2_anova = (ms_between - ms_within) / m as f64;
        assert!(sigma_b2_anova > 0.0, "test layout must give an interior optimum");
        assert_abs_diff_eq!(model.vparams.sigma_e2, ms_within, epsilon = 1e-6);
        assert_abs_diff_eq!(model.vparams.sigma_b2, sigma_b2_anova, epsilon = 1e-6);
        // Intercept = grand mean on balanced data.
        assert_abs_diff_eq!(model.beta[0], grand, epsilon = 1e-8);
        assert!(model.converged && !model.boundary);
    }

    #[test]
    fn profile_consistency_and_loglik_agreement() {
        let data = parse_long_csv(balanced_csv(12, 4).as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Ar1);
        let model = fit(&data, &spec).unwrap();
        // Re-running the GLS step at the fitted variance parameters must
        // reproduce the stored coefficients exactly.
        let design = encode_design(&data, &spec).unwrap();
        let blocks =
            marginal_covariance(&model.vparams, &design, spec.corr_family).unwrap();
        let gls = gls_estimate(&design.x, &data.response_vector(), &blocks).unwrap();
        assert_eq!(gls.beta, model.beta);
        // And the stored log-likelihood matches the objective at the optimum.
        let nll = crate::lmm::objective(
            &model.vparams,
            &design,
            &data.response_vector(),
            &spec,
        )
        .unwrap();
        assert_abs_diff_eq!(-nll, model.loglik, epsilon = 1e-9);
    }

    #[test]
    fn fit_improves_on_every_start() {
        // The optimum can be no worse than the naive equal-split start.
        let data = parse_long_csv(balanced_csv(10, 4).as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Ar1);
        let model = fit(&data, &spec).unwrap();
        let design = encode_design(&data, &spec).unwrap();
        let y = data.response_vector();
        let s2 = {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (y.len() - 1) as f64
        };
        for rho in [-0.5, 0.0, 0.5] {
            let start = VarianceParams::with_rho(0.5 * s2, 0.5 * s2, rho);
            let at_start = crate::lmm::objective(&start, &design, &y, &spec).unwrap();
            assert!(-model.loglik <= at_start + 1e-9);
        }
    }

    #[test]
    fn affine_response_transform_equivariance() {
        let data = parse_long_csv(balanced_csv(10, 5).as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Ar1);
        let base = fit(&data, &spec).unwrap();
        // y → 2.5·y + 3: intercept maps to 2.5·β₀ + 3, variances scale by
        // 2.5², correlation unchanged.
        let rows: Vec<_> = data
            .rows()
            .iter()
            .cloned()
            .map(|mut o| {
                o.response = 2.5 * o.response + 3.0;
                o
            })
            .collect();
        let scaled_data = LongDataset::from_observations(rows, "fev1").unwrap();
        let scaled = fit(&scaled_data, &spec).unwrap();
        assert_abs_diff_eq!(scaled.beta[0], 2.5 * base.beta[0] + 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            scaled.vparams.sigma_b2,
            6.25 * base.vparams.sigma_b2,
            epsilon = 1e-6 * (1.0 + 6.25 * base.vparams.sigma_b2)
        );
        assert_abs_diff_eq!(
            scaled.vparams.sigma_e2,
            6.25 * base.vparams.sigma_e2,
            epsilon = 1e-6 * (1.0 + 6.25 * base.vparams.sigma_e2)
        );
        assert_abs_diff_eq!(
            scaled.vparams.rho.unwrap(),
            base.vparams.rho.unwrap(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn subject_relabeling_leaves_fit_unchanged() {
        let data = parse_long_csv(balanced_csv(8, 4).as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Ar1);
        let base = fit(&data, &spec).unwrap();
        // Relabel subjects in reverse; groups reorder but the fit must agree.
        let n = data.subjects().len();
        let rows: Vec<_> = data
            .rows()
            .iter()
            .cloned()
            .map(|mut o| {
                let idx: usize = o.subject_id[1..].parse().unwrap();
                o.subject_id = format!("t{:03}", n - 1 - idx);
                o
            })
            .collect();
        let relabeled = LongDataset::from_observations(rows, "fev1").unwrap();
        let other = fit(&relabeled, &spec).unwrap();
        // Group order changes the floating-point summation order, so agreement
        // is to optimizer tolerance rather than bitwise.
        assert_abs_diff_eq!(base.beta[0], other.beta[0], epsilon = 1e-8);
        assert_abs_diff_eq!(base.vparams.sigma_b2, other.vparams.sigma_b2, epsilon = 1e-5);
        assert_abs_diff_eq!(base.vparams.rho.unwrap(), other.vparams.rho.unwrap(), epsilon = 1e-5);
    }

    #[test]
    fn singleton_series_unidentifiable_under_ar1() {
        let csv = "subject_id,day,time_point,hour_actual,smoker,fev1\n\
                   a,1,0,0.0,0,4.0\n\
                   a,2,0,0.0,0,4.1\n\
                   b,1,0,0.0,0,3.9\n\
                   b,2,0,0.0,0,4.2\n";
        let data = parse_long_csv(csv.as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Ar1);
        assert!(matches!(fit(&data, &spec), Err(LmmError::Identifiability { .. })));
        // The Independent family is fine with singleton series.
        let spec = intercept_spec(CorrFamily::Independent);
        assert!(fit(&data, &spec).is_ok());
    }

    // ---- Wald intervals -----------------------------------------------------

    fn toy_fit(beta: Vec<f64>, ses: &[f64]) -> FittedModel {
        let p = beta.len();
        let mut cov = Matrix::zeros(p, p);
        for (j, se) in ses.iter().enumerate() {
            cov[(j, j)] = se * se;
        }
        FittedModel {
            spec: ModelSpec::full_model(),
            column_names: (0..p).map(|j| format!("b{j}")).collect(),
            beta,
            beta_cov: cov,
            vparams: VarianceParams::with_rho(0.1, 0.1, 0.2),
            loglik: -10.0,
            n_obs: 100,
            p,
            k_var: 3,
            converged: true,
            iterations: 1,
            boundary: false,
        }
    }

    #[test]
    fn wald_interval_reference_case() {
        let fit = toy_fit(vec![-0.08], &[0.0383]);
        let table = wald_intervals(&fit, 0.95).unwrap();
        let row = &table.rows[0];
        // z₀.₉₇₅ = 1.959964: interval (−0.155067, −0.004933).
        assert_abs_diff_eq!(row.ci_low, -0.08 - 1.9599639845400545 * 0.0383, epsilon = 1e-9);
        assert_abs_diff_eq!(row.ci_high, -0.08 + 1.9599639845400545 * 0.0383, epsilon = 1e-9);
        assert_abs_diff_eq!(row.ci_low, -0.155066, epsilon = 1e-6);
        assert_abs_diff_eq!(row.ci_high, -0.004934, epsilon = 1e-6);
        // House formatting reproduces the compact report string.
        assert_eq!(
            format_estimate_ci(row.estimate, row.ci_low, row.ci_high, 2),
            "-0.08(-0.16,-0.01)"
        );
    }

    #[test]
    fn wald_degenerate_and_zero_level() {
        let fit = toy_fit(vec![1.5, 2.0], &[0.0, 0.1]);
        let table = wald_intervals(&fit, 0.95).unwrap();
        assert!(table.rows[0].degenerate);
        assert_eq!(table.rows[0].ci_low, 1.5);
        assert_eq!(table.rows[0].ci_high, 1.5);
        assert_eq!(table.rows[0].z_value, None);
        assert!(!table.rows[1].degenerate);
        // Level 0 → z = 0 → all intervals have zero width.
        let table = wald_intervals(&fit, 0.0).unwrap();
        assert_eq!(table.rows[1].ci_low, table.rows[1].ci_high);
        assert!(wald_intervals(&fit, 1.0).is_err());
        assert!(wald_intervals(&fit, -0.2).is_err());
    }

    #[test]
    fn interval_symmetry_about_estimate() {
        let fit = toy_fit(vec![0.42], &[0.07]);
        let table = wald_intervals(&fit, 0.9).unwrap();
        let row = &table.rows[0];
        assert_abs_diff_eq!(
            row.estimate - row.ci_low,
            row.ci_high - row.estimate,
            epsilon = 1e-12
        );
        assert!(row.ci_low < row.ci_high);
    }

    // ---- information criteria ----------------------------------------------

    #[test]
    fn aic_formula() {
        // ℓ = −10, k = p + k_var = 1 + 2 = 3 → AIC = 20 + 6 = 26.
        let mut fit = toy_fit(vec![0.0], &[1.0]);
        fit.k_var = 2;
        fit.spec.corr_family = CorrFamily::Independent;
        let c = information_criteria(&fit);
        assert_abs_diff_eq!(c.aic, 26.0, epsilon = 1e-12);
        // REML n_eff = n − p = 99.
        assert_abs_diff_eq!(c.bic, 20.0 + 3.0 * 99f64.ln(), epsilon = 1e-12);
        fit.spec.method = FitMethod::Ml;
        let c = information_criteria(&fit);
        assert_abs_diff_eq!(c.bic, 20.0 + 3.0 * 100f64.ln(), epsilon = 1e-12);
    }

    // ---- stratified fits ----------------------------------------------------

    #[test]
    fn identical_strata_give_zero_differences() {
        // Smokers are an exact copy of nonsmokers (different ids, same
        // responses): estimates match and every difference z is zero.
        let mut csv = String::from("subject_id,day,time_point,hour_actual,smoker,fev1\n");
        for g in 0..6 {
            for day in 1..=2 {
                for j in 0..4 {
                    let y = 4.0
                        + (g as f64 * 0.9).sin() * 0.5
                        + ((g * 13 + day * 5 + j * 3) % 11) as f64 / 22.0;
                    csv.push_str(&format!("n{g:02},{day},{j},{j}.0,0,{y}\n"));
                    csv.push_str(&format!("s{g:02},{day},{j},{j}.0,1,{y}\n"));
                }
            }
        }
        let data = parse_long_csv(csv.as_bytes()).unwrap();
        let spec = ModelSpec {
            fixed: FixedTerms { smoker: true, day: true, hour: true, day_hour: false },
            ..ModelSpec::full_model()
        };
        let result = stratified_fit(&data, &spec, "smoker").unwrap();
        assert_eq!(result.strata.len(), 2);
        assert!(result.strata.iter().all(|(_, r)| r.is_ok()));
        assert!(!result.differences.is_empty());
        for d in &result.differences {
            assert_abs_diff_eq!(d.difference, 0.0, epsilon = 1e-7);
            assert_abs_diff_eq!(d.z_value, 0.0, epsilon = 1e-5);
            assert!(d.p_two_sided > 0.999);
        }
        // The within-stratum fits must not carry a smoker column.
        for (_, r) in &result.strata {
            let model = r.as_ref().unwrap();
            assert!(!model.column_names.iter().any(|c| c == "smoker"));
        }
    }

    #[test]
    fn failing_stratum_is_isolated() {
        // Nonsmokers have multi-point series; smokers only singletons, which
        // is unidentifiable under AR1 — but the nonsmoker fit still returns.
        let mut csv = String::from("subject_id,day,time_point,hour_actual,smoker,fev1\n");
        for g in 0..5 {
            for j in 0..4 {
                let y = 4.0 + ((g * 7 + j * 3) % 9) as f64 / 18.0;
                csv.push_str(&format!("n{g:02},1,{j},{j}.0,0,{y}\n"));
            }
            csv.push_str(&format!("s{g:02},1,0,0.0,1,4.{g}\n"));
        }
        let data = parse_long_csv(csv.as_bytes()).unwrap();
        let spec = ModelSpec {
            fixed: FixedTerms { smoker: true, day: false, hour: true, day_hour: false },
            ..ModelSpec::full_model()
        };
        let result = stratified_fit(&data, &spec, "smoker").unwrap();
        let (label_a, fit_a) = &result.strata[0];
        let (label_b, fit_b) = &result.strata[1];
        assert_eq!(label_a, "nonsmoker");
        assert!(fit_a.is_ok());
        assert_eq!(label_b, "smoker");
        match fit_b {
            Err(LmmError::Stratum { stratum, source }) => {
                assert_eq!(stratum, "smoker");
                assert!(matches!(**source, LmmError::Identifiability { .. }));
            }
            other => panic!("expected labeled stratum error, got {other:?}"),
        }
        assert!(result.differences.is_empty());
    }

    #[test]
    fn stratifier_validation() {
        let data = parse_long_csv(balanced_csv(4, 3).as_bytes()).unwrap();
        let spec = intercept_spec(CorrFamily::Independent);
        assert!(matches!(
            stratified_fit(&data, &spec, "age"),
            Err(LmmError::UnknownStratifier { .. })
        ));
        // All nonsmokers → single stratum.
        assert!(matches!(
            stratified_fit(&data, &spec, "smoker"),
            Err(LmmError::SingleStratum)
        ));
    }

    // ---- formatting ---------------------------------------------------------

    #[test]
    fn rounding_magnitudes_away_from_zero() {
        assert_eq!(round_away_from_zero(-0.155067, 2), -0.16);
        assert_eq!(round_away_from_zero(-0.004933, 2), -0.01);
        assert_eq!(round_away_from_zero(-0.08, 2), -0.08);
        assert_eq!(round_away_from_zero(0.08, 2), 0.08);
        assert_eq!(round_away_from_zero(0.121, 2), 0.13);
        assert_eq!(round_away_from_zero(4.0, 2), 4.0);
        assert_eq!(round_away_from_zero(0.0, 2), 0.0);
        // No negative zero in formatted output.
        assert_eq!(format!("{:.2}", round_away_from_zero(-0.0000001, 2)), "-0.01");
    }

    #[test]
    #[ignore = "timing smoke test; run explicitly with --ignored"]
    fn fit_scales_to_full_study_size() {
        // 200 subjects × 3 days × 7 time points = 4200 rows, the largest
        // layout the simulation studies use.
        let mut csv = String::from("subject_id,day,time_point,hour_actual,smoker,fev1\n");
        for g in 0..200 {
            let shift = (g as f64 * 0.61).sin() * 0.4;
            for day in 1..=3u8 {
                for tp in 0..7u32 {
                    let wiggle = ((g as f64 * 2.3 + day as f64 * 1.7 + tp as f64) * 0.9).cos();
                    let y = 4.0 + shift - 0.02 * tp as f64 + 0.15 * wiggle;
                    let smoker = u8::from(g >= 100);
                    csv.push_str(&format!("p{g:04},{day},{tp},{tp}.0,{smoker},{y}\n"));
                }
            }
        }
        let data = parse_long_csv(csv.as_bytes()).unwrap();
        let spec = ModelSpec::full_model();
        let clock = std::time::Instant::now();
        let model = fit(&data, &spec).unwrap();
        let elapsed = clock.elapsed();
        println!(
            "full-size fit: {:?} ({} iterations, loglik {:.3})",
            elapsed, model.iterations, model.loglik
        );
        assert!(model.converged);
    }

    #[test]
    fn report_schema_and_roundtrip() {
        let fit = toy_fit(vec![-0.08], &[0.0383]);
        let report = fit.report(0.95).unwrap();
        assert_eq!(report.schema, "longmix-fit/1");
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("\"schema\": \"longmix-fit/1\""));
    }
}
