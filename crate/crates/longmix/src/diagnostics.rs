//! Model assessment for a fitted mixed model: whitened residuals, a pooled
//! autocorrelation table, a semivariogram over actual measurement hours,
//! normal Q-Q data, predicted random intercepts (BLUPs), and
//! fitted-vs-observed pairs.
//!
//! The common thread is whitening: if the fitted covariance is right, then
//! `L⁻¹(y − Xβ̂)` — with `L` the per-group Cholesky factor of the fitted
//! marginal covariance — behaves like iid standard normal noise, so its ACF
//! should die inside the sampling bounds and its semivariogram should be
//! flat at one.

use crate::classical::dist;
use crate::dataset::{encode_design, DatasetError, DesignMatrices, LongDataset};
use crate::linalg::{cholesky_in_place, forward_solve};
use crate::lmm::{marginal_covariance, FittedModel, LmmError};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

/// Errors from the diagnostic computations.
#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("diagnostics: fit has not converged")]
    NotConverged,
    #[error("diagnostics: covariance block for group '{group}' is not positive definite")]
    NonPositiveDefiniteV { group: String },
    #[error("diagnostics: sample has zero variance; Q-Q data undefined")]
    DegenerateSample,
    #[error("diagnostics: need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error(transparent)]
    Lmm(#[from] LmmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One lag of the pooled autocorrelation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfRow {
    pub lag: usize,
    pub estimate: f64,
    /// Within-series pairs contributing at this lag.
    pub n_pairs: usize,
    /// Reference band half-width, 2/√n_pairs.
    pub bound: f64,
}

/// One bin of the semivariogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Absolute hour separation of the pairs in this bin.
    pub lag_hours: f64,
    /// Mean semivariance 0.5·(r_i − r_j)².
    pub gamma: f64,
    pub n_pairs: usize,
}

/// Predicted random intercept for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupEntry {
    pub label: String,
    pub value: f64,
}

/// All group-level predictions, flagged when the intercept variance sits at
/// the boundary (every prediction is then forced to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupTable {
    pub entries: Vec<BlupEntry>,
    pub zero_random_variance: bool,
}

/// Everything the `diagnose` stage reports, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub raw_residuals: Vec<f64>,
    pub normalized_residuals: Vec<f64>,
    pub acf: Vec<AcfRow>,
    pub variogram: Vec<VariogramBin>,
    /// (theoretical normal quantile, standardized sample quantile) pairs for
    /// the normalized residuals; absent when the sample is degenerate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq_resid: Option<Vec<(f64, f64)>>,
    /// Same for the predicted intercepts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq_blup: Option<Vec<(f64, f64)>>,
    pub blups: BlupTable,
    /// (fitted mean, observed response) per observation.
    pub fitted_observed: Vec<(f64, f64)>,
}

/// Contiguous row span of each (subject, day) series, in canonical order.
pub fn series_spans(design: &DesignMatrices) -> Vec<Range<usize>> {
    design
        .series
        .iter()
        .map(|s| {
            let start = s.rows[0];
            start..start + s.rows.len()
        })
        .collect()
}

fn require_converged(fit: &FittedModel) -> Result<(), DiagnosticsError> {
    if fit.converged {
        Ok(())
    } else {
        Err(DiagnosticsError::NotConverged)
    }
}

/// Raw residuals `y − Xβ̂` in canonical row order.
pub fn raw_residuals(
    fit: &FittedModel,
    data: &LongDataset,
) -> Result<Vec<f64>, DiagnosticsError> {
    require_converged(fit)?;
    let design = encode_design(data, &fit.spec)?;
    let y = data.response_vector();
    Ok((0..y.len())
        .map(|i| y[i] - design.x.row(i).iter().zip(&fit.beta).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// Whitened residuals: per group, `L⁻¹(y − Xβ̂)` with `V̂ = L Lᵀ` the fitted
/// marginal covariance of that group; concatenated in canonical row order.
pub fn normalized_residuals(
    fit: &FittedModel,
    data: &LongDataset,
) -> Result<Vec<f64>, DiagnosticsError> {
    require_converged(fit)?;
    let design = encode_design(data, &fit.spec)?;
    let raw = raw_residuals(fit, data)?;
    let blocks = marginal_covariance(&fit.vparams, &design, fit.spec.corr_family)?;
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0;
    for (g, block) in design.groups.iter().zip(&blocks) {
        let m = block.n_rows();
        let mut l = block.as_slice().to_vec();
        cholesky_in_place(&mut l, m).map_err(|_| DiagnosticsError::NonPositiveDefiniteV {
            group: g.label.clone(),
        })?;
        let mut r = raw[offset..offset + m].to_vec();
        forward_solve(&l, m, &mut r);
        out.extend_from_slice(&r);
        offset += m;
    }
    Ok(out)
}

/// Pooled autocorrelation of concatenated residuals, pairing only within
/// series.
///
/// The estimate at lag `l` is the pooled mean lagged product over the pooled
/// mean square, each normalized by its own count:
/// `[Σ r_t·r_{t+l} / n_pairs(l)] / [Σ r_t² / n]`, so lag 0 is exactly 1 and
/// a white series yields estimates with standard deviation ≈ 1/√n_pairs,
/// matching the reported `2/√n_pairs` band. Lags beyond every series length
/// produce no row.
pub fn pooled_acf(residuals: &[f64], series: &[Range<usize>], max_lag: usize) -> Vec<AcfRow> {
    let n_total = series.iter().map(|s| s.len()).sum::<usize>();
    // Accumulated per series in the same order as the lagged products so
    // that lag 0 divides two bitwise-identical sums and is exactly 1.
    let denom = series
        .iter()
        .map(|s| residuals[s.clone()].iter().map(|r| r * r).sum::<f64>())
        .sum::<f64>()
        / n_total as f64;
    let mut rows = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut sum = 0.0;
        let mut n_pairs = 0usize;
        for span in series {
            let r = &residuals[span.clone()];
            if r.len() > lag {
                sum += r.iter().zip(&r[lag..]).map(|(a, b)| a * b).sum::<f64>();
                n_pairs += r.len() - lag;
            }
        }
        if n_pairs == 0 {
            continue;
        }
        rows.push(AcfRow {
            lag,
            estimate: (sum / n_pairs as f64) / denom,
            n_pairs,
            bound: 2.0 / (n_pairs as f64).sqrt(),
        });
    }
    rows
}

/// Semivariogram of residuals against actual hour separation: every
/// within-series pair contributes `0.5(r_i − r_j)²` to the bin of its
/// `|hour_i − hour_j|`, and bins are averaged. Returned in increasing lag
/// order.
pub fn semivariogram(
    residuals: &[f64],
    hours: &[f64],
    series: &[Range<usize>],
) -> Vec<VariogramBin> {
    assert_eq!(residuals.len(), hours.len());
    // Bin by hour separation rounded to a microhour, absorbing float noise
    // in nominally equal lags.
    let mut bins: std::collections::BTreeMap<i64, (f64, usize)> = std::collections::BTreeMap::new();
    for span in series {
        for i in span.clone() {
            for j in (i + 1)..span.end {
                let lag = (hours[i] - hours[j]).abs();
                let key = (lag * 1e6).round() as i64;
                let gamma = 0.5 * (residuals[i] - residuals[j]).powi(2);
                let e = bins.entry(key).or_insert((0.0, 0));
                e.0 += gamma;
                e.1 += 1;
            }
        }
    }
    bins.into_iter()
        .map(|(key, (sum, n))| VariogramBin {
            lag_hours: key as f64 / 1e6,
            gamma: sum / n as f64,
            n_pairs: n,
        })
        .collect()
}

/// Predicted random intercepts: `b̂_g = σ̂_b²·1ᵀV̂_g⁻¹(y_g − X_g β̂)` per
/// group. When σ̂_b² sits at the zero boundary every prediction is zero and
/// the table is flagged.
pub fn blups(fit: &FittedModel, data: &LongDataset) -> Result<BlupTable, DiagnosticsError> {
    require_converged(fit)?;
    let design = encode_design(data, &fit.spec)?;
    let raw = raw_residuals(fit, data)?;
    let sigma_b2 = fit.vparams.sigma_b2;
    let zero_random_variance = sigma_b2 < 1e-10;
    let blocks = marginal_covariance(&fit.vparams, &design, fit.spec.corr_family)?;
    let mut entries = Vec::with_capacity(design.groups.len());
    let mut offset = 0;
    for (g, block) in design.groups.iter().zip(&blocks) {
        let m = block.n_rows();
        let value = if zero_random_variance {
            0.0
        } else {
            let mut l = block.as_slice().to_vec();
            cholesky_in_place(&mut l, m).map_err(|_| DiagnosticsError::NonPositiveDefiniteV {
                group: g.label.clone(),
            })?;
            // Solve V w = r via the factor, then b̂ = σ_b²·Σ w.
            let mut w = raw[offset..offset + m].to_vec();
            forward_solve(&l, m, &mut w);
            crate::linalg::backward_solve_transposed(&l, m, &mut w);
            sigma_b2 * w.iter().sum::<f64>()
        };
        entries.push(BlupEntry { label: g.label.clone(), value });
        offset += m;
    }
    Ok(BlupTable { entries, zero_random_variance })
}

/// Normal Q-Q pairs: the sample is standardized by its mean and sample
/// standard deviation, sorted, and set against `Φ⁻¹((i − 0.5)/n)`.
pub fn qq_data(values: &[f64]) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    if values.len() < 3 {
        return Err(DiagnosticsError::TooFewValues { needed: 3, got: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(DiagnosticsError::DegenerateSample);
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| (dist::normal_inverse_cdf((i as f64 + 0.5) / n), s))
        .collect())
}

/// Assemble the full diagnostics report. `max_lag` defaults to one less
/// than the longest series length.
pub fn diagnostics_report(
    fit: &FittedModel,
    data: &LongDataset,
    max_lag: Option<usize>,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    require_converged(fit)?;
    let design = encode_design(data, &fit.spec)?;
    let spans = series_spans(&design);
    let raw = raw_residuals(fit, data)?;
    let normalized = normalized_residuals(fit, data)?;
    let longest = spans.iter().map(|s| s.len()).max().unwrap_or(1);
    let max_lag = max_lag.unwrap_or(longest.saturating_sub(1));
    let acf = pooled_acf(&normalized, &spans, max_lag);
    let hours: Vec<f64> = data.rows().iter().map(|o| o.hour_actual).collect();
    let variogram = semivariogram(&normalized, &hours, &spans);
    let blup_table = blups(fit, data)?;
    let soften = |r: Result<Vec<(f64, f64)>, DiagnosticsError>| match r {
        Ok(pairs) => Some(pairs),
        Err(DiagnosticsError::DegenerateSample | DiagnosticsError::TooFewValues { .. }) => None,
        Err(_) => None,
    };
    let qq_resid = soften(qq_data(&normalized));
    let blup_values: Vec<f64> = blup_table.entries.iter().map(|e| e.value).collect();
    let qq_blup = soften(qq_data(&blup_values));
    let y = data.response_vector();
    let fitted_observed = (0..y.len())
        .map(|i| (y[i] - raw[i], y[i]))
        .collect();
    Ok(DiagnosticsReport {
        raw_residuals: raw,
        normalized_residuals: normalized,
        acf,
        variogram,
        qq_resid,
        qq_blup,
        blups: blup_table,
        fitted_observed,
    })
}
