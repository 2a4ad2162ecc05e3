//! The comparison analyses a careless reader might reach for instead of a
//! mixed model: a paired Student t-test and a two-way factorial ANOVA that
//! treats repeated measurements as independent replicates. Both are provided
//! so their conclusions can be set side by side with the mixed-model fit, and
//! both deliberately reproduce the flawed independence assumption.

pub mod dist;

use crate::dataset::LongDataset;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from the classical analyses and distribution functions.
#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("classical: paired vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("classical: paired differences have zero variance")]
    ZeroVariance,
    #[error("classical: need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("classical: factorial cell (day {day}, time point {time_point}) has no observations")]
    EmptyCell { day: u8, time_point: u32 },
    #[error(
        "classical: unbalanced design (cell counts range from {min} to {max}); \
         the sequential decomposition is only valid for balanced data"
    )]
    UnbalancedDesign { min: usize, max: usize },
    #[error("classical: invalid degrees of freedom {df}")]
    InvalidDf { df: f64 },
    #[error("classical: confidence level {level} outside (0, 1)")]
    InvalidLevel { level: f64 },
}

/// Result of a paired two-sided Student t-test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedTResult {
    /// Mean of the pairwise differences x − y.
    pub mean_diff: f64,
    /// Sample standard deviation of the differences.
    pub sd_diff: f64,
    /// t statistic: mean_diff / (sd_diff / sqrt(n)).
    pub t_stat: f64,
    /// Degrees of freedom, n − 1.
    pub df: usize,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// Confidence level of the interval below.
    pub level: f64,
    /// Confidence interval for the mean difference.
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Paired two-sided t-test of `x` against `y`.
///
/// ```
/// let x = [4.1, 4.0, 4.3, 3.9];
/// let y = [4.1, 4.0, 4.3, 3.9];
/// let r = longmix::classical::paired_t_test(&x, &y, 0.95).unwrap();
/// assert_eq!(r.t_stat, 0.0);
/// assert_eq!(r.p_two_sided, 1.0);
/// ```
pub fn paired_t_test(x: &[f64], y: &[f64], level: f64) -> Result<PairedTResult, ClassicalError> {
    if x.len() != y.len() {
        return Err(ClassicalError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(ClassicalError::TooFewPairs { needed: 2, got: x.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ClassicalError::InvalidLevel { level });
    }
    let n = x.len() as f64;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let ss: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    if sd == 0.0 {
        // Identical pairs: by convention t = 0, p = 1, degenerate interval.
        return Ok(PairedTResult {
            mean_diff: mean,
            sd_diff: 0.0,
            t_stat: 0.0,
            df: x.len() - 1,
            p_two_sided: 1.0,
            level,
            ci_lower: mean,
            ci_upper: mean,
        });
    }
    let se = sd / n.sqrt();
    let t = mean / se;
    let df = n - 1.0;
    let p = 2.0 * (1.0 - dist::student_t_cdf(t.abs(), df));
    let crit = dist::student_t_inverse_cdf(0.5 + 0.5 * level, df);
    Ok(PairedTResult {
        mean_diff: mean,
        sd_diff: sd,
        t_stat: t,
        df: x.len() - 1,
        p_two_sided: p.clamp(0.0, 1.0),
        level,
        ci_lower: mean - crit * se,
        ci_upper: mean + crit * se,
    })
}

/// One effect row of the ANOVA table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub effect: String,
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    /// F statistic against the error mean square; absent when the error
    /// variance is zero.
    pub f_stat: Option<f64>,
    /// Upper-tail p-value; absent alongside `f_stat`.
    pub p_value: Option<f64>,
}

/// Two-way factorial ANOVA decomposition for the day × time-point layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    /// Effect rows in order: day, hour, day×hour, error.
    pub rows: Vec<AnovaRow>,
    pub ss_total: f64,
    pub df_total: usize,
    /// True when the within-cell variance is zero, leaving F and p undefined.
    pub zero_error_variance: bool,
}

/// Two-way fixed-effects ANOVA of the response on day × time point,
/// deliberately treating every observation as an independent replicate —
/// the analysis a mixed model replaces. Time point enters as a categorical
/// factor. Only balanced layouts are accepted: with equal cell counts the
/// sequential and partial decompositions coincide, so there is no hidden
/// convention choice.
pub fn factorial_anova(data: &LongDataset) -> Result<AnovaTable, ClassicalError> {
    let days = data.days().to_vec();
    let tps = data.time_points().to_vec();
    let (a, b) = (days.len(), tps.len());
    let day_idx = |d: u8| days.iter().position(|&v| v == d).unwrap();
    let tp_idx = |t: u32| tps.iter().position(|&v| v == t).unwrap();

    let mut cell_sum = vec![0.0f64; a * b];
    let mut cell_n = vec![0usize; a * b];
    let mut grand_sum = 0.0;
    let mut ss_raw = 0.0;
    for o in data.rows() {
        let c = day_idx(o.day) * b + tp_idx(o.time_point);
        cell_sum[c] += o.response;
        cell_n[c] += 1;
        grand_sum += o.response;
        ss_raw += o.response * o.response;
    }
    for (c, &n) in cell_n.iter().enumerate() {
        if n == 0 {
            return Err(ClassicalError::EmptyCell { day: days[c / b], time_point: tps[c % b] });
        }
    }
    let (min_n, max_n) =
        (*cell_n.iter().min().unwrap(), *cell_n.iter().max().unwrap());
    if min_n != max_n {
        return Err(ClassicalError::UnbalancedDesign { min: min_n, max: max_n });
    }
    let r = min_n;
    let n_total = a * b * r;
    let grand = grand_sum / n_total as f64;

    // Cell / marginal means.
    let cell_mean: Vec<f64> = cell_sum.iter().map(|s| s / r as f64).collect();
    let day_mean: Vec<f64> = (0..a)
        .map(|i| (0..b).map(|j| cell_mean[i * b + j]).sum::<f64>() / b as f64)
        .collect();
    let tp_mean: Vec<f64> = (0..b)
        .map(|j| (0..a).map(|i| cell_mean[i * b + j]).sum::<f64>() / a as f64)
        .collect();

    let ss_day = (b * r) as f64
        * day_mean.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_hour = (a * r) as f64
        * tp_mean.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_int = r as f64
        * (0..a)
            .flat_map(|i| (0..b).map(move |j| (i, j)))
            .map(|(i, j)| {
                let dev = cell_mean[i * b + j] - day_mean[i] - tp_mean[j] + grand;
                dev * dev
            })
            .sum::<f64>();
    let ss_total = ss_raw - n_total as f64 * grand * grand;
    // Error by subtraction would do, but computing it directly keeps each
    // SS independently nonnegative.
    let mut ss_err = 0.0;
    for o in data.rows() {
        let c = day_idx(o.day) * b + tp_idx(o.time_point);
        let dev = o.response - cell_mean[c];
        ss_err += dev * dev;
    }

    let df_day = a - 1;
    let df_hour = b - 1;
    let df_int = (a - 1) * (b - 1);
    let df_err = a * b * (r - 1);
    let ms_err = if df_err > 0 { ss_err / df_err as f64 } else { 0.0 };
    let zero_error_variance = ms_err <= 0.0;

    let make_row = |effect: &str, ss: f64, df: usize| {
        let ms = if df > 0 { ss / df as f64 } else { 0.0 };
        let (f_stat, p_value) = if zero_error_variance || df == 0 {
            (None, None)
        } else {
            let f = ms / ms_err;
            let p = 1.0 - dist::f_cdf(f, df as f64, df_err as f64);
            (Some(f), Some(p.clamp(0.0, 1.0)))
        };
        AnovaRow { effect: effect.to_string(), ss: ss.max(0.0), df, ms, f_stat, p_value }
    };
    let rows = vec![
        make_row("day", ss_day, df_day),
        make_row("hour", ss_hour, df_hour),
        make_row("day:hour", ss_int, df_int),
        AnovaRow {
            effect: "error".to_string(),
            ss: ss_err,
            df: df_err,
            ms: ms_err,
            f_stat: None,
            p_value: None,
        },
    ];
    Ok(AnovaTable { rows, ss_total, df_total: n_total - 1, zero_error_variance })
}
