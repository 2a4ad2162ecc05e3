//! Exploratory statistics over the long-format dataset: per-day mean
//! profiles, the empirical covariance/correlation of OLS residuals across
//! time points, and plot-ready pairwise scatter data.
//!
//! These summaries precede any mixed-model fit: the covariance matrix in
//! particular is what motivates the choice of a random intercept plus
//! serially correlated residuals, since near-constant large correlations
//! across all time-point pairs point at a shared subject level while decay
//! with lag points at an autoregressive component.

use crate::dataset::{encode_design, DatasetError, LongDataset, ModelSpec};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from the exploratory computations.
#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(
        "explore: time-point pair ({time_point_a}, {time_point_b}) has {got} \
         complete series; at least 2 are required for a covariance"
    )]
    InsufficientReplicates { time_point_a: u32, time_point_b: u32, got: usize },
    #[error("explore: mean-model design is rank deficient (column '{column}')")]
    SingularDesign { column: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One cell of the mean-profile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub day: u8,
    pub time_point: u32,
    pub mean: f64,
    /// Sample standard deviation (divisor n−1); absent when n = 1.
    pub sd: Option<f64>,
    /// Number of contributing subjects.
    pub n: usize,
}

/// Per-(day, time point) response means, in (day, time point) order.
/// Cells with no observations are simply absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanProfileTable {
    pub entries: Vec<ProfileEntry>,
}

/// Sample mean, sd, and count of the response per (day, time point) cell.
pub fn mean_profiles(data: &LongDataset) -> MeanProfileTable {
    let mut entries = Vec::new();
    // Rows are sorted by (subject, day, time point); regroup by cell.
    let mut cells: std::collections::BTreeMap<(u8, u32), Vec<f64>> =
        std::collections::BTreeMap::new();
    for o in data.rows() {
        cells.entry((o.day, o.time_point)).or_default().push(o.response);
    }
    for ((day, time_point), values) in cells {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            Some((ss / (n - 1) as f64).sqrt())
        } else {
            None
        };
        entries.push(ProfileEntry { day, time_point, mean, sd, n });
    }
    MeanProfileTable { entries }
}

/// Empirical covariance and correlation of mean-model residuals across time
/// points, treating each (subject, day) series as one replicate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovCorrMatrix {
    /// Ordered time-point labels indexing the matrices.
    pub time_points: Vec<u32>,
    /// Sample covariance (divisor n−1, pairwise-complete).
    pub cov: Matrix,
    /// corr[i][j] = cov[i][j] / √(cov[i][i]·cov[j][j]), unit diagonal.
    pub corr: Matrix,
    /// Per-pair replicate counts behind each covariance entry.
    pub n_pairs: Matrix,
    /// Combined display matrix: covariance above the diagonal, variance on
    /// it, correlation below.
    pub presentation: Matrix,
}

/// Fit the fixed-effects mean model by OLS, collect residuals, and form the
/// across-series sample covariance and correlation over time points.
///
/// Only the mean structure of `spec` matters here; grouping, correlation
/// family, and method are ignored. Series missing a time point contribute
/// only to the pairs they cover, and every pair must be covered by at least
/// two series.
pub fn empirical_cov_corr(
    data: &LongDataset,
    spec: &ModelSpec,
) -> Result<CovCorrMatrix, ExploreError> {
    let design = encode_design(data, spec)?;
    let y = data.response_vector();
    let beta = crate::linalg::ols_beta(&design.x, &y).map_err(|e| {
        ExploreError::SingularDesign {
            column: design
                .column_names
                .get(e.0)
                .cloned()
                .unwrap_or_else(|| format!("column {}", e.0)),
        }
    })?;
    let resid: Vec<f64> = (0..y.len())
        .map(|i| y[i] - design.x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();

    let time_points = data.time_points().to_vec();
    let t = time_points.len();
    let tp_index = |tp: u32| time_points.iter().position(|&v| v == tp).unwrap();
    // One residual vector per (subject, day) series, with gaps as NaN.
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(design.series.len());
    for s in &design.series {
        let mut v = vec![f64::NAN; t];
        for (&row, &tp) in s.rows.iter().zip(&s.time_points) {
            v[tp_index(tp)] = resid[row];
        }
        vectors.push(v);
    }

    let mut cov = Matrix::zeros(t, t);
    let mut n_pairs = Matrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let pairs: Vec<(f64, f64)> = vectors
                .iter()
                .filter_map(|v| {
                    (!v[i].is_nan() && !v[j].is_nan()).then_some((v[i], v[j]))
                })
                .collect();
            let n = pairs.len();
            if n < 2 {
                return Err(ExploreError::InsufficientReplicates {
                    time_point_a: time_points[i],
                    time_point_b: time_points[j],
                    got: n,
                });
            }
            let mean_i = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
            let mean_j = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
            let c = pairs
                .iter()
                .map(|p| (p.0 - mean_i) * (p.1 - mean_j))
                .sum::<f64>()
                / (n - 1) as f64;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
            n_pairs[(i, j)] = n as f64;
            n_pairs[(j, i)] = n as f64;
        }
    }

    let mut corr = Matrix::zeros(t, t);
    let mut presentation = Matrix::zeros(t, t);
    for i in 0..t {
        corr[(i, i)] = 1.0;
        presentation[(i, i)] = cov[(i, i)];
        for j in (i + 1)..t {
            let r = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            corr[(i, j)] = r;
            corr[(j, i)] = r;
            presentation[(i, j)] = cov[(i, j)];
            presentation[(j, i)] = r;
        }
    }
    Ok(CovCorrMatrix { time_points, cov, corr, n_pairs, presentation })
}

/// All paired responses for one unordered time-point pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPair {
    pub time_point_a: u32,
    pub time_point_b: u32,
    /// (response at a, response at b) within each (subject, day) series
    /// covering both time points.
    pub points: Vec<(f64, f64)>,
}

/// Plot-ready scatter data: for each unordered pair of observed time points,
/// the within-(subject, day) response pairs.
pub fn pairwise_scatter_data(data: &LongDataset) -> Vec<ScatterPair> {
    let time_points = data.time_points();
    let t = time_points.len();
    // Responses per series keyed into the common grid.
    let mut series_vals: Vec<Vec<f64>> = Vec::new();
    let mut key: Option<(&str, u8)> = None;
    for o in data.rows() {
        let this = (o.subject_id.as_str(), o.day);
        if key != Some(this) {
            key = Some(this);
            series_vals.push(vec![f64::NAN; t]);
        }
        let idx = time_points.iter().position(|&v| v == o.time_point).unwrap();
        series_vals.last_mut().unwrap()[idx] = o.response;
    }
    let mut out = Vec::with_capacity(t * (t - 1) / 2);
    for i in 0..t {
        for j in (i + 1)..t {
            let points = series_vals
                .iter()
                .filter_map(|v| (!v[i].is_nan() && !v[j].is_nan()).then_some((v[i], v[j])))
                .collect();
            out.push(ScatterPair {
                time_point_a: time_points[i],
                time_point_b: time_points[j],
                points,
            });
        }
    }
    out
}
