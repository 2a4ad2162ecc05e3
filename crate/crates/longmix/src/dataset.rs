//! Long-format repeated-measures data: ingestion, validation, and design
//! encoding.
//!
//! The canonical wire format is a UTF-8 CSV with header columns
//! `subject_id, day, time_point, hour_actual, smoker, fev1` (any order).
//! Each row is one measurement of one subject on one treatment day at one
//! measurement occasion. `time_point` is the occasion index 0–6 on a common
//! grid; `hour_actual` records the clock hours since that day's baseline
//! (0, 1, 2, 3, 4, 6, 28 on the canonical grid) and is carried for the
//! semivariogram axis, while all modeling uses the evenly spaced index.

use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use std::io::Read;
use thiserror::Error;

/// Errors raised while ingesting or encoding a dataset.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset: missing required column '{name}'")]
    MissingColumn { name: String },
    #[error("dataset: unexpected column '{name}' (schema is subject_id, day, time_point, hour_actual, smoker, fev1)")]
    UnexpectedColumn { name: String },
    #[error("dataset: duplicate observation for subject '{subject}', day {day}, time point {time_point}")]
    DuplicateTriple { subject: String, day: u8, time_point: u32 },
    #[error("dataset: subject '{subject}' has inconsistent smoker values across rows")]
    NonConstantSmoker { subject: String },
    #[error("dataset: row {row}: cannot parse {column} value '{value}'")]
    UnparseableValue { row: usize, column: &'static str, value: String },
    #[error("dataset: row {row}: {column} value '{value}' outside allowed {allowed}")]
    OutOfRange { row: usize, column: &'static str, value: String, allowed: &'static str },
    #[error("dataset: row {row}: {column} must be finite")]
    NonFiniteValue { row: usize, column: &'static str },
    #[error("dataset: no observations")]
    Empty,
    #[error("dataset: term '{term}' has a single observed level, cannot encode a contrast")]
    SingleLevelFactor { term: &'static str },
    #[error("dataset: model requires the '{term}' term also include '{requires}'")]
    IncoherentTerms { term: &'static str, requires: &'static str },
    #[error("dataset: polynomial degree {degree} unsupported (only 1 or 2)")]
    BadPolyDegree { degree: u8 },
    #[error("dataset: CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// One measurement: a subject's response on a given day at a given occasion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub subject_id: String,
    /// Treatment day, 1–3.
    pub day: u8,
    /// Measurement occasion index on the common grid, 0–6.
    pub time_point: u32,
    /// Clock hours since the day's baseline measurement; informational.
    pub hour_actual: f64,
    pub smoker: bool,
    /// Response value (FEV1 in liters in the motivating study).
    pub response: f64,
}

/// Validated long-format dataset with rows in canonical order
/// (subject, day, time point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongDataset {
    rows: Vec<Observation>,
    subjects: Vec<String>,
    days: Vec<u8>,
    time_points: Vec<u32>,
    response_name: String,
}

impl LongDataset {
    /// Validate a set of observations and normalize their order.
    ///
    /// Checks the schema invariants: days in 1–3, time points in 0–6, finite
    /// numeric fields, unique (subject, day, time point) triples, and a
    /// smoker flag constant within each subject.
    pub fn from_observations(
        mut rows: Vec<Observation>,
        response_name: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (idx, obs) in rows.iter().enumerate() {
            let row = idx + 1;
            if !(1..=3).contains(&obs.day) {
                return Err(DatasetError::OutOfRange {
                    row,
                    column: "day",
                    value: obs.day.to_string(),
                    allowed: "{1,2,3}",
                });
            }
            if obs.time_point > 6 {
                return Err(DatasetError::OutOfRange {
                    row,
                    column: "time_point",
                    value: obs.time_point.to_string(),
                    allowed: "0..=6",
                });
            }
            if !obs.hour_actual.is_finite() {
                return Err(DatasetError::NonFiniteValue { row, column: "hour_actual" });
            }
            if !obs.response.is_finite() {
                return Err(DatasetError::NonFiniteValue { row, column: "fev1" });
            }
        }
        rows.sort_by(|a, b| {
            (&a.subject_id, a.day, a.time_point).cmp(&(&b.subject_id, b.day, b.time_point))
        });
        for pair in rows.windows(2) {
            if pair[0].subject_id == pair[1].subject_id
                && pair[0].day == pair[1].day
                && pair[0].time_point == pair[1].time_point
            {
                return Err(DatasetError::DuplicateTriple {
                    subject: pair[1].subject_id.clone(),
                    day: pair[1].day,
                    time_point: pair[1].time_point,
                });
            }
            if pair[0].subject_id == pair[1].subject_id && pair[0].smoker != pair[1].smoker {
                return Err(DatasetError::NonConstantSmoker {
                    subject: pair[1].subject_id.clone(),
                });
            }
        }
        let mut subjects = Vec::new();
        let mut days = Vec::new();
        let mut time_points = Vec::new();
        for obs in &rows {
            if subjects.last() != Some(&obs.subject_id) {
                subjects.push(obs.subject_id.clone());
            }
            if !days.contains(&obs.day) {
                days.push(obs.day);
            }
            if !time_points.contains(&obs.time_point) {
                time_points.push(obs.time_point);
            }
        }
        days.sort_unstable();
        time_points.sort_unstable();
        Ok(LongDataset { rows, subjects, days, time_points, response_name: response_name.into() })
    }

    /// Observations in canonical (subject, day, time point) order.
    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    /// Ordered unique subject identifiers.
    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    /// Observed treatment days, ascending.
    pub fn days(&self) -> &[u8] {
        &self.days
    }

    /// Observed time-point indices, ascending.
    pub fn time_points(&self) -> &[u32] {
        &self.time_points
    }

    /// Label of the response column ("fev1" for the canonical schema).
    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Response values aligned with [`rows`](Self::rows).
    pub fn response_vector(&self) -> Vec<f64> {
        self.rows.iter().map(|o| o.response).collect()
    }

    /// Keep only observations at the listed time points.
    pub fn filter_time_points(&self, keep: &[u32]) -> Result<LongDataset, DatasetError> {
        let rows: Vec<Observation> =
            self.rows.iter().filter(|o| keep.contains(&o.time_point)).cloned().collect();
        LongDataset::from_observations(rows, self.response_name.clone())
    }

    /// Keep only observations satisfying the predicate.
    pub fn retain(&self, mut pred: impl FnMut(&Observation) -> bool) -> Result<LongDataset, DatasetError> {
        let rows: Vec<Observation> = self.rows.iter().filter(|o| pred(o)).cloned().collect();
        LongDataset::from_observations(rows, self.response_name.clone())
    }
}

/// Parse the canonical long-format CSV from a reader.
///
/// The header must contain exactly the six schema columns in any order.
/// `smoker` accepts `0`, `1`, `true`, `false` (case-insensitive).
///
/// ```
/// let csv = "subject_id,day,time_point,hour_actual,smoker,fev1\n\
///            s01,1,0,0.0,0,4.2\n\
///            s01,1,1,1.0,0,4.1\n";
/// let data = longmix::dataset::parse_long_csv(csv.as_bytes()).unwrap();
/// assert_eq!(data.rows().len(), 2);
/// assert_eq!(data.subjects(), ["s01"]);
/// ```
pub fn parse_long_csv(input: impl Read) -> Result<LongDataset, DatasetError> {
    const COLUMNS: [&str; 6] =
        ["subject_id", "day", "time_point", "hour_actual", "smoker", "fev1"];
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let mut position = [usize::MAX; 6];
    for (idx, name) in headers.iter().enumerate() {
        match COLUMNS.iter().position(|c| *c == name) {
            Some(slot) => position[slot] = idx,
            None => return Err(DatasetError::UnexpectedColumn { name: name.to_string() }),
        }
    }
    for (slot, pos) in position.iter().enumerate() {
        if *pos == usize::MAX {
            return Err(DatasetError::MissingColumn { name: COLUMNS[slot].to_string() });
        }
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        // Row numbering counts the header as line 1.
        let row = idx + 2;
        let field = |slot: usize| record.get(position[slot]).unwrap_or("");
        let day: u8 = parse_field(field(1), row, "day")?;
        let time_point: u32 = parse_field(field(2), row, "time_point")?;
        let hour_actual: f64 = parse_field(field(3), row, "hour_actual")?;
        let response: f64 = parse_field(field(5), row, "fev1")?;
        let smoker = match field(4).to_ascii_lowercase().as_str() {
            "0" | "false" => false,
            "1" | "true" => true,
            other => {
                return Err(DatasetError::UnparseableValue {
                    row,
                    column: "smoker",
                    value: other.to_string(),
                })
            }
        };
        rows.push(Observation {
            subject_id: field(0).to_string(),
            day,
            time_point,
            hour_actual,
            smoker,
            response,
        });
    }
    LongDataset::from_observations(rows, "fev1")
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    row: usize,
    column: &'static str,
) -> Result<T, DatasetError> {
    raw.parse().map_err(|_| DatasetError::UnparseableValue {
        row,
        column,
        value: raw.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

/// Which optional fixed-effect terms enter the mean model (the intercept is
/// always present).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTerms {
    pub smoker: bool,
    pub day: bool,
    pub hour: bool,
    pub day_hour: bool,
}

impl FixedTerms {
    /// All terms of the full mean model: smoker, day, hour, day×hour.
    pub fn full() -> Self {
        FixedTerms { smoker: true, day: true, hour: true, day_hour: true }
    }

    /// Intercept only.
    pub fn intercept_only() -> Self {
        FixedTerms { smoker: false, day: false, hour: false, day_hour: false }
    }
}

/// Random-intercept grouping: one intercept per subject, or one per
/// (subject, day) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    PerSubject,
    PerSubjectDay,
}

/// Residual correlation family within a measurement series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrFamily {
    Ar1,
    #[serde(alias = "cs")]
    CompoundSymmetric,
    Independent,
}

/// Estimation method: restricted maximum likelihood or plain maximum
/// likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Reml,
    Ml,
}

/// Declarative model description: fixed terms, random-intercept grouping,
/// residual correlation family, estimation method, and polynomial degree for
/// the hour trend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fixed: FixedTerms,
    pub grouping: Grouping,
    pub corr_family: CorrFamily,
    pub method: FitMethod,
    /// 1 for a linear hour trend, 2 to add an hour² column.
    pub poly_degree: u8,
}

impl ModelSpec {
    /// The full model: all fixed terms, per-subject intercepts, AR1
    /// residual correlation, REML, linear hour.
    pub fn full_model() -> Self {
        ModelSpec {
            fixed: FixedTerms::full(),
            grouping: Grouping::PerSubject,
            corr_family: CorrFamily::Ar1,
            method: FitMethod::Reml,
            poly_degree: 1,
        }
    }

    /// Check internal coherence of the term set.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.fixed.day_hour && !(self.fixed.day && self.fixed.hour) {
            return Err(DatasetError::IncoherentTerms {
                term: "day:hour",
                requires: "day and hour",
            });
        }
        if !(1..=2).contains(&self.poly_degree) {
            return Err(DatasetError::BadPolyDegree { degree: self.poly_degree });
        }
        if self.poly_degree == 2 && !self.fixed.hour {
            return Err(DatasetError::IncoherentTerms { term: "hour^2", requires: "hour" });
        }
        Ok(())
    }

    /// Number of free variance parameters for the correlation family
    /// (σ_b², σ_ε², and ρ unless the family is Independent).
    pub fn k_var(&self) -> usize {
        match self.corr_family {
            CorrFamily::Independent => 2,
            _ => 3,
        }
    }
}

// ---------------------------------------------------------------------------
// Design encoding
// ---------------------------------------------------------------------------

/// One within-(subject, day) measurement series: row indices into the
/// dataset's canonical order, plus the matching time points, already sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub subject_id: String,
    pub day: u8,
    /// Row indices into the design matrix / canonical row order.
    pub rows: Vec<usize>,
    /// Time-point index per row, strictly increasing.
    pub time_points: Vec<u32>,
}

/// One random-intercept group: a label plus the indices of its series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Subject id, or "subject:day d" under per-(subject, day) grouping.
    pub label: String,
    /// Indices into [`DesignMatrices::series`].
    pub series: Vec<usize>,
    /// Total observations in the group.
    pub n_obs: usize,
}

/// Encoded fixed-effects design plus the series/group row partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    /// n×p fixed-effects matrix, rows aligned with the dataset's canonical
    /// order.
    pub x: Matrix,
    /// Column labels, in encoding order.
    pub column_names: Vec<String>,
    /// Within-(subject, day) series partition of the rows.
    pub series: Vec<Series>,
    /// Random-intercept groups; each series index appears in exactly one.
    pub groups: Vec<Group>,
}

/// Encode the fixed-effects design matrix and grouping layout.
///
/// Columns appear in the fixed order intercept, smoker, day contrasts
/// (reference = lowest observed day), hour, day:hour interactions, hour².
/// The hour covariate is the time-point index (evenly spaced occasions);
/// `hour_actual` never enters the design.
///
/// ```
/// # use longmix::dataset::{parse_long_csv, encode_design, ModelSpec};
/// let csv = "subject_id,day,time_point,hour_actual,smoker,fev1\n\
///            s01,1,0,0.0,0,4.2\n           s01,1,1,1.0,0,4.1\n\
///            s01,2,0,0.0,0,4.0\n           s01,2,1,1.0,0,4.3\n\
///            s02,1,0,0.0,1,3.9\n           s02,1,1,1.0,1,3.8\n\
///            s02,2,0,0.0,1,4.1\n           s02,2,1,1.0,1,4.0\n";
/// let data = parse_long_csv(csv.as_bytes()).unwrap();
/// let design = encode_design(&data, &ModelSpec::full_model()).unwrap();
/// assert_eq!(design.column_names, ["intercept", "smoker", "day2", "hour", "day2:hour"]);
/// assert_eq!(design.groups.len(), 2);
/// ```
pub fn encode_design(
    data: &LongDataset,
    spec: &ModelSpec,
) -> Result<DesignMatrices, DatasetError> {
    spec.validate()?;
    if data.rows.is_empty() {
        return Err(DatasetError::Empty);
    }
    if spec.fixed.smoker && !has_two_levels(data.rows.iter().map(|o| o.smoker)) {
        return Err(DatasetError::SingleLevelFactor { term: "smoker" });
    }
    let day_levels = data.days.clone();
    if spec.fixed.day && day_levels.len() < 2 {
        return Err(DatasetError::SingleLevelFactor { term: "day" });
    }
    // Non-reference day levels, ascending; empty when the day term is off.
    let day_contrasts: Vec<u8> =
        if spec.fixed.day { day_levels[1..].to_vec() } else { Vec::new() };

    let mut column_names = vec!["intercept".to_string()];
    if spec.fixed.smoker {
        column_names.push("smoker".to_string());
    }
    for d in &day_contrasts {
        column_names.push(format!("day{d}"));
    }
    if spec.fixed.hour {
        column_names.push("hour".to_string());
    }
    if spec.fixed.day_hour {
        for d in &day_contrasts {
            column_names.push(format!("day{d}:hour"));
        }
    }
    if spec.poly_degree == 2 {
        column_names.push("hour2".to_string());
    }

    let n = data.rows.len();
    let p = column_names.len();
    let mut x = Matrix::zeros(n, p);
    for (i, obs) in data.rows.iter().enumerate() {
        let hour = obs.time_point as f64;
        let row = x.row_mut(i);
        let mut c = 0;
        row[c] = 1.0;
        c += 1;
        if spec.fixed.smoker {
            row[c] = if obs.smoker { 1.0 } else { 0.0 };
            c += 1;
        }
        for d in &day_contrasts {
            row[c] = if obs.day == *d { 1.0 } else { 0.0 };
            c += 1;
        }
        if spec.fixed.hour {
            row[c] = hour;
            c += 1;
        }
        if spec.fixed.day_hour {
            for d in &day_contrasts {
                row[c] = if obs.day == *d { hour } else { 0.0 };
                c += 1;
            }
        }
        if spec.poly_degree == 2 {
            row[c] = hour * hour;
            c += 1;
        }
        debug_assert_eq!(c, p);
    }

    // Series: consecutive rows share a (subject, day) key thanks to the
    // canonical ordering.
    let mut series: Vec<Series> = Vec::new();
    for (i, obs) in data.rows.iter().enumerate() {
        let same_series = series.last().is_some_and(|s: &Series| {
            s.subject_id == obs.subject_id && s.day == obs.day
        });
        if same_series {
            let s = series.last_mut().unwrap();
            s.rows.push(i);
            s.time_points.push(obs.time_point);
        } else {
            series.push(Series {
                subject_id: obs.subject_id.clone(),
                day: obs.day,
                rows: vec![i],
                time_points: vec![obs.time_point],
            });
        }
    }

    // Groups: contiguous runs of series sharing the grouping key. The
    // canonical row order keeps each key's series adjacent, so one scan
    // suffices and every group covers a contiguous span of rows.
    let mut groups: Vec<Group> = Vec::new();
    let mut last_key: Option<(&str, Option<u8>)> = None;
    for (si, s) in series.iter().enumerate() {
        let key = match spec.grouping {
            Grouping::PerSubject => (s.subject_id.as_str(), None),
            Grouping::PerSubjectDay => (s.subject_id.as_str(), Some(s.day)),
        };
        if last_key == Some(key) {
            let g = groups.last_mut().unwrap();
            g.series.push(si);
            g.n_obs += s.rows.len();
        } else {
            let label = match spec.grouping {
                Grouping::PerSubject => s.subject_id.clone(),
                Grouping::PerSubjectDay => format!("{}:day {}", s.subject_id, s.day),
            };
            groups.push(Group { label, series: vec![si], n_obs: s.rows.len() });
            last_key = Some(key);
        }
    }

    Ok(DesignMatrices { x, column_names, series, groups })
}

fn has_two_levels<T: PartialEq>(mut iter: impl Iterator<Item = T>) -> bool {
    match iter.next() {
        None => false,
        Some(first) => iter.any(|v| v != first),
    }
}
