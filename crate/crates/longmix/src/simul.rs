//! Parametric simulator and recovery studies: generate datasets from the
//! mixed model itself, refit them, and report bias, coverage, and
//! covariance-family selection rates. With no shared real dataset to test
//! against, these studies are the strongest available check that the whole
//! pipeline — design encoding, likelihood, optimizer, and intervals —
//! composes correctly.
//!
//! Randomness: each dataset is driven by one `ChaCha8` stream seeded from a
//! `u64`; replicate `r` of a study uses a child seed derived by a SplitMix64
//! hash of `(seed, r)`, so replicates are reproducible independently of
//! evaluation order or concurrency. Normal variates come from the inverse
//! CDF applied to open-interval uniforms.

use crate::classical::dist;
use crate::dataset::{
    encode_design, CorrFamily, DatasetError, FixedTerms, Grouping, LongDataset, ModelSpec,
    Observation,
};
use crate::lmm::{self, LmmError, VarianceParams};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from simulation and study configuration.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("simul: invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Lmm(#[from] Box<LmmError>),
}

/// Generative configuration: layout, true parameters, and study controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_subjects: usize,
    /// Number of days per subject (1..=3).
    pub days: u8,
    /// Number of time points per day (1..=7, indices 0..time_points).
    pub time_points: u32,
    /// True mean coefficients, aligned with the encoded design columns of
    /// [`SimConfig::mean_spec`].
    pub beta: Vec<f64>,
    /// True variance parameters (zero variances allowed for noiseless runs).
    pub vparams: VarianceParams,
    pub family: CorrFamily,
    pub grouping: Grouping,
    pub seed: u64,
    pub n_replicates: usize,
    /// Covariance families entered into the AIC selection race each
    /// replicate; empty (the default) means no selection study.
    #[serde(default)]
    pub candidates: Vec<CorrFamily>,
}

impl SimConfig {
    /// The fixed-effects structure the simulator generates from: the full
    /// mean model, with terms that the layout cannot identify dropped
    /// (day terms need ≥ 2 days; the smoker term needs ≥ 2 subjects).
    pub fn mean_spec(&self) -> ModelSpec {
        ModelSpec {
            fixed: FixedTerms {
                smoker: self.n_subjects >= 2,
                day: self.days >= 2,
                hour: true,
                day_hour: self.days >= 2,
            },
            grouping: self.grouping,
            corr_family: self.family,
            method: crate::dataset::FitMethod::Reml,
            poly_degree: 1,
        }
    }

    /// Expected length of `beta` for this layout.
    pub fn expected_beta_len(&self) -> usize {
        let day_contrasts = if self.days >= 2 { self.days as usize - 1 } else { 0 };
        let smoker = usize::from(self.n_subjects >= 2);
        // intercept + smoker + day contrasts + hour + day:hour contrasts
        1 + smoker + day_contrasts + 1 + day_contrasts
    }

    fn validate(&self) -> Result<(), SimError> {
        let fail = |reason: String| Err(SimError::InvalidConfig { reason });
        if self.n_subjects == 0 {
            return fail("n_subjects must be ≥ 1".into());
        }
        if !(1..=3).contains(&self.days) {
            return fail(format!("days must be in 1..=3, got {}", self.days));
        }
        if !(1..=7).contains(&self.time_points) {
            return fail(format!("time_points must be in 1..=7, got {}", self.time_points));
        }
        if self.beta.len() != self.expected_beta_len() {
            return fail(format!(
                "beta has length {}, expected {} for this layout",
                self.beta.len(),
                self.expected_beta_len()
            ));
        }
        let vp = &self.vparams;
        if !(vp.sigma_b2 >= 0.0) || !vp.sigma_b2.is_finite() {
            return fail(format!("sigma_b2 = {} must be finite and ≥ 0", vp.sigma_b2));
        }
        if !(vp.sigma_e2 >= 0.0) || !vp.sigma_e2.is_finite() {
            return fail(format!("sigma_e2 = {} must be finite and ≥ 0", vp.sigma_e2));
        }
        match (self.family, vp.rho) {
            (CorrFamily::Independent, None) => {}
            (CorrFamily::Independent, Some(r)) => {
                return fail(format!("rho = {r} given for the Independent family"));
            }
            (_, None) => return fail("rho required for AR1/CompoundSymmetric".into()),
            (CorrFamily::Ar1, Some(r)) if !(-1.0 < r && r < 1.0) => {
                return fail(format!("AR1 rho = {r} outside (−1, 1)"));
            }
            (CorrFamily::CompoundSymmetric, Some(r)) if !(0.0..1.0).contains(&r) => {
                return fail(format!("compound-symmetric rho = {r} outside [0, 1)"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Largest open-interval uniform below 1.0, used to guard the one-in-2⁵³
/// case where `(x + 0.5) / 2⁵³` rounds up to exactly 1.0.
const U_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Standard-normal draws from a seeded ChaCha8 stream via the inverse CDF.
struct NormalSource {
    rng: ChaCha8Rng,
}

impl NormalSource {
    fn new(seed: u64) -> Self {
        NormalSource { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform on the open interval (0, 1): 53 random bits centered in
    /// their bucket.
    fn uniform(&mut self) -> f64 {
        let u = ((self.rng.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0;
        u.min(U_MAX)
    }

    fn standard_normal(&mut self) -> f64 {
        dist::normal_inverse_cdf(self.uniform())
    }
}

/// Child seed for replicate `r`: one SplitMix64 mixing round over the study
/// seed offset by the replicate index.
fn child_seed(seed: u64, r: u64) -> u64 {
    let mut z = seed ^ r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fill `out` with one mean-zero residual series of the configured family.
fn fill_residual_series(
    out: &mut [f64],
    family: CorrFamily,
    vp: &VarianceParams,
    source: &mut NormalSource,
) {
    let sigma = vp.sigma_e2.sqrt();
    match family {
        CorrFamily::Independent => {
            for e in out.iter_mut() {
                *e = sigma * source.standard_normal();
            }
        }
        CorrFamily::Ar1 => {
            // Stationary recursion: every ε_t is marginally N(0, σ²) with
            // corr(ε_s, ε_t) = ρ^|s−t|.
            let rho = vp.rho.unwrap();
            let innovation = (1.0 - rho * rho).sqrt();
            let mut prev = 0.0;
            for (t, e) in out.iter_mut().enumerate() {
                let z = source.standard_normal();
                prev = if t == 0 { sigma * z } else { rho * prev + innovation * sigma * z };
                *e = prev;
            }
        }
        CorrFamily::CompoundSymmetric => {
            // Shared component √ρ·σ·u plus independent √(1−ρ)·σ·z gives
            // variance σ² and constant within-series correlation ρ.
            let rho = vp.rho.unwrap();
            let shared = rho.sqrt() * sigma * source.standard_normal();
            let indep = (1.0 - rho).sqrt() * sigma;
            for e in out.iter_mut() {
                *e = shared + indep * source.standard_normal();
            }
        }
    }
}

/// Simulate one dataset: `y = Xβ + b + ε` on the configured grid.
///
/// Subjects are `s0000, s0001, …`; the second half (by sorted id) are
/// smokers. The draw order is fixed — one intercept per group in group
/// order, then each series' residuals in series order — so a given seed
/// always produces the same dataset.
pub fn simulate(config: &SimConfig) -> Result<LongDataset, SimError> {
    config.validate()?;
    let spec = config.mean_spec();
    // Grid skeleton with zero responses, used to encode the mean design.
    let smoker_from = (config.n_subjects + 1) / 2;
    let mut skeleton = Vec::new();
    for i in 0..config.n_subjects {
        for day in 1..=config.days {
            for tp in 0..config.time_points {
                skeleton.push(Observation {
                    subject_id: format!("s{i:04}"),
                    day,
                    time_point: tp,
                    hour_actual: tp as f64,
                    smoker: i >= smoker_from,
                    response: 0.0,
                });
            }
        }
    }
    let base = LongDataset::from_observations(skeleton, "fev1")?;
    let design = encode_design(&base, &spec)?;
    let x = &design.x;

    let mut source = NormalSource::new(config.seed);
    let sigma_b = config.vparams.sigma_b2.sqrt();
    let intercepts: Vec<f64> =
        (0..design.groups.len()).map(|_| sigma_b * source.standard_normal()).collect();
    let mut noise = vec![0.0; base.rows().len()];
    for s in &design.series {
        let mut buf = vec![0.0; s.rows.len()];
        fill_residual_series(&mut buf, config.family, &config.vparams, &mut source);
        for (&row, e) in s.rows.iter().zip(buf) {
            noise[row] = e;
        }
    }
    for (gi, g) in design.groups.iter().enumerate() {
        for &si in &g.series {
            for &row in &design.series[si].rows {
                noise[row] += intercepts[gi];
            }
        }
    }

    let rows: Vec<Observation> = base
        .rows()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mean: f64 =
                x.row(i).iter().zip(&config.beta).map(|(a, b)| a * b).sum();
            Observation { response: mean + noise[i], ..o.clone() }
        })
        .collect();
    Ok(LongDataset::from_observations(rows, "fev1")?)
}

/// Recovery summary for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Monte-Carlo standard deviation of the estimates.
    pub mc_sd: f64,
    /// Monte-Carlo standard error of the mean estimate (mc_sd/√R).
    pub mc_se: f64,
    /// Fraction of replicates whose 95% Wald interval covered the truth;
    /// absent for variance parameters (no interval is formed for them).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

/// AIC race outcome for one candidate family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub family: CorrFamily,
    pub wins: usize,
    pub frequency: f64,
}

/// Aggregated recovery-study output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n_replicates: usize,
    /// Replicates whose primary fit failed; excluded from the aggregates.
    pub n_failed: usize,
    pub parameters: Vec<ParameterSummary>,
    /// AIC selection results over `candidates`; empty when no candidates
    /// were configured.
    pub selection: Vec<FamilySelection>,
    /// Replicates where every candidate fit succeeded (the selection
    /// denominator).
    pub n_selection_replicates: usize,
}

struct ReplicateOutcome {
    beta: Vec<f64>,
    covered: Vec<bool>,
    vparams: VarianceParams,
    /// AIC per candidate family, `None` where that fit failed.
    candidate_aic: Vec<Option<f64>>,
}

/// Simulate-and-refit study: replicate `r` simulates with child seed
/// `hash(seed, r)`, fits the correctly specified model by REML, and (when
/// candidates are configured) also fits each candidate family for the AIC
/// race. Failed fits are counted, not fatal. Results are independent of
/// evaluation order; replicates may run concurrently.
pub fn recovery_study(config: &SimConfig) -> Result<StudyReport, SimError> {
    config.validate()?;
    if config.n_replicates < 2 {
        return Err(SimError::InvalidConfig {
            reason: format!("n_replicates must be ≥ 2, got {}", config.n_replicates),
        });
    }
    let spec = config.mean_spec();
    let run_one = |r: usize| -> Result<ReplicateOutcome, LmmError> {
        let mut rep_config = config.clone();
        rep_config.seed = child_seed(config.seed, r as u64);
        let data = simulate(&rep_config).map_err(|e| match e {
            SimError::Lmm(inner) => *inner,
            SimError::Dataset(d) => LmmError::Dataset(d),
            SimError::InvalidConfig { .. } => unreachable!("config validated above"),
        })?;
        let fit = lmm::fit(&data, &spec)?;
        let table = lmm::wald_intervals(&fit, 0.95)?;
        let covered = table
            .rows
            .iter()
            .zip(&config.beta)
            .map(|(row, &truth)| row.ci_low <= truth && truth <= row.ci_high)
            .collect();
        let candidate_aic = config
            .candidates
            .iter()
            .map(|&family| {
                let mut cand_spec = spec;
                cand_spec.corr_family = family;
                // Reuse the primary fit when the candidate is the truth.
                if family == config.family {
                    return Some(lmm::information_criteria(&fit).aic);
                }
                lmm::fit(&data, &cand_spec)
                    .ok()
                    .map(|f| lmm::information_criteria(&f).aic)
            })
            .collect();
        Ok(ReplicateOutcome { beta: fit.beta.clone(), covered, vparams: fit.vparams, candidate_aic })
    };
    let outcomes: Vec<Result<ReplicateOutcome, LmmError>> =
        (0..config.n_replicates).into_par_iter().map(run_one).collect();

    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let n_failed = config.n_replicates - ok.len();
    if ok.len() < 2 {
        return Err(SimError::InvalidConfig {
            reason: format!(
                "only {} of {} replicates produced a fit; cannot aggregate",
                ok.len(),
                config.n_replicates
            ),
        });
    }

    let design_names = {
        let mut probe = config.clone();
        probe.seed = child_seed(config.seed, 0);
        let data = simulate(&probe)?;
        encode_design(&data, &spec)?.column_names
    };
    let r_ok = ok.len() as f64;
    let summarize = |name: &str, truth: f64, values: Vec<f64>, coverage: Option<f64>| {
        let mean = values.iter().sum::<f64>() / r_ok;
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        let mc_sd = (ss / (r_ok - 1.0)).sqrt();
        ParameterSummary {
            name: name.to_string(),
            true_value: truth,
            mean_estimate: mean,
            bias: mean - truth,
            mc_sd,
            mc_se: mc_sd / r_ok.sqrt(),
            coverage,
        }
    };
    let mut parameters = Vec::new();
    for (j, name) in design_names.iter().enumerate() {
        let values: Vec<f64> = ok.iter().map(|o| o.beta[j]).collect();
        let covered = ok.iter().filter(|o| o.covered[j]).count() as f64 / r_ok;
        parameters.push(summarize(name, config.beta[j], values, Some(covered)));
    }
    parameters.push(summarize(
        "sigma_b2",
        config.vparams.sigma_b2,
        ok.iter().map(|o| o.vparams.sigma_b2).collect(),
        None,
    ));
    parameters.push(summarize(
        "sigma_e2",
        config.vparams.sigma_e2,
        ok.iter().map(|o| o.vparams.sigma_e2).collect(),
        None,
    ));
    if let Some(rho_true) = config.vparams.rho {
        parameters.push(summarize(
            "rho",
            rho_true,
            ok.iter().map(|o| o.vparams.rho.unwrap_or(f64::NAN)).collect(),
            None,
        ));
    }

    let mut selection = Vec::new();
    let mut n_selection = 0;
    if !config.candidates.is_empty() {
        let mut wins = vec![0usize; config.candidates.len()];
        for o in &ok {
            let aics: Option<Vec<f64>> = o.candidate_aic.iter().copied().collect();
            let Some(aics) = aics else { continue };
            n_selection += 1;
            let best = aics
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            wins[best] += 1;
        }
        selection = config
            .candidates
            .iter()
            .zip(&wins)
            .map(|(&family, &w)| FamilySelection {
                family,
                wins: w,
                frequency: if n_selection > 0 { w as f64 / n_selection as f64 } else { 0.0 },
            })
            .collect();
    }

    Ok(StudyReport {
        n_replicates: config.n_replicates,
        n_failed,
        parameters,
        selection,
        n_selection_replicates: n_selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_config() -> SimConfig {
        SimConfig {
            n_subjects: 8,
            days: 2,
            time_points: 4,
            // intercept, smoker, day2, hour, day2:hour
            beta: vec![4.2, -0.1, -0.05, -0.02, 0.01],
            vparams: VarianceParams::with_rho(0.09, 0.02, 0.5),
            family: CorrFamily::Ar1,
            grouping: Grouping::PerSubject,
            seed: 42,
            n_replicates: 2,
            candidates: Vec::new(),
        }
    }

    #[test]
    fn same_seed_reproduces_bytes() {
        let config = small_config();
        let a = simulate(&config).unwrap();
        let b = simulate(&config).unwrap();
        assert_eq!(a.rows(), b.rows());
        let mut other = config;
        other.seed = 43;
        let c = simulate(&other).unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn noiseless_run_reproduces_the_mean_surface() {
        let mut config = small_config();
        config.vparams = VarianceParams::with_rho(0.0, 0.0, 0.5);
        let data = simulate(&config).unwrap();
        let design = encode_design(&data, &config.mean_spec()).unwrap();
        let y = data.response_vector();
        for i in 0..y.len() {
            let mean: f64 =
                design.x.row(i).iter().zip(&config.beta).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(y[i], mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoker_split_is_half_and_half() {
        let mut config = small_config();
        config.n_subjects = 28;
        let data = simulate(&config).unwrap();
        let mut smokers = std::collections::BTreeSet::new();
        let mut nonsmokers = std::collections::BTreeSet::new();
        for o in data.rows() {
            if o.smoker {
                smokers.insert(o.subject_id.clone());
            } else {
                nonsmokers.insert(o.subject_id.clone());
            }
        }
        assert_eq!(smokers.len(), 14);
        assert_eq!(nonsmokers.len(), 14);
        // The split is by sorted id: nonsmokers first.
        assert!(nonsmokers.iter().max().unwrap() < smokers.iter().min().unwrap());
    }

    #[test]
    fn ar1_recursion_has_the_stationary_autocorrelation() {
        // Long raw series through the generation kernel itself.
        let vp = VarianceParams::with_rho(0.0, 4.0, 0.6);
        let mut source = NormalSource::new(7);
        let n = 100_000;
        let mut series = vec![0.0; n];
        fill_residual_series(&mut series, CorrFamily::Ar1, &vp, &mut source);
        let mean = series.iter().sum::<f64>() / n as f64;
        let var = series.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
        let lag1: f64 = series
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / ((n - 1) as f64 * var);
        assert_abs_diff_eq!(lag1, 0.6, epsilon = 0.05);
        assert_abs_diff_eq!(var, 4.0, epsilon = 0.15);
    }

    #[test]
    fn compound_symmetry_has_flat_correlation() {
        // Many short series: corr between positions 0 and 2 ≈ ρ and the
        // marginal variance ≈ σ².
        let vp = VarianceParams::with_rho(0.0, 1.0, 0.4);
        let mut source = NormalSource::new(11);
        let reps = 40_000;
        let mut a = Vec::with_capacity(reps);
        let mut b = Vec::with_capacity(reps);
        let mut buf = [0.0; 3];
        for _ in 0..reps {
            fill_residual_series(&mut buf, CorrFamily::CompoundSymmetric, &vp, &mut source);
            a.push(buf[0]);
            b.push(buf[2]);
        }
        let mean_a = a.iter().sum::<f64>() / reps as f64;
        let mean_b = b.iter().sum::<f64>() / reps as f64;
        let var_a = a.iter().map(|v| (v - mean_a) * (v - mean_a)).sum::<f64>() / reps as f64;
        let var_b = b.iter().map(|v| (v - mean_b) * (v - mean_b)).sum::<f64>() / reps as f64;
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - mean_a) * (y - mean_b))
            .sum::<f64>()
            / reps as f64;
        assert_abs_diff_eq!(cov / (var_a * var_b).sqrt(), 0.4, epsilon = 0.03);
        assert_abs_diff_eq!(var_a, 1.0, epsilon = 0.05);
    }

    #[test]
    fn uniform_source_stays_in_the_open_interval() {
        let mut source = NormalSource::new(3);
        for _ in 0..200_000 {
            let u = source.uniform();
            assert!(0.0 < u && u < 1.0);
            assert!(source.standard_normal().is_finite());
        }
    }

    #[test]
    fn child_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..10_000).map(|r| child_seed(99, r)).collect();
        assert_eq!(seeds.len(), 10_000);
        // Different study seeds give different streams for the same index.
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let mut c = small_config();
        c.n_subjects = 0;
        assert!(matches!(simulate(&c), Err(SimError::InvalidConfig { .. })));
        let mut c = small_config();
        c.beta.pop();
        assert!(matches!(simulate(&c), Err(SimError::InvalidConfig { .. })));
        let mut c = small_config();
        c.vparams.rho = Some(1.5);
        assert!(matches!(simulate(&c), Err(SimError::InvalidConfig { .. })));
        let mut c = small_config();
        c.time_points = 9;
        assert!(matches!(simulate(&c), Err(SimError::InvalidConfig { .. })));
        let mut c = small_config();
        c.family = CorrFamily::Independent;
        assert!(matches!(simulate(&c), Err(SimError::InvalidConfig { .. })));
    }

    #[test]
    fn minimal_study_produces_finite_summaries() {
        let mut config = small_config();
        config.n_replicates = 2;
        let report = recovery_study(&config).unwrap();
        assert_eq!(report.n_replicates, 2);
        assert_eq!(report.n_failed, 0);
        // Fixed effects + sigma_b2 + sigma_e2 + rho.
        assert_eq!(report.parameters.len(), config.beta.len() + 3);
        for p in &report.parameters {
            assert!(p.mc_sd.is_finite() && p.mc_sd > 0.0);
            assert!(p.mc_se.is_finite() && p.mc_se > 0.0);
            if let Some(c) = p.coverage {
                assert!((0.0..=1.0).contains(&c));
            }
        }
        assert!(report.selection.is_empty());
        // Variance parameters carry no coverage.
        let rho_row = report.parameters.iter().find(|p| p.name == "rho").unwrap();
        assert_eq!(rho_row.coverage, None);
    }

    #[test]
    fn study_is_deterministic_and_order_independent() {
        let mut config = small_config();
        config.n_replicates = 6;
        let a = recovery_study(&config).unwrap();
        let b = recovery_study(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadrupling_subjects_halves_the_spread() {
        let base = SimConfig {
            n_subjects: 8,
            days: 2,
            time_points: 4,
            beta: vec![4.2, -0.1, -0.05, -0.02, 0.01],
            vparams: VarianceParams::with_rho(0.04, 0.02, 0.4),
            family: CorrFamily::Ar1,
            grouping: Grouping::PerSubject,
            seed: 2024,
            n_replicates: 80,
            candidates: Vec::new(),
        };
        let small = recovery_study(&base).unwrap();
        let mut big_config = base.clone();
        big_config.n_subjects = 32;
        let big = recovery_study(&big_config).unwrap();
        let sd_of = |r: &StudyReport, name: &str| {
            r.parameters.iter().find(|p| p.name == name).unwrap().mc_sd
        };
        // 4× subjects → √4 = 2× smaller Monte-Carlo spread, within ±25%.
        let ratio = sd_of(&small, "hour") / sd_of(&big, "hour");
        assert!(
            (1.5..=2.5).contains(&ratio),
            "spread ratio {ratio} outside the standard-error scaling window"
        );
    }

    #[test]
    fn selection_prefers_the_true_family() {
        // Truth compound-symmetric with a visibly non-AR1 correlation
        // profile: the AIC race should favor CS.
        let config = SimConfig {
            n_subjects: 24,
            days: 3,
            time_points: 7,
            beta: vec![4.2, -0.1, -0.03, -0.02, -0.015, 0.005, 0.01],
            vparams: VarianceParams::with_rho(0.04, 0.03, 0.6),
            family: CorrFamily::CompoundSymmetric,
            grouping: Grouping::PerSubject,
            seed: 5,
            n_replicates: 24,
            candidates: vec![CorrFamily::Ar1, CorrFamily::CompoundSymmetric],
        };
        let report = recovery_study(&config).unwrap();
        assert_eq!(report.selection.len(), 2);
        let wins = |f: CorrFamily| {
            report.selection.iter().find(|s| s.family == f).unwrap().wins
        };
        assert!(
            wins(CorrFamily::CompoundSymmetric) > wins(CorrFamily::Ar1),
            "CS should win the AIC race under CS truth: {:?}",
            report.selection
        );
        let freq_sum: f64 = report.selection.iter().map(|s| s.frequency).sum();
        assert_abs_diff_eq!(freq_sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn recovery_is_reasonably_unbiased_at_moderate_scale() {
        // Moderate-size sanity check that the estimator chain recovers the
        // truth: every fixed-effect bias within 4 MC standard errors.
        let config = SimConfig {
            n_subjects: 24,
            days: 2,
            time_points: 5,
            beta: vec![4.0, -0.08, -0.05, -0.02, 0.01],
            vparams: VarianceParams::with_rho(0.06, 0.015, 0.5),
            family: CorrFamily::Ar1,
            grouping: Grouping::PerSubject,
            seed: 77,
            n_replicates: 60,
            candidates: Vec::new(),
        };
        let report = recovery_study(&config).unwrap();
        assert_eq!(report.n_failed, 0);
        for p in report.parameters.iter().filter(|p| p.coverage.is_some()) {
            assert!(
                p.bias.abs() <= 4.0 * p.mc_se,
                "{} bias {} exceeds 4 MC SE {}",
                p.name,
                p.bias,
                p.mc_se
            );
        }
    }
}
