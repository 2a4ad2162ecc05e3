//! Subcommand implementations: flag/config resolution, report writing, and
//! the error-to-exit-code mapping.

use clap::Args;
use longmix::classical::{factorial_anova, paired_t_test, AnovaTable, ClassicalError, PairedTResult};
use longmix::dataset::{
    parse_long_csv, CorrFamily, DatasetError, FitMethod, FixedTerms, Grouping, LongDataset,
    ModelSpec,
};
use longmix::diagnostics::{diagnostics_report, DiagnosticsError, DiagnosticsReport};
use longmix::explore::{
    empirical_cov_corr, mean_profiles, pairwise_scatter_data, CovCorrMatrix, ExploreError,
    MeanProfileTable,
};
use longmix::lmm::{
    fit, information_criteria, stratified_fit, FitReport, FittedModel, LmmError, StratumDifference,
};
use longmix::optim::OptimError;
use longmix::simul::{recovery_study, simulate, SimConfig, SimError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Flags shared by every subcommand. Each flag mirrors a key in the
/// optional TOML config file; explicit flags override config values.
#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// Input dataset (long-format CSV).
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Output directory for reports; created if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// TOML config file mirroring the flags (flags override it).
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Fixed-effects formula, e.g. "smoker+day*hour". Terms: smoker, day,
    /// hour, day:hour; day*hour expands to day+hour+day:hour; "1" is
    /// intercept-only. Repeat the flag to compare mean structures by AIC
    /// (maximum likelihood only).
    #[arg(long)]
    pub fixed: Vec<String>,

    /// Polynomial degree of the hour trend: 1 or 2.
    #[arg(long)]
    pub poly: Option<u8>,

    /// Random-intercept grouping: "subject" or "subject-day".
    #[arg(long)]
    pub grouping: Option<String>,

    /// Residual correlation family: "ar1", "cs", or "independent". When
    /// omitted, `fit` tries ar1 and cs and reports the AIC winner; the
    /// other subcommands default to ar1.
    #[arg(long)]
    pub corr: Option<String>,

    /// Estimation method: "reml" or "ml".
    #[arg(long)]
    pub method: Option<String>,

    /// Confidence level for Wald intervals.
    #[arg(long)]
    pub level: Option<f64>,

    /// Stratifying variable for `stratify` (only "smoker" exists).
    #[arg(long)]
    pub stratify: Option<String>,

    /// Keep only these time points, e.g. "0,2,4,6".
    #[arg(long, value_delimiter = ',')]
    pub filter_timepoints: Option<Vec<u32>>,

    /// Seed for `simulate`/`study`, overriding the config value.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Two time points paired by `compare`'s t-test, e.g. "0,6"; defaults
    /// to the first and last observed time points.
    #[arg(long, value_delimiter = ',')]
    pub pair_timepoints: Option<Vec<u32>>,
}

// ---------------------------------------------------------------------------
// Errors, codes, exit codes
// ---------------------------------------------------------------------------

/// Top-level error: every failure funnels here, gains a module-qualified
/// code for stderr, and maps to exit 2 (validation) or 3 (convergence).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Usage { message: String },
    #[error(
        "AIC values from restricted-likelihood fits with different fixed effects are not \
         comparable: REML integrates out a different fixed-effect space for each mean model, \
         so the criteria sit on different scales. Re-run with --method ml to compare mean \
         structures, or keep a single --fixed."
    )]
    RemlAicComparison,
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Lmm(#[from] LmmError),
    #[error(transparent)]
    Classical(#[from] ClassicalError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("serializing report: {0}")]
    Json(#[from] serde_json::Error),
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage { message: message.into() }
}

fn dataset_code(e: &DatasetError) -> &'static str {
    match e {
        DatasetError::MissingColumn { .. } => "dataset::missing_column",
        DatasetError::UnexpectedColumn { .. } => "dataset::unexpected_column",
        DatasetError::DuplicateTriple { .. } => "dataset::duplicate_triple",
        DatasetError::NonConstantSmoker { .. } => "dataset::non_constant_smoker",
        DatasetError::UnparseableValue { .. } => "dataset::unparseable_value",
        DatasetError::OutOfRange { .. } => "dataset::out_of_range",
        DatasetError::NonFiniteValue { .. } => "dataset::non_finite_value",
        DatasetError::Empty => "dataset::empty",
        DatasetError::SingleLevelFactor { .. } => "dataset::single_level_factor",
        DatasetError::IncoherentTerms { .. } => "dataset::incoherent_terms",
        DatasetError::BadPolyDegree { .. } => "dataset::bad_poly_degree",
        DatasetError::Csv(_) => "dataset::csv",
    }
}

fn optim_code(e: &OptimError) -> &'static str {
    match e {
        OptimError::NonFiniteObjective { .. } => "optim::non_finite_objective",
        OptimError::DidNotConverge { .. } => "optim::did_not_converge",
        OptimError::NoStarts => "optim::no_starts",
        OptimError::DimensionMismatch { .. } => "optim::dimension_mismatch",
        OptimError::Domain { .. } => "optim::domain",
    }
}

fn lmm_code(e: &LmmError) -> &'static str {
    match e {
        LmmError::RhoOutOfDomain { .. } => "lmm::rho_out_of_domain",
        LmmError::InvalidVariance { .. } => "lmm::invalid_variance",
        LmmError::SingularDesign { .. } => "lmm::singular_design",
        LmmError::NonPositiveDefiniteV { .. } => "lmm::non_positive_definite",
        LmmError::DidNotConverge { .. } => "lmm::did_not_converge",
        LmmError::Identifiability { .. } => "lmm::identifiability",
        LmmError::NotConverged { .. } => "lmm::not_converged",
        LmmError::Stratum { source, .. } => lmm_code(source),
        LmmError::SingleStratum => "lmm::single_stratum",
        LmmError::UnknownStratifier { .. } => "lmm::unknown_stratifier",
        LmmError::InvalidLevel { .. } => "lmm::invalid_level",
        LmmError::Dataset(inner) => dataset_code(inner),
        LmmError::Optim(inner) => optim_code(inner),
    }
}

fn classical_code(e: &ClassicalError) -> &'static str {
    match e {
        ClassicalError::LengthMismatch { .. } => "classical::length_mismatch",
        ClassicalError::ZeroVariance => "classical::zero_variance",
        ClassicalError::TooFewPairs { .. } => "classical::too_few_pairs",
        ClassicalError::EmptyCell { .. } => "classical::empty_cell",
        ClassicalError::UnbalancedDesign { .. } => "classical::unbalanced_design",
        ClassicalError::InvalidDf { .. } => "classical::invalid_df",
        ClassicalError::InvalidLevel { .. } => "classical::invalid_level",
    }
}

fn explore_code(e: &ExploreError) -> &'static str {
    match e {
        ExploreError::InsufficientReplicates { .. } => "explore::insufficient_replicates",
        ExploreError::SingularDesign { .. } => "explore::singular_design",
        ExploreError::Dataset(inner) => dataset_code(inner),
    }
}

fn diagnostics_code(e: &DiagnosticsError) -> &'static str {
    match e {
        DiagnosticsError::NotConverged => "diagnostics::not_converged",
        DiagnosticsError::NonPositiveDefiniteV { .. } => "diagnostics::non_positive_definite",
        DiagnosticsError::DegenerateSample => "diagnostics::degenerate_sample",
        DiagnosticsError::TooFewValues { .. } => "diagnostics::too_few_values",
        DiagnosticsError::Lmm(inner) => lmm_code(inner),
        DiagnosticsError::Dataset(inner) => dataset_code(inner),
    }
}

fn sim_code(e: &SimError) -> &'static str {
    match e {
        SimError::InvalidConfig { .. } => "simul::invalid_config",
        SimError::Dataset(inner) => dataset_code(inner),
        SimError::Lmm(inner) => lmm_code(inner),
    }
}

/// Exit 3 is reserved for "the model could not be brought to convergence";
/// everything else that goes wrong is a validation failure (exit 2).
fn lmm_exit(e: &LmmError) -> i32 {
    match e {
        LmmError::DidNotConverge { .. }
        | LmmError::Identifiability { .. }
        | LmmError::NonPositiveDefiniteV { .. }
        | LmmError::NotConverged { .. }
        | LmmError::Optim(_) => 3,
        LmmError::Stratum { source, .. } => lmm_exit(source),
        _ => 2,
    }
}

impl CliError {
    /// Module-qualified code printed in the stderr line.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage { .. } => "cli::usage",
            CliError::RemlAicComparison => "cli::reml_aic_comparison",
            CliError::Config { .. } => "cli::config",
            CliError::Io { .. } => "cli::io",
            CliError::Json(_) => "cli::json",
            CliError::Dataset(e) => dataset_code(e),
            CliError::Explore(e) => explore_code(e),
            CliError::Lmm(e) => lmm_code(e),
            CliError::Classical(e) => classical_code(e),
            CliError::Diagnostics(e) => diagnostics_code(e),
            CliError::Sim(e) => sim_code(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lmm(e) => lmm_exit(e),
            CliError::Diagnostics(DiagnosticsError::NotConverged) => 3,
            CliError::Diagnostics(DiagnosticsError::Lmm(e)) => lmm_exit(e),
            CliError::Sim(SimError::Lmm(e)) => lmm_exit(e),
            _ => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Config file and flag resolution
// ---------------------------------------------------------------------------

/// TOML mirror of the command-line flags plus a `[sim]` table for the
/// simulation subcommands. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    fixed: Option<String>,
    poly: Option<u8>,
    grouping: Option<String>,
    corr: Option<String>,
    method: Option<String>,
    level: Option<f64>,
    stratify: Option<String>,
    filter_timepoints: Option<Vec<u32>>,
    seed: Option<u64>,
    pair_timepoints: Option<Vec<u32>>,
    sim: Option<SimConfig>,
}

/// Flags and config merged (flags win), with enum-valued settings parsed.
struct Resolved {
    input: Option<PathBuf>,
    out: PathBuf,
    config_path: Option<PathBuf>,
    /// One or more fixed-effect formulas; more than one requests an AIC
    /// comparison of mean structures.
    fixed: Vec<String>,
    poly: u8,
    grouping: Grouping,
    corr: Option<CorrFamily>,
    method: FitMethod,
    level: f64,
    stratify: String,
    filter: Option<Vec<u32>>,
    seed: Option<u64>,
    pair: Option<(u32, u32)>,
    sim: Option<SimConfig>,
}

fn parse_fixed(formula: &str) -> Result<FixedTerms, CliError> {
    let tokens: Vec<&str> =
        formula.split('+').map(str::trim).filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(usage("--fixed formula is empty"));
    }
    let mut terms = FixedTerms { smoker: false, day: false, hour: false, day_hour: false };
    for token in tokens {
        match token {
            "1" => {}
            "smoker" => terms.smoker = true,
            "day" => terms.day = true,
            "hour" => terms.hour = true,
            "day:hour" | "hour:day" => terms.day_hour = true,
            "day*hour" | "hour*day" => {
                terms.day = true;
                terms.hour = true;
                terms.day_hour = true;
            }
            other => {
                return Err(usage(format!(
                    "unknown term '{other}' in --fixed; allowed: 1, smoker, day, hour, \
                     day:hour, day*hour"
                )))
            }
        }
    }
    Ok(terms)
}

fn parse_corr(name: &str) -> Result<CorrFamily, CliError> {
    match name {
        "ar1" => Ok(CorrFamily::Ar1),
        "cs" => Ok(CorrFamily::CompoundSymmetric),
        "independent" => Ok(CorrFamily::Independent),
        other => Err(usage(format!("unknown --corr '{other}'; expected ar1, cs, or independent"))),
    }
}

fn parse_grouping(name: &str) -> Result<Grouping, CliError> {
    match name {
        "subject" => Ok(Grouping::PerSubject),
        "subject-day" => Ok(Grouping::PerSubjectDay),
        other => {
            Err(usage(format!("unknown --grouping '{other}'; expected subject or subject-day")))
        }
    }
}

fn parse_method(name: &str) -> Result<FitMethod, CliError> {
    match name {
        "reml" => Ok(FitMethod::Reml),
        "ml" => Ok(FitMethod::Ml),
        other => Err(usage(format!("unknown --method '{other}'; expected reml or ml"))),
    }
}

fn resolve(args: &CommonArgs) -> Result<Resolved, CliError> {
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            toml::from_str::<FileConfig>(&text).map_err(|e| CliError::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => FileConfig::default(),
    };
    let out = args
        .out
        .clone()
        .or(cfg.out)
        .ok_or_else(|| usage("missing --out: every run needs an output directory"))?;
    let fixed = if !args.fixed.is_empty() {
        args.fixed.clone()
    } else if let Some(f) = cfg.fixed {
        vec![f]
    } else {
        vec!["smoker+day*hour".to_string()]
    };
    let poly = args.poly.or(cfg.poly).unwrap_or(1);
    let grouping =
        parse_grouping(args.grouping.as_deref().or(cfg.grouping.as_deref()).unwrap_or("subject"))?;
    let corr = match args.corr.as_deref().or(cfg.corr.as_deref()) {
        Some(name) => Some(parse_corr(name)?),
        None => None,
    };
    let method = parse_method(args.method.as_deref().or(cfg.method.as_deref()).unwrap_or("reml"))?;
    let level = args.level.or(cfg.level).unwrap_or(0.95);
    let stratify = args
        .stratify
        .clone()
        .or(cfg.stratify)
        .unwrap_or_else(|| "smoker".to_string());
    let filter = args.filter_timepoints.clone().or(cfg.filter_timepoints);
    let seed = args.seed.or(cfg.seed);
    let pair = match args.pair_timepoints.clone().or(cfg.pair_timepoints) {
        Some(v) => {
            if v.len() != 2 || v[0] == v[1] {
                return Err(usage(
                    "--pair-timepoints needs exactly two distinct time points, e.g. 0,6",
                ));
            }
            Some((v[0], v[1]))
        }
        None => None,
    };
    Ok(Resolved {
        input: args.input.clone().or(cfg.input),
        out,
        config_path: args.config.clone(),
        fixed,
        poly,
        grouping,
        corr,
        method,
        level,
        stratify,
        filter,
        seed,
        pair,
        sim: cfg.sim,
    })
}

impl Resolved {
    /// The model for subcommands that fit exactly one spec; the correlation
    /// family defaults to AR1 when not given.
    fn single_spec(&self) -> Result<ModelSpec, CliError> {
        if self.fixed.len() > 1 {
            return Err(usage(
                "this subcommand fits a single model; give one --fixed formula (the AIC \
                 comparison of mean structures belongs to `fit`)",
            ));
        }
        self.spec_for(&self.fixed[0], self.corr.unwrap_or(CorrFamily::Ar1))
    }

    fn spec_for(&self, formula: &str, corr_family: CorrFamily) -> Result<ModelSpec, CliError> {
        let spec = ModelSpec {
            fixed: parse_fixed(formula)?,
            grouping: self.grouping,
            corr_family,
            method: self.method,
            poly_degree: self.poly,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn load_data(&self) -> Result<LongDataset, CliError> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| usage("missing --input: this subcommand reads a dataset"))?;
        let file = fs::File::open(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let data = parse_long_csv(std::io::BufReader::new(file))?;
        match &self.filter {
            Some(keep) => Ok(data.filter_time_points(keep)?),
            None => Ok(data),
        }
    }

    fn input_paths(&self) -> Vec<String> {
        let mut paths = Vec::new();
        if let Some(p) = &self.input {
            paths.push(p.display().to_string());
        }
        if let Some(p) = &self.config_path {
            paths.push(p.display().to_string());
        }
        paths
    }
}

// ---------------------------------------------------------------------------
// Artifacts and the run manifest
// ---------------------------------------------------------------------------

/// Record of one run: inputs, the resolved configuration, and exactly the
/// files produced. Always the last file written.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub subcommand: String,
    pub tool_version: String,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    pub outputs: Vec<String>,
    pub created: String,
}

/// Collects files written into the output directory so the manifest can
/// name them all.
struct Artifacts {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Artifacts { dir: dir.to_path_buf(), outputs: Vec::new() })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(name, text.as_bytes())
    }

    /// Write `manifest.json` last, listing every produced file (manifest
    /// included).
    fn finish(
        mut self,
        subcommand: &str,
        inputs: Vec<String>,
        seed: Option<u64>,
        model: Option<ModelSpec>,
        sim: Option<SimConfig>,
    ) -> Result<(), CliError> {
        self.outputs.push("manifest.json".to_string());
        let manifest = RunManifest {
            schema: "longmix-manifest/1".to_string(),
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            seed,
            model,
            sim,
            outputs: self.outputs.clone(),
            created: format_utc(now_epoch()),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, bytes).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Current time as Unix seconds, honoring `SOURCE_DATE_EPOCH` so that
/// repeated runs can produce byte-identical artifacts.
fn now_epoch() -> u64 {
    if let Ok(value) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(secs) = value.parse() {
            return secs;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Unix seconds to `YYYY-MM-DDThh:mm:ssZ` (proleptic Gregorian).
fn format_utc(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (y, m, d) = civil_from_days(days);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

/// Days since 1970-01-01 to (year, month, day).
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (yoe + era * 400 + i64::from(m <= 2), m, d)
}

// ---------------------------------------------------------------------------
// Report shells written only by the CLI
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ExploreReport {
    schema: String,
    response: String,
    profiles: MeanProfileTable,
    cov_corr: CovCorrMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionCandidate {
    label: String,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    aic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectionReport {
    schema: String,
    criterion: String,
    candidates: Vec<SelectionCandidate>,
    winner: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StratumEntry {
    stratum: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorBody>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StratifiedReport {
    schema: String,
    stratifier: String,
    strata: Vec<StratumEntry>,
    /// Coefficient contrasts between the two strata; empty unless both
    /// fits succeeded.
    differences: Vec<StratumDifference>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairedTBlock {
    time_point_a: u32,
    time_point_b: u32,
    n_pairs: usize,
    result: PairedTResult,
}

#[derive(Debug, Serialize, Deserialize)]
struct CompareReport {
    schema: String,
    lmm: FitReport,
    paired_t: PairedTBlock,
    anova: AnovaTable,
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

pub fn run(subcommand: &str, args: &CommonArgs) -> Result<(), CliError> {
    let resolved = resolve(args)?;
    match subcommand {
        "explore" => cmd_explore(&resolved),
        "fit" => cmd_fit(&resolved),
        "stratify" => cmd_stratify(&resolved),
        "diagnose" => cmd_diagnose(&resolved),
        "compare" => cmd_compare(&resolved),
        "simulate" => cmd_simulate(&resolved),
        "study" => cmd_study(&resolved),
        other => Err(usage(format!("unknown subcommand '{other}'"))),
    }
}

fn cmd_explore(r: &Resolved) -> Result<(), CliError> {
    let data = r.load_data()?;
    let spec = r.single_spec()?;
    let profiles = mean_profiles(&data);
    let cov_corr = empirical_cov_corr(&data, &spec)?;
    let scatter = pairwise_scatter_data(&data);

    let mut art = Artifacts::new(&r.out)?;
    art.write_json(
        "explore.json",
        &ExploreReport {
            schema: "longmix-explore/1".to_string(),
            response: data.response_name().to_string(),
            profiles: profiles.clone(),
            cov_corr,
        },
    )?;

    let mut profiles_csv = String::from("day,time_point,mean,sd,n\n");
    for e in &profiles.entries {
        let sd = e.sd.map(|v| v.to_string()).unwrap_or_default();
        profiles_csv.push_str(&format!("{},{},{},{},{}\n", e.day, e.time_point, e.mean, sd, e.n));
    }
    art.write_text("profiles.csv", &profiles_csv)?;

    let mut scatter_csv = String::from("time_point_a,time_point_b,x,y\n");
    for pair in &scatter {
        for (x, y) in &pair.points {
            scatter_csv.push_str(&format!(
                "{},{},{},{}\n",
                pair.time_point_a, pair.time_point_b, x, y
            ));
        }
    }
    art.write_text("scatter.csv", &scatter_csv)?;
    art.finish("explore", r.input_paths(), None, Some(spec), None)
}

/// Fit either the single requested model, or run the AIC race (over
/// correlation families when `--corr` is omitted, over mean structures when
/// several `--fixed` formulas are given) and keep the winner.
fn select_fit(
    r: &Resolved,
    data: &LongDataset,
) -> Result<(FittedModel, Option<SelectionReport>), CliError> {
    let candidates: Vec<(String, ModelSpec)> = if r.fixed.len() > 1 {
        if r.method == FitMethod::Reml {
            return Err(CliError::RemlAicComparison);
        }
        let corr = r.corr.ok_or_else(|| {
            usage("give --corr explicitly when comparing several --fixed formulas")
        })?;
        r.fixed
            .iter()
            .map(|f| Ok((f.clone(), r.spec_for(f, corr)?)))
            .collect::<Result<_, CliError>>()?
    } else if r.corr.is_none() {
        vec![
            ("ar1".to_string(), r.spec_for(&r.fixed[0], CorrFamily::Ar1)?),
            ("cs".to_string(), r.spec_for(&r.fixed[0], CorrFamily::CompoundSymmetric)?),
        ]
    } else {
        return Ok((fit(data, &r.single_spec()?)?, None));
    };

    let mut fitted: Vec<(String, Result<FittedModel, LmmError>)> = Vec::new();
    for (label, spec) in &candidates {
        fitted.push((label.clone(), fit(data, spec)));
    }
    let mut winner: Option<(usize, f64)> = None;
    for (i, (_, outcome)) in fitted.iter().enumerate() {
        if let Ok(model) = outcome {
            let aic = information_criteria(model).aic;
            if winner.is_none_or(|(_, best)| aic < best) {
                winner = Some((i, aic));
            }
        }
    }
    let Some((win_idx, _)) = winner else {
        // Every candidate failed; surface the first failure.
        let (_, first) = fitted.into_iter().next().expect("at least one candidate");
        return Err(CliError::Lmm(first.expect_err("all candidates failed")));
    };
    let report = SelectionReport {
        schema: "longmix-selection/1".to_string(),
        criterion: "aic".to_string(),
        candidates: fitted
            .iter()
            .map(|(label, outcome)| match outcome {
                Ok(model) => {
                    let c = information_criteria(model);
                    SelectionCandidate {
                        label: label.clone(),
                        converged: true,
                        aic: Some(c.aic),
                        loglik: Some(model.loglik),
                        error: None,
                    }
                }
                Err(e) => SelectionCandidate {
                    label: label.clone(),
                    converged: false,
                    aic: None,
                    loglik: None,
                    error: Some(e.to_string()),
                },
            })
            .collect(),
        winner: fitted[win_idx].0.clone(),
    };
    let model = fitted.swap_remove(win_idx).1.expect("winner is a successful fit");
    Ok((model, Some(report)))
}

fn cmd_fit(r: &Resolved) -> Result<(), CliError> {
    let data = r.load_data()?;
    let (model, selection) = select_fit(r, &data)?;
    let mut art = Artifacts::new(&r.out)?;
    art.write_json("fit.json", &model.report(r.level)?)?;
    if let Some(sel) = &selection {
        art.write_json("selection.json", sel)?;
    }
    art.finish("fit", r.input_paths(), None, Some(model.spec), None)
}

fn cmd_stratify(r: &Resolved) -> Result<(), CliError> {
    let data = r.load_data()?;
    let spec = r.single_spec()?;
    let strat = stratified_fit(&data, &spec, &r.stratify)?;
    if strat.strata.iter().all(|(_, outcome)| outcome.is_err()) {
        // Nothing to report when no stratum could be fit; surface the first
        // failure with its stratum label attached.
        let (stratum, outcome) = strat.strata.into_iter().next().expect("two strata");
        let source = Box::new(outcome.expect_err("all strata failed"));
        return Err(CliError::Lmm(LmmError::Stratum { stratum, source }));
    }
    let mut entries = Vec::new();
    for (stratum, outcome) in &strat.strata {
        match outcome {
            Ok(model) => entries.push(StratumEntry {
                stratum: stratum.clone(),
                report: Some(model.report(r.level)?),
                error: None,
            }),
            Err(e) => entries.push(StratumEntry {
                stratum: stratum.clone(),
                report: None,
                error: Some(ErrorBody { code: lmm_code(e).to_string(), message: e.to_string() }),
            }),
        }
    }
    let mut art = Artifacts::new(&r.out)?;
    art.write_json(
        "stratified.json",
        &StratifiedReport {
            schema: "longmix-stratified/1".to_string(),
            stratifier: r.stratify.clone(),
            strata: entries,
            differences: strat.differences,
        },
    )?;
    art.finish("stratify", r.input_paths(), None, Some(spec), None)
}

fn cmd_diagnose(r: &Resolved) -> Result<(), CliError> {
    let data = r.load_data()?;
    let spec = r.single_spec()?;
    let model = fit(&data, &spec)?;
    let report = diagnostics_report(&model, &data, None)?;

    let mut art = Artifacts::new(&r.out)?;
    art.write_json("fit.json", &model.report(r.level)?)?;
    art.write_json("diagnostics.json", &report)?;
    art.write_text("diagnostics/acf.csv", &acf_csv(&report))?;
    art.write_text("diagnostics/variogram.csv", &variogram_csv(&report))?;
    art.write_text("diagnostics/qq_resid.csv", &qq_csv(report.qq_resid.as_deref()))?;
    art.write_text("diagnostics/qq_blup.csv", &qq_csv(report.qq_blup.as_deref()))?;
    let mut fo = String::from("fitted,observed\n");
    for (fitted, observed) in &report.fitted_observed {
        fo.push_str(&format!("{fitted},{observed}\n"));
    }
    art.write_text("diagnostics/fitted_observed.csv", &fo)?;
    let mut bl = String::from("group,value\n");
    for e in &report.blups.entries {
        bl.push_str(&format!("{},{}\n", e.label, e.value));
    }
    art.write_text("diagnostics/blups.csv", &bl)?;
    art.finish("diagnose", r.input_paths(), None, Some(spec), None)
}

fn acf_csv(report: &DiagnosticsReport) -> String {
    let mut s = String::from("lag,estimate,n_pairs,bound\n");
    for row in &report.acf {
        s.push_str(&format!("{},{},{},{}\n", row.lag, row.estimate, row.n_pairs, row.bound));
    }
    s
}

fn variogram_csv(report: &DiagnosticsReport) -> String {
    let mut s = String::from("lag_hours,gamma,n_pairs\n");
    for bin in &report.variogram {
        s.push_str(&format!("{},{},{}\n", bin.lag_hours, bin.gamma, bin.n_pairs));
    }
    s
}

fn qq_csv(pairs: Option<&[(f64, f64)]>) -> String {
    let mut s = String::from("theoretical,sample\n");
    for (t, q) in pairs.unwrap_or(&[]) {
        s.push_str(&format!("{t},{q}\n"));
    }
    s
}

fn cmd_compare(r: &Resolved) -> Result<(), CliError> {
    let data = r.load_data()?;
    let spec = r.single_spec()?;
    let model = fit(&data, &spec)?;
    let lmm_report = model.report(r.level)?;

    // Pair the user-chosen (or first and last observed) time points within
    // each (subject, day) series that measured both.
    let observed = data.time_points();
    let (tp_a, tp_b) = match r.pair {
        Some(pair) => pair,
        None => (observed[0], *observed.last().expect("non-empty dataset")),
    };
    for tp in [tp_a, tp_b] {
        if !observed.contains(&tp) {
            return Err(usage(format!(
                "--pair-timepoints value {tp} is not an observed time point; have {observed:?}"
            )));
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut series_key: Option<(&str, u8)> = None;
    let mut at_a: Option<f64> = None;
    let mut at_b: Option<f64> = None;
    let flush = |a: &mut Option<f64>, b: &mut Option<f64>, x: &mut Vec<f64>, y: &mut Vec<f64>| {
        if let (Some(va), Some(vb)) = (a.take(), b.take()) {
            x.push(va);
            y.push(vb);
        }
        *a = None;
        *b = None;
    };
    for obs in data.rows() {
        let key = (obs.subject_id.as_str(), obs.day);
        if series_key != Some(key) {
            flush(&mut at_a, &mut at_b, &mut x, &mut y);
            series_key = Some(key);
        }
        if obs.time_point == tp_a {
            at_a = Some(obs.response);
        }
        if obs.time_point == tp_b {
            at_b = Some(obs.response);
        }
    }
    flush(&mut at_a, &mut at_b, &mut x, &mut y);
    let paired = paired_t_test(&x, &y, r.level)?;
    let anova = factorial_anova(&data)?;

    let mut art = Artifacts::new(&r.out)?;
    art.write_json(
        "compare.json",
        &CompareReport {
            schema: "longmix-compare/1".to_string(),
            lmm: lmm_report,
            paired_t: PairedTBlock {
                time_point_a: tp_a,
                time_point_b: tp_b,
                n_pairs: x.len(),
                result: paired,
            },
            anova,
        },
    )?;
    art.finish("compare", r.input_paths(), None, Some(spec), None)
}

fn resolved_sim(r: &Resolved) -> Result<SimConfig, CliError> {
    let mut sim = r
        .sim
        .clone()
        .ok_or_else(|| usage("this subcommand needs a --config file with a [sim] table"))?;
    if let Some(seed) = r.seed {
        sim.seed = seed;
    }
    Ok(sim)
}

fn cmd_simulate(r: &Resolved) -> Result<(), CliError> {
    let sim = resolved_sim(r)?;
    let data = simulate(&sim)?;
    let mut csv = format!("subject_id,day,time_point,hour_actual,smoker,{}\n", data.response_name());
    for obs in data.rows() {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            obs.subject_id,
            obs.day,
            obs.time_point,
            obs.hour_actual,
            u8::from(obs.smoker),
            obs.response
        ));
    }
    let mut art = Artifacts::new(&r.out)?;
    art.write_text("simulated.csv", &csv)?;
    art.finish("simulate", r.input_paths(), Some(sim.seed), None, Some(sim))
}

fn cmd_study(r: &Resolved) -> Result<(), CliError> {
    let sim = resolved_sim(r)?;
    let report = recovery_study(&sim)?;
    let mut art = Artifacts::new(&r.out)?;
    art.write_json("study.json", &report)?;
    art.finish("study", r.input_paths(), Some(sim.seed), None, Some(sim))
}

// ---------------------------------------------------------------------------
