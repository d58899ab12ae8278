//! `frontdoor estimate`: estimators, optional bootstrap intervals and
//! contrasts on a CSV file.

use std::path::{Path, PathBuf};

use clap::Args;
use frontdoor::data::{csv_headers, load_csv, Arms, Schema};
use frontdoor::eif::WeightForm;
use frontdoor::estimators::{estimate, EstimateReport, EstimatorId, Formulas, NuisanceSpecs};
use frontdoor::glm::{Family, GlmOptions, RankPolicy};
use frontdoor::inference::{bootstrap_ci, contrast, BootstrapOptions, BootstrapResult, ContrastKind, Interval};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::report::{Output, Provenance};
use crate::{parse_kebab, read_config, CommonArgs};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths resolve against the configuration file's directory.
    pub path: Option<PathBuf>,
    pub exposure: Option<String>,
    pub mediator: Option<String>,
    pub outcome: Option<String>,
    /// Every remaining column when absent.
    pub covariates: Option<Vec<String>>,
    pub treated: Option<i64>,
    pub control: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    #[serde(default)]
    pub contrasts: Vec<ContrastKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub estimators: Vec<EstimatorId>,
    #[serde(default)]
    pub weight_form: WeightForm,
    #[serde(default = "default_family")]
    pub outcome_family: Family,
    #[serde(default)]
    pub models: Formulas,
    #[serde(default)]
    pub glm: GlmOptions,
    pub positivity_bound: Option<f64>,
    #[serde(default = "default_level")]
    pub interval_level: f64,
    #[serde(default)]
    pub seed: u64,
    pub bootstrap: Option<BootstrapConfig>,
}

fn default_family() -> Family {
    Family::BinomialLogit
}

fn default_level() -> f64 {
    0.95
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            estimators: Vec::new(),
            weight_form: WeightForm::default(),
            outcome_family: default_family(),
            models: Formulas::default(),
            glm: GlmOptions::default(),
            positivity_bound: None,
            interval_level: default_level(),
            seed: 0,
            bootstrap: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    exposure: Option<String>,
    #[arg(long)]
    mediator: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Exposure level whose mediator distribution is imposed (a†).
    #[arg(long)]
    treated: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    control: Option<Vec<i64>>,
    /// Repeatable or comma separated.
    #[arg(long = "estimator", value_delimiter = ',')]
    estimators: Vec<EstimatorId>,
    /// P(A | L)
    #[arg(long)]
    kappa: Option<String>,
    /// P(A | M, L)
    #[arg(long)]
    alpha: Option<String>,
    /// f(M | A, L)
    #[arg(long)]
    gamma: Option<String>,
    /// E(Y | M, L, A = a◦)
    #[arg(long)]
    b0: Option<String>,
    /// Regression of the b0 predictions on L among treated rows
    #[arg(long)]
    hdagger: Option<String>,
    /// E(Y | A, M, L), used by IPW
    #[arg(long)]
    outcome_model: Option<String>,
    /// density-ratio or propensity-ratio
    #[arg(long)]
    weight_form: Option<String>,
    /// binomial-logit or gaussian-identity
    #[arg(long)]
    family: Option<String>,
    /// error or drop-aliased
    #[arg(long)]
    rank_policy: Option<String>,
    /// Bootstrap replicates for percentile intervals.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// observed-minus-psi or psi-difference:FIRST:SECOND; needs --bootstrap.
    #[arg(long, value_parser = parse_contrast)]
    contrast: Vec<ContrastKind>,
    #[arg(long)]
    level: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_contrast(text: &str) -> Result<ContrastKind, String> {
    if text == "observed-minus-psi" {
        return Ok(ContrastKind::ObservedMinusPsi);
    }
    let levels = text.strip_prefix("psi-difference:").ok_or_else(|| format!("unknown contrast `{text}`"))?;
    let (first, second) = levels.split_once(':').ok_or("expected psi-difference:FIRST:SECOND")?;
    let level = |s: &str| s.trim().parse::<i64>().map_err(|e| format!("bad level `{s}`: {e}"));
    Ok(ContrastKind::PsiDifference {
        first: level(first)?,
        second: level(second)?,
    })
}

impl EstimateArgs {
    fn overlay(&self, config: &mut EstimateConfig) -> Result<(), CliError> {
        let data = &mut config.data;
        let set = |slot: &mut Option<String>, value: &Option<String>| {
            if value.is_some() {
                slot.clone_from(value);
            }
        };
        if self.data.is_some() {
            data.path.clone_from(&self.data);
        }
        set(&mut data.exposure, &self.exposure);
        set(&mut data.mediator, &self.mediator);
        set(&mut data.outcome, &self.outcome);
        if self.covariates.is_some() {
            data.covariates.clone_from(&self.covariates);
        }
        if self.treated.is_some() {
            data.treated = self.treated;
        }
        if self.control.is_some() {
            data.control.clone_from(&self.control);
        }
        if !self.estimators.is_empty() {
            config.estimators.clone_from(&self.estimators);
        }
        let models = &mut config.models;
        set(&mut models.kappa, &self.kappa);
        set(&mut models.alpha, &self.alpha);
        set(&mut models.gamma, &self.gamma);
        set(&mut models.b0, &self.b0);
        set(&mut models.hdagger, &self.hdagger);
        set(&mut models.outcome, &self.outcome_model);
        if let Some(form) = &self.weight_form {
            config.weight_form = parse_kebab::<WeightForm>("weight form", form)?;
        }
        if let Some(family) = &self.family {
            config.outcome_family = parse_kebab::<Family>("family", family)?;
        }
        if let Some(policy) = &self.rank_policy {
            config.glm.rank_policy = parse_kebab::<RankPolicy>("rank policy", policy)?;
        }
        if let Some(level) = self.level {
            config.interval_level = level;
        }
        if let Some(seed) = self.common.seed {
            config.seed = seed;
        }
        if let Some(replicates) = self.bootstrap {
            config.bootstrap.get_or_insert(BootstrapConfig { replicates, contrasts: Vec::new() }).replicates = replicates;
        }
        if !self.contrast.is_empty() {
            let bootstrap = config
                .bootstrap
                .as_mut()
                .ok_or_else(|| CliError::Config("--contrast needs --bootstrap".into()))?;
            bootstrap.contrasts.clone_from(&self.contrast);
        }
        Ok(())
    }
}

/// Configuration checks that need no data.
fn validate(config: &EstimateConfig) -> Result<NuisanceSpecs, CliError> {
    let fail = |msg: String| Err(CliError::Config(msg));
    if config.data.path.is_none() {
        return fail("no data file (set data.path or --data)".into());
    }
    let Some(treated) = config.data.treated else {
        return fail("no treated level (set data.treated or --treated)".into());
    };
    match &config.data.control {
        Some(control) if !control.is_empty() => {
            if control.contains(&treated) {
                return fail(format!("level {treated} is both treated and control"));
            }
        }
        _ => return fail("no control level (set data.control or --control)".into()),
    }
    if config.estimators.is_empty() {
        return fail("no estimator selected".into());
    }
    if !(config.interval_level > 0.0 && config.interval_level < 1.0) {
        return fail(format!("interval level must lie in (0, 1), got {}", config.interval_level));
    }
    if let Some(bootstrap) = &config.bootstrap {
        if bootstrap.replicates < 2 {
            return fail(format!("bootstrap needs at least 2 replicates, got {}", bootstrap.replicates));
        }
    }
    let mut specs = config
        .models
        .to_specs(config.outcome_family, config.weight_form, config.glm)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(bound) = config.positivity_bound {
        specs.positivity_bound = bound;
    }
    for &id in &config.estimators {
        let missing = specs.missing(id);
        if !missing.is_empty() {
            let names: Vec<String> = missing.iter().map(ToString::to_string).collect();
            return fail(format!("{id} needs working models for: {}", names.join("; ")));
        }
    }
    Ok(specs)
}

#[derive(Debug, Serialize)]
struct BootstrapSummary {
    point: f64,
    interval: Interval,
    level: f64,
    replicates: usize,
    failed: usize,
}

impl From<&BootstrapResult> for BootstrapSummary {
    fn from(r: &BootstrapResult) -> Self {
        Self {
            point: r.point,
            interval: r.interval,
            level: r.level,
            replicates: r.replicates.len(),
            failed: r.failed,
        }
    }
}

#[derive(Debug, Serialize)]
struct ContrastSummary {
    kind: ContrastKind,
    #[serde(flatten)]
    bootstrap: BootstrapSummary,
}

#[derive(Debug, Serialize)]
struct EstimatorResult {
    #[serde(flatten)]
    report: EstimateReport,
    /// Sandwich-based Wald interval at the configured level.
    wald_interval: Option<Interval>,
    bootstrap: Option<BootstrapSummary>,
    contrasts: Vec<ContrastSummary>,
}

#[derive(Debug, Serialize)]
struct Failure {
    estimator: EstimatorId,
    message: String,
}

#[derive(Debug, Serialize)]
struct EstimateOutput<'a> {
    provenance: Provenance,
    config: &'a EstimateConfig,
    rows: usize,
    results: Vec<EstimatorResult>,
    failures: Vec<Failure>,
}

#[derive(Debug, Serialize)]
struct ReplicateRow<'a> {
    estimator: EstimatorId,
    quantity: &'a str,
    replicate: usize,
    value: Option<f64>,
}

pub fn run(args: &EstimateArgs) -> Result<(), CliError> {
    let (mut config, base_dir) = match &args.config {
        Some(path) => read_config::<EstimateConfig>(path)?,
        None => (EstimateConfig::default(), PathBuf::from(".")),
    };
    args.overlay(&mut config)?;
    let specs = validate(&config)?;

    let data_path = base_dir.join(config.data.path.as_ref().expect("validated"));
    let bytes = std::fs::read(&data_path).map_err(|e| CliError::Data(format!("{}: {e}", data_path.display())))?;
    let schema = resolve_schema(&mut config.data, &data_path)?;
    let arms = Arms {
        treated: config.data.treated.expect("validated"),
        control: config.data.control.clone().expect("validated"),
    };
    let data = load_csv(&data_path, &schema, arms).map_err(|e| CliError::Data(format!("{}: {e}", data_path.display())))?;

    let output = Output::new(args.common.out.clone())?;
    let bootstrap_options = config.bootstrap.as_ref().map(|b| BootstrapOptions {
        replicates: b.replicates,
        seed: config.seed,
        level: config.interval_level,
        workers: args.common.workers,
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut replicate_rows: Vec<(EstimatorId, String, BootstrapResult)> = Vec::new();
    for &id in &config.estimators {
        let report = match estimate(id, &data, &specs) {
            Ok(report) => report,
            Err(e) => {
                failures.push(Failure {
                    estimator: id,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mut result = EstimatorResult {
            wald_interval: report.wald_interval(config.interval_level).map(|[lo, hi]| Interval { lo, hi }),
            report,
            bootstrap: None,
            contrasts: Vec::new(),
        };
        if let (Some(options), Some(boot)) = (&bootstrap_options, &config.bootstrap) {
            match bootstrap_ci(&data, id, &specs, options) {
                Ok(b) => {
                    result.bootstrap = Some((&b).into());
                    replicate_rows.push((id, "psi".into(), b));
                }
                Err(e) => failures.push(Failure {
                    estimator: id,
                    message: format!("bootstrap: {e}"),
                }),
            }
            for &kind in &boot.contrasts {
                match contrast(&data, id, &specs, kind, options) {
                    Ok(b) => {
                        result.contrasts.push(ContrastSummary { kind, bootstrap: (&b).into() });
                        replicate_rows.push((id, contrast_label(kind), b));
                    }
                    Err(e) => failures.push(Failure {
                        estimator: id,
                        message: format!("contrast {}: {e}", contrast_label(kind)),
                    }),
                }
            }
        }
        results.push(result);
    }

    let report = EstimateOutput {
        provenance: Provenance::new("estimate", &config, config.seed, Some(&bytes)),
        config: &config,
        rows: data.n_rows(),
        results,
        failures,
    };
    output.report("report.json", &report)?;
    output.table("bootstrap.csv", |buf| {
        let mut writer = csv::Writer::from_writer(buf);
        for (estimator, quantity, result) in &replicate_rows {
            for (replicate, &value) in result.replicates.iter().enumerate() {
                writer.serialize(ReplicateRow {
                    estimator: *estimator,
                    quantity,
                    replicate,
                    value,
                })?;
            }
        }
        writer.flush()?;
        Ok(())
    })?;

    if report.failures.is_empty() {
        Ok(())
    } else {
        let messages: Vec<String> = report.failures.iter().map(|f| format!("{}: {}", f.estimator, f.message)).collect();
        Err(CliError::Estimation(messages.join("; ")))
    }
}

fn contrast_label(kind: ContrastKind) -> String {
    match kind {
        ContrastKind::ObservedMinusPsi => "observed-minus-psi".into(),
        ContrastKind::PsiDifference { first, second } => format!("psi-difference:{first}:{second}"),
    }
}

/// Fills in default role names and covariates, so the echoed configuration
/// is fully resolved.
fn resolve_schema(data: &mut DataConfig, path: &Path) -> Result<Schema, CliError> {
    let exposure = data.exposure.get_or_insert_with(|| "A".into()).clone();
    let mediator = data.mediator.get_or_insert_with(|| "M".into()).clone();
    let outcome = data.outcome.get_or_insert_with(|| "Y".into()).clone();
    if data.covariates.is_none() {
        let headers = csv_headers(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        data.covariates = Some(headers.into_iter().filter(|h| ![&exposure, &mediator, &outcome].contains(&h)).collect());
    }
    Ok(Schema {
        exposure,
        mediator,
        outcome,
        covariates: data.covariates.clone().expect("filled above"),
        exposure_levels: None,
    })
}
