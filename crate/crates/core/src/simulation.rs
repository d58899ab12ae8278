//! Replication studies: draw datasets from a structural model, run the
//! estimators under several model-specification scenarios and summarise
//! bias, spread, boundedness and interval coverage.

use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arms, Dataset};
use crate::design::DesignError;
use crate::eif::WeightForm;
use crate::estimators::{estimate, normal_quantile, EstimatorId, Formulas, NuisanceSpecs};
use crate::glm::{Family, GlmOptions};
use crate::oracle::{interventional_mean_exact, sample_dataset, OracleError, StructuralModel};
use crate::presets;
use crate::rng::{stream, Purpose};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("scenario {scenario}: {source}")]
    Spec { scenario: u8, source: DesignError },
    #[error("structural model: {0}")]
    Model(#[from] OracleError),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    /// One of [`presets::MODEL_NAMES`].
    Preset(String),
    /// Structural-model TOML, relative to the study file.
    Path(PathBuf),
    Inline(StructuralModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: u8,
    pub estimators: Vec<EstimatorId>,
    #[serde(default)]
    pub weight_form: WeightForm,
    pub models: Formulas,
}

fn default_treated() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub model: ModelSource,
    #[serde(default = "default_treated")]
    pub treated: i64,
    #[serde(default)]
    pub control: i64,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Computed by exact enumeration when absent.
    pub truth: Option<f64>,
    #[serde(default = "default_family")]
    pub outcome_family: Family,
    #[serde(default)]
    pub glm: GlmOptions,
    pub positivity_bound: Option<f64>,
    /// Nominal level of the sandwich Wald intervals used for coverage.
    #[serde(default = "default_level")]
    pub interval_level: f64,
    pub scenario: Vec<ScenarioSpec>,
}

fn default_family() -> Family {
    Family::BinomialLogit
}

fn default_level() -> f64 {
    0.95
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, StudyError> {
        let config: Self = toml::from_str(text).map_err(|e| StudyError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn preset(name: &str) -> Option<Self> {
        presets::study(name).map(|text| Self::from_toml(text).expect("shipped study parses"))
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let fail = |msg: String| Err(StudyError::Config(msg));
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return fail("sample_sizes must be non-empty and positive".into());
        }
        if self.replications == 0 {
            return fail("replications must be positive".into());
        }
        if self.treated == self.control {
            return fail("treated and control levels must differ".into());
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return fail("interval_level must lie in (0, 1)".into());
        }
        if self.scenario.is_empty() {
            return fail("at least one [[scenario]] is required".into());
        }
        for (k, s) in self.scenario.iter().enumerate() {
            if !(1..=4).contains(&s.id) {
                return fail(format!("scenario id {} is not in 1..=4", s.id));
            }
            if self.scenario[..k].iter().any(|t| t.id == s.id) {
                return fail(format!("scenario id {} appears twice", s.id));
            }
            if s.estimators.is_empty() {
                return fail(format!("scenario {} lists no estimators", s.id));
            }
            if let Some(id) = s.estimators.iter().find(|e| matches!(e, EstimatorId::WiceMultilevel | EstimatorId::WiceNocov)) {
                return fail(format!("estimator {id} is not supported in replication studies"));
            }
            let specs = self.specs(s)?;
            for &id in &s.estimators {
                if let Some(step) = specs.missing(id).first() {
                    return fail(format!("scenario {}: {id} needs a working model for {step}", s.id));
                }
            }
        }
        Ok(())
    }

    /// Nuisance specifications for one scenario.
    pub fn specs(&self, scenario: &ScenarioSpec) -> Result<NuisanceSpecs, StudyError> {
        let mut specs = scenario
            .models
            .to_specs(self.outcome_family, scenario.weight_form, self.glm)
            .map_err(|source| StudyError::Spec { scenario: scenario.id, source })?;
        if let Some(bound) = self.positivity_bound {
            specs.positivity_bound = bound;
        }
        Ok(specs)
    }

    /// Loads the structural model; paths are relative to `base_dir`.
    pub fn load_model(&self, base_dir: Option<&Path>) -> Result<StructuralModel, StudyError> {
        match &self.model {
            ModelSource::Preset(name) => {
                let text = presets::model(name).ok_or_else(|| StudyError::Config(format!("unknown model preset `{name}`")))?;
                Ok(StructuralModel::from_toml(text)?)
            }
            ModelSource::Path(path) => {
                let full = base_dir.map_or_else(|| path.clone(), |dir| dir.join(path));
                let text = std::fs::read_to_string(&full).map_err(|source| StudyError::Io { path: full, source })?;
                Ok(StructuralModel::from_toml(&text)?)
            }
            ModelSource::Inline(model) => {
                model.compile()?;
                Ok(model.clone())
            }
        }
    }

    pub fn arms(&self) -> Arms {
        Arms::binary(self.treated, self.control)
    }
}

/// Dataset for replication `replication` at size `n`; the stream depends only
/// on `(seed, n, replication)`.
pub fn generate(model: &StructuralModel, n: usize, seed: u64, replication: u64, arms: Arms) -> Result<Dataset, OracleError> {
    let mut rng = stream(seed, Purpose::Replication, &[n as u64, replication]);
    sample_dataset(model, n, &mut rng, arms)
}

/// One estimator applied to one replicate dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub replication: usize,
    pub scenario: u8,
    pub estimator: EstimatorId,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub within_bounds: Option<bool>,
    pub error: Option<String>,
}

/// Summary over replications of one (estimator, n, scenario) cell. Moments
/// use successful replications only; `std_bias` is `None` when the
/// estimates have zero spread.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub estimator: EstimatorId,
    pub n: usize,
    pub scenario: u8,
    pub successes: usize,
    pub failed: usize,
    pub mean_estimate: Option<f64>,
    pub bias_x100: Option<f64>,
    pub se_x100: Option<f64>,
    pub std_bias: Option<f64>,
    pub out_of_bounds: usize,
    pub below_zero: usize,
    pub mean_sandwich_se_x100: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub name: String,
    pub truth: f64,
    pub rows: Vec<MetricsRow>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl StudyResult {
    pub fn row(&self, estimator: EstimatorId, n: usize, scenario: u8) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n && r.scenario == scenario)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_records_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        for record in &self.records {
            out.serialize(record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Truth from the configuration, or exact enumeration.
pub fn resolve_truth(config: &StudyConfig, model: &StructuralModel) -> Result<f64, StudyError> {
    match config.truth {
        Some(t) => Ok(t),
        None => Ok(interventional_mean_exact(model, config.treated as f64)?),
    }
}

/// Runs every replication on a pool of `workers` threads. Results do not
/// depend on `workers`.
pub fn run_study(config: &StudyConfig, model: &StructuralModel, workers: usize) -> Result<StudyResult, StudyError> {
    config.validate()?;
    let truth = resolve_truth(config, model)?;
    let specs: Vec<NuisanceSpecs> = config.scenario.iter().map(|s| config.specs(s)).collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| StudyError::Pool(e.to_string()))?;

    let jobs: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let per_job: Vec<Result<Vec<ReplicationRecord>, OracleError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, r)| {
                let data = generate(model, n, config.seed, r as u64, config.arms())?;
                let mut out = Vec::new();
                for (scenario, spec) in config.scenario.iter().zip(&specs) {
                    for &estimator in &scenario.estimators {
                        let record = match estimate(estimator, &data, spec) {
                            Ok(report) => ReplicationRecord {
                                n,
                                replication: r,
                                scenario: scenario.id,
                                estimator,
                                estimate: Some(report.psi),
                                std_error: report.std_error,
                                within_bounds: Some(report.within_bounds),
                                error: None,
                            },
                            Err(e) => ReplicationRecord {
                                n,
                                replication: r,
                                scenario: scenario.id,
                                estimator,
                                estimate: None,
                                std_error: None,
                                within_bounds: None,
                                error: Some(e.to_string()),
                            },
                        };
                        out.push(record);
                    }
                }
                Ok(out)
            })
            .collect()
    });
    let mut records = Vec::new();
    for job in per_job {
        records.extend(job?);
    }

    let z = normal_quantile(0.5 + config.interval_level / 2.0);
    let mut rows = Vec::new();
    for &n in &config.sample_sizes {
        for scenario in &config.scenario {
            for &estimator in &scenario.estimators {
                let cell = records.iter().filter(|r| r.n == n && r.scenario == scenario.id && r.estimator == estimator);
                rows.push(summarise(estimator, n, scenario.id, cell, truth, z));
            }
        }
    }
    Ok(StudyResult {
        name: config.name.clone(),
        truth,
        rows,
        records,
    })
}

fn summarise<'a>(estimator: EstimatorId, n: usize, scenario: u8, cell: impl Iterator<Item = &'a ReplicationRecord>, truth: f64, z: f64) -> MetricsRow {
    let cell: Vec<&ReplicationRecord> = cell.collect();
    let estimates: Vec<f64> = cell.iter().filter_map(|r| r.estimate).collect();
    let successes = estimates.len();
    let mean = (successes > 0).then(|| estimates.iter().sum::<f64>() / successes as f64);
    let sd = mean.filter(|_| successes > 1).map(|m| (estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (successes - 1) as f64).sqrt());
    let with_se: Vec<(f64, f64)> = cell.iter().filter_map(|r| Some((r.estimate?, r.std_error?))).collect();
    let mean_se = (!with_se.is_empty()).then(|| with_se.iter().map(|(_, s)| s).sum::<f64>() / with_se.len() as f64);
    let coverage = (!with_se.is_empty()).then(|| with_se.iter().filter(|(e, s)| (e - truth).abs() <= z * s).count() as f64 / with_se.len() as f64);
    MetricsRow {
        estimator,
        n,
        scenario,
        successes,
        failed: cell.len() - successes,
        mean_estimate: mean,
        bias_x100: mean.map(|m| 100.0 * (m - truth)),
        se_x100: sd.map(|s| 100.0 * s),
        std_bias: match (mean, sd) {
            (Some(m), Some(s)) if s > 0.0 => Some(100.0 * (m - truth) / s),
            _ => None,
        },
        out_of_bounds: cell.iter().filter(|r| r.within_bounds == Some(false)).count(),
        below_zero: estimates.iter().filter(|&&e| e < 0.0).count(),
        mean_sandwich_se_x100: mean_se.map(|s| 100.0 * s),
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::marginalize;

    fn smoke_config() -> StudyConfig {
        let mut config = StudyConfig::preset("binary-study").unwrap();
        config.sample_sizes = vec![200];
        config.replications = 6;
        config
    }

    #[test]
    fn shipped_studies_parse() {
        for name in presets::STUDY_NAMES {
            let config = StudyConfig::preset(name).unwrap();
            assert_eq!(config.scenario.len(), 4);
            config.load_model(None).unwrap();
        }
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let config = smoke_config();
        let model = config.load_model(None).unwrap();
        let one = run_study(&config, &model, 1).unwrap();
        let four = run_study(&config, &model, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.records, four.records);
        assert_eq!(one.rows.len(), 4 + 3 + 4 + 4);
    }

    #[test]
    fn truth_defaults_to_exact_enumeration() {
        let config = smoke_config();
        let model = config.load_model(None).unwrap();
        assert!((resolve_truth(&config, &model).unwrap() - 0.010_853_561_121_760_36).abs() < 1e-15);
    }

    #[test]
    fn constant_estimates_have_no_standardised_bias() {
        let records: Vec<ReplicationRecord> = (0..5)
            .map(|r| ReplicationRecord {
                n: 10,
                replication: r,
                scenario: 1,
                estimator: EstimatorId::Wice,
                estimate: Some(0.3),
                std_error: None,
                within_bounds: Some(true),
                error: None,
            })
            .collect();
        let row = summarise(EstimatorId::Wice, 10, 1, records.iter(), 0.25, 1.96);
        assert!((row.bias_x100.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(row.se_x100, Some(0.0));
        assert_eq!(row.std_bias, None);
        assert_eq!(row.coverage, None);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let text = presets::BINARY_STUDY.replacen("id = 4", "id = 7", 1);
        assert!(matches!(StudyConfig::from_toml(&text), Err(StudyError::Config(_))));
        let text = presets::BINARY_STUDY.replacen("hdagger = \"L2\"", "hdagger = \"M + L2\"", 1);
        assert!(StudyConfig::from_toml(&text).is_ok(), "variable roles are checked against data, not at parse time");
        let text = presets::BINARY_STUDY.replacen("hdagger = \"L2\"", "hdagger = \"L2 +\"", 1);
        assert!(matches!(StudyConfig::from_toml(&text), Err(StudyError::Spec { scenario: 3, .. })));
        let text = presets::BINARY_STUDY.replacen("seed =", "sed =", 1);
        assert!(matches!(StudyConfig::from_toml(&text), Err(StudyError::Config(_))));
    }

    #[test]
    fn generated_exposure_share_matches_the_marginal_law() {
        let model = StructuralModel::from_toml(presets::BINARY_DGM).unwrap();
        let law = marginalize(&model).unwrap();
        let a = law.names().iter().position(|v| v == "A").unwrap();
        let p: f64 = (0..law.probabilities().len()).filter(|&c| law.cell_values(c)[a] == 1.0).map(|c| law.probabilities()[c]).sum();
        let n = 1_000_000;
        let data = generate(&model, n, 99, 0, Arms::binary(1, 0)).unwrap();
        let share = data.rows_with_level(1).len() as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((share - p).abs() < 3.0 * se, "{share} vs {p}");
    }
}
