//! `frontdoor simulate`: replication studies from a study configuration.

use std::path::PathBuf;

use clap::Args;
use frontdoor::oracle::StructuralModel;
use frontdoor::presets;
use frontdoor::simulation::{run_study, MetricsRow, StudyConfig, StudyError};
use serde::Serialize;

use crate::error::CliError;
use crate::report::{Output, Provenance};
use crate::CommonArgs;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML study configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Shipped study: continuous-study or binary-study.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    provenance: Provenance,
    config: &'a StudyConfig,
    model: &'a StructuralModel,
    truth: f64,
    metrics: &'a [MetricsRow],
}

fn study_error(e: StudyError) -> CliError {
    match e {
        StudyError::Io { .. } => CliError::Data(e.to_string()),
        StudyError::Pool(_) => CliError::Estimation(e.to_string()),
        StudyError::Config(_) | StudyError::Spec { .. } | StudyError::Model(_) => CliError::Config(e.to_string()),
    }
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let (mut config, base_dir) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let config = StudyConfig::from_toml(&text).map_err(study_error)?;
            (config, path.parent().map(PathBuf::from))
        }
        (None, Some(name)) => {
            let config = StudyConfig::preset(name).ok_or_else(|| CliError::Config(format!("unknown study preset `{name}`; known: {}", presets::STUDY_NAMES.join(", "))))?;
            (config, None)
        }
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    if let Some(replications) = args.replications {
        config.replications = replications;
    }
    if let Some(sizes) = &args.sample_sizes {
        config.sample_sizes.clone_from(sizes);
    }
    if let Some(seed) = args.common.seed {
        config.seed = seed;
    }
    config.validate().map_err(study_error)?;
    let model = config.load_model(base_dir.as_deref()).map_err(study_error)?;

    let output = Output::new(args.common.out.clone())?;
    let result = run_study(&config, &model, args.common.workers).map_err(study_error)?;
    output.report(
        "report.json",
        &SimulateOutput {
            provenance: Provenance::new("simulate", &config, config.seed, None),
            config: &config,
            model: &model,
            truth: result.truth,
            metrics: &result.rows,
        },
    )?;
    output.table("metrics.csv", |buf| result.write_csv(buf))?;
    output.table("replications.csv", |buf| result.write_records_csv(buf))?;
    if let Some(dir) = output.dir() {
        eprintln!("wrote report.json, metrics.csv and replications.csv to {}", dir.display());
    }
    Ok(())
}
