//! `frontdoor oracle`: the frontdoor functional against the interventional
//! mean of a structural model.

use std::path::PathBuf;

use clap::Args;
use frontdoor::oracle::{check_identification, interventional_mean_mc, IdentificationCheck, MonteCarloEstimate, OracleError, StructuralModel};
use frontdoor::presets;
use serde::Serialize;

use crate::error::CliError;
use crate::report::{Output, Provenance};
use crate::CommonArgs;

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// TOML structural model.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    model: Option<PathBuf>,
    /// Shipped model: continuous, binary, confounded-mediator, nhanes-synthetic.
    #[arg(long)]
    preset: Option<String>,
    /// Exposure level whose mediator distribution is imposed (a†).
    #[arg(long, default_value_t = 1.0)]
    treated: f64,
    /// Monte Carlo draws for models with continuous variables.
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    /// Largest accepted gap for discrete models.
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Serialize)]
struct OracleConfig {
    source: String,
    model: StructuralModel,
    treated: f64,
    draws: usize,
    tolerance: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
enum Outcome {
    /// Both routes by enumeration.
    Exact {
        #[serde(flatten)]
        check: IdentificationCheck,
        within_tolerance: bool,
    },
    /// Continuous variables: the interventional mean by simulation only.
    MonteCarlo {
        interventional: MonteCarloEstimate,
    },
}

#[derive(Debug, Serialize)]
struct OracleOutput<'a> {
    provenance: Provenance,
    config: &'a OracleConfig,
    result: Outcome,
}

pub fn run(args: &OracleArgs) -> Result<(), CliError> {
    let (source, text) = match (&args.model, &args.preset) {
        (Some(path), _) => (
            path.display().to_string(),
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        ),
        (None, Some(name)) => (
            format!("preset:{name}"),
            presets::model(name)
                .ok_or_else(|| CliError::Config(format!("unknown model preset `{name}`; known: {}", presets::MODEL_NAMES.join(", "))))?
                .to_string(),
        ),
        (None, None) => unreachable!("clap requires --model or --preset"),
    };
    let model = StructuralModel::from_toml(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if args.draws < 2 {
        return Err(CliError::Config("--draws must be at least 2".into()));
    }
    let config = OracleConfig {
        source,
        model,
        treated: args.treated,
        draws: args.draws,
        tolerance: args.tolerance,
        seed: args.common.seed.unwrap_or(0),
    };

    let result = match check_identification(&config.model, config.treated) {
        Ok(check) => Outcome::Exact {
            within_tolerance: check.gap <= config.tolerance,
            check,
        },
        Err(OracleError::ContinuousVariable(_)) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(args.common.workers.max(1))
                .build()
                .map_err(|e| CliError::Estimation(e.to_string()))?;
            let estimate = pool
                .install(|| interventional_mean_mc(&config.model, config.treated, config.draws, config.seed))
                .map_err(|e| CliError::Estimation(e.to_string()))?;
            Outcome::MonteCarlo { interventional: estimate }
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };

    let gap = match &result {
        Outcome::Exact { check, within_tolerance: false } => Some(check.gap),
        _ => None,
    };
    let output = Output::new(args.common.out.clone())?;
    output.report(
        "report.json",
        &OracleOutput {
            provenance: Provenance::new("oracle", &config, config.seed, None),
            config: &config,
            result,
        },
    )?;
    match gap {
        Some(gap) => Err(CliError::OracleGap {
            gap,
            tolerance: config.tolerance,
        }),
        None => Ok(()),
    }
}
