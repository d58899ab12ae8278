//! Nonparametric bootstrap: percentile intervals for an estimator and for
//! paired contrasts of two estimands on the same resamples.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arms, DataError, Dataset};
use crate::estimators::{estimate, EstimateError, EstimatorId, NuisanceSpecs};
use crate::rng::{stream, Purpose};

/// Failed replicates beyond this share of `B` abort the run.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("interval level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("{failed} of {requested} bootstrap replicates failed (limit 10%); first failure: {first}")]
    TooManyFailures { failed: usize, requested: usize, first: String },
    #[error("estimate on the full sample failed: {0}")]
    Point(EstimateError),
    #[error("cannot target exposure level {level}: {source}")]
    Arms { level: i64, source: DataError },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Two-sided coverage of the percentile interval.
    pub level: f64,
    pub workers: usize,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            level: 0.95,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub point: f64,
    /// One entry per replicate index; `None` where the estimator failed.
    pub replicates: Vec<Option<f64>>,
    pub interval: Interval,
    pub level: f64,
    pub failed: usize,
}

impl BootstrapResult {
    /// Percentile interval of the successful replicates at another level.
    pub fn interval_at(&self, level: f64) -> Interval {
        let mut sorted: Vec<f64> = self.replicates.iter().flatten().copied().collect();
        sorted.sort_by(f64::total_cmp);
        percentile_interval(&sorted, level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastKind {
    /// Observed mean of the outcome minus the estimand at the data's arms.
    ObservedMinusPsi,
    /// Estimand with `first` as the mediator-reference level minus the
    /// estimand with `second`; all other levels serve as controls.
    PsiDifference { first: i64, second: i64 },
}

/// Value at probability `p` of sorted values, interpolating linearly between
/// order statistics at the 1-based position `(B + 1) p`, clamped to the
/// extremes.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let position = (b as f64 + 1.0) * p;
    if position <= 1.0 {
        return sorted[0];
    }
    if position >= b as f64 {
        return sorted[b - 1];
    }
    let below = position.floor();
    let fraction = position - below;
    let k = below as usize - 1;
    sorted[k] + fraction * (sorted[k + 1] - sorted[k])
}

pub fn percentile_interval(sorted: &[f64], level: f64) -> Interval {
    let tail = (1.0 - level) / 2.0;
    Interval {
        lo: percentile(sorted, tail),
        hi: percentile(sorted, 1.0 - tail),
    }
}

/// Row indices of bootstrap resample `replicate`, drawn with replacement.
pub fn resample_rows(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Bootstrap, &[n as u64, replicate as u64]);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Bootstraps an arbitrary statistic of the data.
pub fn bootstrap_with<F>(data: &Dataset, options: &BootstrapOptions, statistic: F) -> Result<BootstrapResult, InferenceError>
where
    F: Fn(&Dataset) -> Result<f64, EstimateError> + Sync,
{
    if options.replicates < 2 {
        return Err(InferenceError::TooFewReplicates(options.replicates));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(InferenceError::InvalidLevel(options.level));
    }
    let point = statistic(data).map_err(InferenceError::Point)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| InferenceError::Pool(e.to_string()))?;
    let n = data.n_rows();
    let outcomes: Vec<Result<f64, EstimateError>> = pool.install(|| {
        (0..options.replicates)
            .into_par_iter()
            .map(|b| statistic(&data.resample(&resample_rows(n, options.seed, b))))
            .collect()
    });

    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed as f64 > MAX_FAILURE_SHARE * options.replicates as f64 {
        let first = outcomes.iter().find_map(|o| o.as_ref().err()).map(ToString::to_string).unwrap_or_default();
        return Err(InferenceError::TooManyFailures {
            failed,
            requested: options.replicates,
            first,
        });
    }
    let replicates: Vec<Option<f64>> = outcomes.into_iter().map(Result::ok).collect();
    let mut sorted: Vec<f64> = replicates.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        point,
        interval: percentile_interval(&sorted, options.level),
        replicates,
        level: options.level,
        failed,
    })
}

pub fn bootstrap_ci(data: &Dataset, id: EstimatorId, specs: &NuisanceSpecs, options: &BootstrapOptions) -> Result<BootstrapResult, InferenceError> {
    bootstrap_with(data, options, |d| estimate(id, d, specs).map(|r| r.psi))
}

/// Arms with `level` as the mediator-reference level and every other declared
/// level as a control.
fn targeting(data: &Dataset, level: i64) -> Result<Dataset, InferenceError> {
    let control = data.levels().iter().copied().filter(|&l| l != level).collect();
    data.with_arms(Arms { treated: level, control })
        .map_err(|source| InferenceError::Arms { level, source })
}

/// Paired bootstrap of a contrast: both terms are evaluated on the same
/// resample.
pub fn contrast(data: &Dataset, id: EstimatorId, specs: &NuisanceSpecs, kind: ContrastKind, options: &BootstrapOptions) -> Result<BootstrapResult, InferenceError> {
    match kind {
        ContrastKind::ObservedMinusPsi => bootstrap_with(data, options, |d| {
            let mean = d.outcome().iter().sum::<f64>() / d.n_rows() as f64;
            Ok(mean - estimate(id, d, specs)?.psi)
        }),
        ContrastKind::PsiDifference { first, second } => {
            let first_data = targeting(data, first)?;
            let second_data = targeting(data, second)?;
            let (first_arms, second_arms) = (first_data.arms().clone(), second_data.arms().clone());
            bootstrap_with(data, options, |d| {
                // resamples keep the declared levels, so re-targeting cannot fail
                let a = d.with_arms(first_arms.clone()).expect("levels are preserved by resampling");
                let b = d.with_arms(second_arms.clone()).expect("levels are preserved by resampling");
                Ok(estimate(id, &a, specs)?.psi - estimate(id, &b, specs)?.psi)
            })
        }
    }
}
