//! Estimators of `Ψ = E(Y^{a_M = a†})`.
//!
//! All of them work through the decomposition `Ψ = P(a†)·E(Y | a†) + P(a◦)·ψ3`
//! with `ψ3 = E{h†(L) | A = a◦}`, `h†(L) = E{b0(M, L) | A = a†, L}` and
//! `b0(M, L) = E(Y | M, L, A = a◦)`. They differ in how `b0` and `h†` are
//! fitted:
//!
//! | estimator | `b0`, `h†` fits                               | bounded |
//! |-----------|-----------------------------------------------|---------|
//! | ICE       | unweighted GLMs                               | yes     |
//! | WICE      | GLMs weighted by `W1`, `W2`                   | yes     |
//! | TMLE      | initial fits + weighted offset fluctuations   | yes     |
//! | iTMLE     | iterated fluctuations of `b0` and `f(M|a†,L)` | yes     |
//! | AIPW      | one-step correction of the plug-in            | no      |
//! | IPW       | inverse weighting of treated rows             | no      |

mod aipw;
mod ipw;
mod itmle;
mod tmle;
mod wice;

pub use aipw::estimate_aipw;
pub use ipw::estimate_ipw;
pub use itmle::{estimate_itmle, ITMLE_MAX_ITERATIONS, ITMLE_TOLERANCE};
pub use tmle::{estimate_tmle, estimate_tmle_with, GlmInitialFits, InitialFits};
pub use wice::{estimate_ice, estimate_wice, estimate_wice_multilevel, estimate_wice_nocov};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::design::{build_design, DesignError, DesignMatrix, ModelSpec, Overrides, ResponseRole, Variable};
use crate::eif::{EifError, WeightForm};
use crate::glm::{fit_multinomial, fit_weighted, predict, Family, FitResult, GlmError, GlmOptions, MultinomialFit};

/// The nuisance regressions an estimator may need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    /// `P(A | L)`
    Exposure,
    /// `P(A | M, L)`
    ExposureGivenMediator,
    /// `f(M | A, L)`
    Mediator,
    /// `b0(M, L)` among control rows
    Outcome,
    /// `h†(L)` among treated rows
    HDagger,
    /// `E(Y | A, M, L)` for IPW
    OutcomeFull,
    /// TMLE/iTMLE fluctuation of `b0`
    FluctuateOutcome,
    /// TMLE fluctuation of `h†`, iTMLE fluctuation of `f(M | a†, L)`
    FluctuateSecond,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Step::Exposure => "exposure model P(A|L)",
            Step::ExposureGivenMediator => "exposure model P(A|M,L)",
            Step::Mediator => "mediator model f(M|A,L)",
            Step::Outcome => "outcome regression b0(M,L)",
            Step::HDagger => "pseudo-outcome regression h(L)",
            Step::OutcomeFull => "outcome model E(Y|A,M,L)",
            Step::FluctuateOutcome => "outcome fluctuation",
            Step::FluctuateSecond => "second fluctuation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("{step}: {source}")]
    Nuisance { step: Step, source: GlmError },
    #[error("{step}: {source}")]
    Design { step: Step, source: DesignError },
    #[error("{step}: probability {value:e} at row {row} is below the positivity bound")]
    PositivityViolation { step: Step, row: usize, value: f64 },
    #[error("no observations at exposure level {level}")]
    SingleArm { level: i64 },
    #[error("arm {level} has {rows} rows but its regression needs at least {required}")]
    ArmTooSmall { level: i64, rows: usize, required: usize },
    #[error("unsupported mediator: {0}")]
    UnsupportedMediator(String),
    #[error("missing model specification for {0}")]
    MissingSpec(Step),
    #[error("exposure level {0} is neither the treated level nor a control level")]
    UnassignedLevel(i64),
    #[error("this estimator needs exactly one control level")]
    NotBinaryExposure,
    #[error("{step} did not converge: {source}")]
    FluctuationNonConvergence { step: Step, source: GlmError },
    #[error("no convergence within {0} iterations")]
    IterationLimit(usize),
    #[error(transparent)]
    Eif(#[from] EifError),
}

/// Model formulas for each nuisance; only those an estimator uses are needed.
#[derive(Debug, Clone)]
pub struct NuisanceSpecs {
    /// `P(A | L)`
    pub exposure: Option<ModelSpec>,
    /// `P(A | M, L)`
    pub exposure_given_mediator: Option<ModelSpec>,
    /// `f(M | A, L)`
    pub mediator: Option<ModelSpec>,
    /// `b0(M, L)`
    pub outcome: Option<ModelSpec>,
    /// `h†(L)`
    pub hdagger: Option<ModelSpec>,
    /// `E(Y | A, M, L)`; IPW falls back to `b0` for every exposure level when absent.
    pub outcome_full: Option<ModelSpec>,
    pub weight_form: WeightForm,
    pub glm: GlmOptions,
    /// Denominator probabilities below this are positivity violations.
    pub positivity_bound: f64,
}

impl Default for NuisanceSpecs {
    fn default() -> Self {
        Self {
            exposure: None,
            exposure_given_mediator: None,
            mediator: None,
            outcome: None,
            hdagger: None,
            outcome_full: None,
            weight_form: WeightForm::DensityRatio,
            glm: GlmOptions::default(),
            positivity_bound: 1e-6,
        }
    }
}

/// Formula strings for each nuisance, as they appear in configuration files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formulas {
    /// `P(A | L)`
    pub kappa: Option<String>,
    /// `P(A | M, L)`
    pub alpha: Option<String>,
    /// `f(M | A, L)`
    pub gamma: Option<String>,
    pub b0: Option<String>,
    pub hdagger: Option<String>,
    /// `E(Y | A, M, L)` for IPW
    pub outcome: Option<String>,
}

impl Formulas {
    /// Exposure and mediator models are binomial-logit; the outcome
    /// regressions use `outcome_family`.
    pub fn to_specs(&self, outcome_family: Family, weight_form: WeightForm, glm: GlmOptions) -> Result<NuisanceSpecs, DesignError> {
        let parse = |f: &Option<String>, family, role| f.as_deref().map(|f| ModelSpec::parse(f, family, role)).transpose();
        Ok(NuisanceSpecs {
            exposure: parse(&self.kappa, Family::BinomialLogit, ResponseRole::Exposure)?,
            exposure_given_mediator: parse(&self.alpha, Family::BinomialLogit, ResponseRole::Exposure)?,
            mediator: parse(&self.gamma, Family::BinomialLogit, ResponseRole::Mediator)?,
            outcome: parse(&self.b0, outcome_family, ResponseRole::Outcome)?,
            hdagger: parse(&self.hdagger, outcome_family, ResponseRole::PseudoOutcome)?,
            outcome_full: parse(&self.outcome, outcome_family, ResponseRole::Outcome)?,
            weight_form,
            glm,
            ..NuisanceSpecs::default()
        })
    }
}

impl NuisanceSpecs {
    /// Working models `id` fits that are not specified. Empty when the specs
    /// are complete for `id`.
    pub fn missing(&self, id: EstimatorId) -> Vec<Step> {
        let weight_step = match self.weight_form {
            WeightForm::PropensityRatio => Step::ExposureGivenMediator,
            WeightForm::DensityRatio => Step::Mediator,
        };
        let needed: Vec<Step> = match id {
            EstimatorId::Wice | EstimatorId::WiceMultilevel | EstimatorId::Tmle => vec![Step::Exposure, weight_step, Step::Outcome, Step::HDagger],
            EstimatorId::Ice => vec![Step::Outcome, Step::HDagger],
            EstimatorId::WiceNocov => vec![weight_step, Step::Outcome],
            EstimatorId::Itmle | EstimatorId::Aipw => vec![Step::Exposure, Step::Mediator, Step::Outcome],
            EstimatorId::Ipw if self.outcome_full.is_some() => vec![Step::Exposure],
            EstimatorId::Ipw => vec![Step::Exposure, Step::Outcome],
        };
        needed.into_iter().filter(|&step| self.require(step).is_err()).collect()
    }

    fn require(&self, step: Step) -> Result<&ModelSpec, EstimateError> {
        let spec = match step {
            Step::Exposure => &self.exposure,
            Step::ExposureGivenMediator => &self.exposure_given_mediator,
            Step::Mediator => &self.mediator,
            Step::Outcome => &self.outcome,
            Step::HDagger => &self.hdagger,
            Step::OutcomeFull => &self.outcome_full,
            Step::FluctuateOutcome | Step::FluctuateSecond => &None,
        };
        spec.as_ref().ok_or(EstimateError::MissingSpec(step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    Wice,
    WiceNocov,
    WiceMultilevel,
    Ice,
    Tmle,
    Itmle,
    Aipw,
    Ipw,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 8] = [
        EstimatorId::Wice,
        EstimatorId::WiceNocov,
        EstimatorId::WiceMultilevel,
        EstimatorId::Ice,
        EstimatorId::Tmle,
        EstimatorId::Itmle,
        EstimatorId::Aipw,
        EstimatorId::Ipw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Wice => "wice",
            EstimatorId::WiceNocov => "wice-nocov",
            EstimatorId::WiceMultilevel => "wice-multilevel",
            EstimatorId::Ice => "ice",
            EstimatorId::Tmle => "tmle",
            EstimatorId::Itmle => "itmle",
            EstimatorId::Aipw => "aipw",
            EstimatorId::Ipw => "ipw",
        }
    }

    /// Whether the estimate is guaranteed to lie in the outcome's range.
    pub fn bounded(self) -> bool {
        !matches!(self, EstimatorId::Aipw | EstimatorId::Ipw)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

/// Diagnostics of one nuisance regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub step: Step,
    pub formula: String,
    pub rows: usize,
    pub converged: bool,
    pub iterations: usize,
    pub weighted: bool,
    pub aliased: Vec<String>,
    pub separation: bool,
    pub score_max_abs: f64,
}

impl FitSummary {
    fn from_fit(step: Step, spec: &ModelSpec, rows: usize, fit: &FitResult) -> Self {
        Self {
            step,
            formula: spec.formula(),
            rows,
            converged: fit.converged,
            iterations: fit.iterations,
            weighted: fit.weighted,
            aliased: fit.aliased.clone(),
            separation: fit.separation,
            score_max_abs: fit.score_max_abs,
        }
    }

    fn from_multinomial(step: Step, spec: &ModelSpec, rows: usize, fit: &MultinomialFit) -> Self {
        Self {
            step,
            formula: spec.formula(),
            rows,
            converged: fit.converged,
            iterations: fit.iterations,
            weighted: false,
            aliased: fit.aliased.clone(),
            separation: fit.separation,
            score_max_abs: fit.score_max_abs,
        }
    }
}

/// `ψ3` for one control level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlMean {
    pub level: i64,
    pub share: f64,
    pub psi3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimator: EstimatorId,
    pub psi: f64,
    /// Pooled control-arm term: `Ψ = p_treated·treated_mean + (1 − p_treated)·psi3`.
    pub psi3: f64,
    pub by_control_level: Vec<ControlMean>,
    pub p_treated: f64,
    pub treated_mean: f64,
    pub n: usize,
    /// Sandwich standard error from the efficient influence function at the
    /// estimator's own nuisance fits.
    pub std_error: Option<f64>,
    pub within_bounds: bool,
    pub outcome_range: [f64; 2],
    pub weight_form: Option<WeightForm>,
    /// Fluctuation iterations (iTMLE) or 1 (TMLE).
    pub iterations: Option<usize>,
    pub fits: Vec<FitSummary>,
}

impl EstimateReport {
    /// Normal-approximation interval from the sandwich standard error.
    pub fn wald_interval(&self, level: f64) -> Option<[f64; 2]> {
        let z = normal_quantile(0.5 + level / 2.0);
        self.std_error.map(|se| [self.psi - z * se, self.psi + z * se])
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Mean of `values`, kept inside their own range despite rounding.
pub(crate) fn convex_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut count, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        sum += v;
        count += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / count as f64).clamp(lo, hi)
}

/// Treated and control rows for a binary-exposure estimator.
#[derive(Debug, Clone)]
pub(crate) struct BinaryArms {
    pub treated_level: i64,
    pub control_level: i64,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub is_treated: Vec<bool>,
}

impl BinaryArms {
    pub fn new(data: &Dataset) -> Result<Self, EstimateError> {
        let arms = data.arms();
        if arms.control.len() != 1 {
            return Err(EstimateError::NotBinaryExposure);
        }
        let (t, c) = (arms.treated, arms.control[0]);
        if let Some(&other) = data.exposure().iter().find(|&&a| a != t && a != c) {
            return Err(EstimateError::UnassignedLevel(other));
        }
        let treated = data.rows_with_level(t);
        let control = data.rows_with_level(c);
        for (rows, level) in [(&treated, t), (&control, c)] {
            if rows.is_empty() {
                return Err(EstimateError::SingleArm { level });
            }
        }
        Ok(Self {
            treated_level: t,
            control_level: c,
            is_treated: data.exposure().iter().map(|&a| a == t).collect(),
            treated,
            control,
        })
    }

    pub fn p_treated(&self) -> f64 {
        self.treated.len() as f64 / self.is_treated.len() as f64
    }
}

pub(crate) fn design(step: Step, spec: &ModelSpec, data: &Dataset, overrides: &Overrides, allowed: &[Variable]) -> Result<DesignMatrix, EstimateError> {
    let wrap = |source| EstimateError::Design { step, source };
    spec.check_allowed(data, allowed).map_err(wrap)?;
    build_design(spec, data, overrides).map_err(wrap)
}

/// A GLM fitted on a subset of rows, with its design over all rows.
pub(crate) struct Fitted {
    pub fit: FitResult,
    pub design: DesignMatrix,
}

impl Fitted {
    /// Fits `spec` on `rows` with `response` and `weights` indexed by data row.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        step: Step,
        spec: &ModelSpec,
        data: &Dataset,
        allowed: &[Variable],
        rows: &[usize],
        response: &[f64],
        weights: Option<&[f64]>,
        glm: &GlmOptions,
        arm_level: Option<i64>,
        log: &mut Vec<FitSummary>,
    ) -> Result<Self, EstimateError> {
        let design = design(step, spec, data, &Overrides::default(), allowed)?;
        if let Some(level) = arm_level {
            let required = design.n_cols() + 1;
            if rows.len() < required {
                return Err(EstimateError::ArmTooSmall {
                    level,
                    rows: rows.len(),
                    required,
                });
            }
        }
        let x = design.select_rows(rows);
        let y: Vec<f64> = rows.iter().map(|&i| response[i]).collect();
        let w: Vec<f64> = match weights {
            Some(w) => rows.iter().map(|&i| w[i]).collect(),
            None => vec![1.0; rows.len()],
        };
        let fit = fit_weighted(&x, &y, &w, spec.family, glm).map_err(|source| EstimateError::Nuisance { step, source })?;
        log.push(FitSummary::from_fit(step, spec, rows.len(), &fit));
        Ok(Self { fit, design })
    }

    /// Fitted values at every data row.
    pub fn fitted(&self) -> Vec<f64> {
        predict(&self.fit, &self.design).expect("design built from the same spec")
    }

    /// Predictions with counterfactual values substituted.
    pub fn predict_at(&self, step: Step, spec: &ModelSpec, data: &Dataset, overrides: &Overrides) -> Result<Vec<f64>, EstimateError> {
        let design = build_design(spec, data, overrides).map_err(|source| EstimateError::Design { step, source })?;
        Ok(predict(&self.fit, &design).expect("design built from the same spec"))
    }
}

/// Fitted exposure probabilities, one column per level in `levels` order.
pub(crate) struct ExposureProbabilities {
    pub probs: Vec<Vec<f64>>,
}

impl ExposureProbabilities {
    /// Binomial for two levels (response `I(A = levels[0])`), multinomial otherwise.
    pub fn fit(step: Step, spec: &ModelSpec, data: &Dataset, allowed: &[Variable], levels: &[i64], glm: &GlmOptions, log: &mut Vec<FitSummary>) -> Result<Self, EstimateError> {
        let x = design(step, spec, data, &Overrides::default(), allowed)?;
        let n = data.n_rows();
        let wrap = |source| EstimateError::Nuisance { step, source };
        let probs = if levels.len() == 2 {
            let y: Vec<f64> = data.exposure().iter().map(|&a| f64::from(u8::from(a == levels[0]))).collect();
            let fit = fit_weighted(&x, &y, &vec![1.0; n], Family::BinomialLogit, glm).map_err(wrap)?;
            log.push(FitSummary::from_fit(step, spec, n, &fit));
            predict(&fit, &x).expect("same design").into_iter().map(|p| vec![p, 1.0 - p]).collect()
        } else {
            let classes: Vec<usize> = data
                .exposure()
                .iter()
                .map(|a| levels.iter().position(|l| l == a).ok_or(EstimateError::UnassignedLevel(*a)))
                .collect::<Result<_, _>>()?;
            let fit = fit_multinomial(&x, &classes, levels.len(), &vec![1.0; n], glm).map_err(wrap)?;
            log.push(FitSummary::from_multinomial(step, spec, n, &fit));
            fit.predict_proba(&x).expect("same design")
        };
        Ok(Self { probs })
    }

    /// Sample shares of each level, identical at every row.
    pub fn marginal(data: &Dataset, levels: &[i64]) -> Self {
        let n = data.n_rows() as f64;
        let shares: Vec<f64> = levels.iter().map(|&l| data.rows_with_level(l).len() as f64 / n).collect();
        Self {
            probs: vec![shares; data.n_rows()],
        }
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.probs.iter().map(|p| p[k]).collect()
    }
}

/// `f(M | A, L)` for a discrete mediator.
pub(crate) enum MediatorModel {
    Binary(FitResult),
    Categorical { support: Vec<f64>, fit: MultinomialFit },
}

pub(crate) const MAX_MEDIATOR_LEVELS: usize = 10;

impl MediatorModel {
    pub fn fit(spec: &ModelSpec, data: &Dataset, glm: &GlmOptions, log: &mut Vec<FitSummary>) -> Result<Self, EstimateError> {
        let step = Step::Mediator;
        let x = design(step, spec, data, &Overrides::default(), &[Variable::Exposure, Variable::Covariates])?;
        let n = data.n_rows();
        let wrap = |source| EstimateError::Nuisance { step, source };
        if data.mediator_is_binary() {
            let fit = fit_weighted(&x, data.mediator(), &vec![1.0; n], Family::BinomialLogit, glm).map_err(wrap)?;
            log.push(FitSummary::from_fit(step, spec, n, &fit));
            return Ok(MediatorModel::Binary(fit));
        }
        let support = data.mediator_support(MAX_MEDIATOR_LEVELS).ok_or_else(|| {
            EstimateError::UnsupportedMediator(format!("mediator density needs an integer-coded mediator with at most {MAX_MEDIATOR_LEVELS} levels"))
        })?;
        let classes: Vec<usize> = data.mediator().iter().map(|m| support.iter().position(|s| s == m).expect("in support")).collect();
        let fit = fit_multinomial(&x, &classes, support.len(), &vec![1.0; n], glm).map_err(wrap)?;
        log.push(FitSummary::from_multinomial(step, spec, n, &fit));
        Ok(MediatorModel::Categorical { support, fit })
    }

    pub fn support(&self) -> Vec<f64> {
        match self {
            MediatorModel::Binary(_) => vec![0.0, 1.0],
            MediatorModel::Categorical { support, .. } => support.clone(),
        }
    }

    /// `f(m | A = level, L_i)` for every row, with `m` the observed mediator
    /// when `at` is `None`.
    pub fn density(&self, spec: &ModelSpec, data: &Dataset, level: i64, at: Option<f64>) -> Result<Vec<f64>, EstimateError> {
        let x = build_design(spec, data, &Overrides::exposure(level)).map_err(|source| EstimateError::Design { step: Step::Mediator, source })?;
        let m_at = |i: usize| at.unwrap_or(data.mediator()[i]);
        Ok(match self {
            MediatorModel::Binary(fit) => predict(fit, &x)
                .expect("same spec")
                .into_iter()
                .enumerate()
                .map(|(i, p)| if m_at(i) == 1.0 { p } else { 1.0 - p })
                .collect(),
            MediatorModel::Categorical { support, fit } => fit
                .predict_proba(&x)
                .expect("same spec")
                .into_iter()
                .enumerate()
                .map(|(i, p)| support.iter().position(|&s| s == m_at(i)).map_or(0.0, |k| p[k]))
                .collect(),
        })
    }
}

/// `W1` for each control level, on that level's rows and zero elsewhere.
///
/// `exposure` has columns `[treated, controls...]`; `allowed` restricts the
/// covariate sets of the `α` and `γ` models.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mediator_weights(
    data: &Dataset,
    specs: &NuisanceSpecs,
    treated: i64,
    controls: &[i64],
    exposure: &ExposureProbabilities,
    rows_by_control: &[Vec<usize>],
    allowed_alpha: &[Variable],
    allowed_gamma: &[Variable],
    log: &mut Vec<FitSummary>,
) -> Result<Vec<Vec<f64>>, EstimateError> {
    let bound = specs.positivity_bound;
    let mut out = vec![vec![0.0; data.n_rows()]; controls.len()];
    match specs.weight_form {
        WeightForm::PropensityRatio => {
            let spec = specs.require(Step::ExposureGivenMediator)?;
            let levels: Vec<i64> = std::iter::once(treated).chain(controls.iter().copied()).collect();
            let alpha = ExposureProbabilities::fit(Step::ExposureGivenMediator, spec, data, allowed_alpha, &levels, &specs.glm, log)?;
            for (k, rows) in rows_by_control.iter().enumerate() {
                for &i in rows {
                    let (pt_ml, pc_ml) = (alpha.probs[i][0], alpha.probs[i][k + 1]);
                    let (pt_l, pc_l) = (exposure.probs[i][0], exposure.probs[i][k + 1]);
                    check_positivity(Step::ExposureGivenMediator, i, pc_ml, bound)?;
                    check_positivity(Step::Exposure, i, pt_l, bound)?;
                    out[k][i] = pt_ml * pc_l / (pc_ml * pt_l);
                }
            }
        }
        WeightForm::DensityRatio => {
            let spec = specs.require(Step::Mediator)?;
            spec.check_allowed(data, allowed_gamma).map_err(|source| EstimateError::Design { step: Step::Mediator, source })?;
            let model = MediatorModel::fit(spec, data, &specs.glm, log)?;
            let num = model.density(spec, data, treated, None)?;
            for ((k, rows), &c) in rows_by_control.iter().enumerate().zip(controls) {
                let den = model.density(spec, data, c, None)?;
                for &i in rows {
                    check_positivity(Step::Mediator, i, den[i], bound)?;
                    out[k][i] = num[i] / den[i];
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn check_positivity(step: Step, row: usize, value: f64, bound: f64) -> Result<(), EstimateError> {
    if value >= bound {
        Ok(())
    } else {
        Err(EstimateError::PositivityViolation { step, row, value })
    }
}

/// `W2 = P(a◦ | L) / P(a† | L)` on `rows`, zero elsewhere.
pub(crate) fn exposure_weights(p_treated_l: &[f64], p_control_l: &[f64], rows: &[usize], bound: f64) -> Result<Vec<f64>, EstimateError> {
    let mut w2 = vec![0.0; p_treated_l.len()];
    for &i in rows {
        check_positivity(Step::Exposure, i, p_treated_l[i], bound)?;
        w2[i] = p_control_l[i] / p_treated_l[i];
    }
    Ok(w2)
}

/// Family for the outcome regressions: the `b0` spec's, else inferred from Y.
pub(crate) fn outcome_family(data: &Dataset, specs: &NuisanceSpecs) -> Family {
    specs.outcome.as_ref().map(|s| s.family).unwrap_or_else(|| {
        let (lo, hi) = data.outcome_range();
        if lo >= 0.0 && hi <= 1.0 {
            Family::BinomialLogit
        } else {
            Family::GaussianIdentity
        }
    })
}

/// Moves a fitted mean along its canonical link; means pinned at 0 or 1
/// under the logit link stay there.
pub(crate) fn shift_mean(family: Family, mean: f64, by: f64) -> f64 {
    match family {
        Family::GaussianIdentity => mean + by,
        Family::BinomialLogit if mean <= 0.0 || mean >= 1.0 || by == 0.0 => mean,
        Family::BinomialLogit => family.inverse_link(family.link(mean) + by),
    }
}

/// Solves a fluctuation; a score with no finite root is taken at its limit.
pub(crate) fn fluctuation(step: Step, result: Result<f64, GlmError>) -> Result<f64, EstimateError> {
    match result {
        Ok(v) => Ok(v),
        Err(GlmError::SeparationSuspected { direction }) => Ok(f64::from(direction) * f64::INFINITY),
        Err(source) => Err(EstimateError::FluctuationNonConvergence { step, source }),
    }
}

/// Builds the report fields shared by every estimator.
pub(crate) struct ReportParts {
    pub estimator: EstimatorId,
    pub psi: f64,
    pub by_control_level: Vec<ControlMean>,
    pub eif: Option<Vec<f64>>,
    pub weight_form: Option<WeightForm>,
    pub iterations: Option<usize>,
    pub fits: Vec<FitSummary>,
}

impl ReportParts {
    pub fn finish(self, data: &Dataset) -> EstimateReport {
        let n = data.n_rows();
        let treated_rows = data.rows_with_level(data.arms().treated);
        let p_treated = treated_rows.len() as f64 / n as f64;
        let treated_mean = if treated_rows.is_empty() {
            0.0
        } else {
            treated_rows.iter().map(|&i| data.outcome()[i]).sum::<f64>() / treated_rows.len() as f64
        };
        let psi3 = if p_treated < 1.0 {
            (self.psi - p_treated * treated_mean) / (1.0 - p_treated)
        } else {
            f64::NAN
        };
        let (lo, hi) = data.outcome_range();
        EstimateReport {
            estimator: self.estimator,
            psi: self.psi,
            psi3,
            by_control_level: self.by_control_level,
            p_treated,
            treated_mean,
            n,
            std_error: self.eif.map(|phi| crate::eif::sandwich_variance(&phi).sqrt()),
            within_bounds: (lo..=hi).contains(&self.psi),
            outcome_range: [lo, hi],
            weight_form: self.weight_form,
            iterations: self.iterations,
            fits: self.fits,
        }
    }
}

/// Runs the named estimator; TMLE uses unweighted GLM initial fits.
pub fn estimate(id: EstimatorId, data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    match id {
        EstimatorId::Wice => estimate_wice(data, specs),
        EstimatorId::WiceNocov => estimate_wice_nocov(data, specs),
        EstimatorId::WiceMultilevel => estimate_wice_multilevel(data, specs),
        EstimatorId::Ice => estimate_ice(data, specs),
        EstimatorId::Tmle => estimate_tmle(data, specs),
        EstimatorId::Itmle => estimate_itmle(data, specs),
        EstimatorId::Aipw => estimate_aipw(data, specs),
        EstimatorId::Ipw => estimate_ipw(data, specs),
    }
}

#[cfg(test)]
mod oracle_tests;
