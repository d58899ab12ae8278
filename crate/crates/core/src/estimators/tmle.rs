//! Targeted maximum likelihood: initial outcome regressions are fluctuated
//! along intercept-only submodels on the link scale, weighted by `W1` and
//! `W2`, which solves the corresponding pieces of the efficient score.

use crate::data::Dataset;
use crate::design::Variable;
use crate::glm::{fit_offset_intercept, Family};

use super::wice::{control_means, influence, plug_in, ArmFit};
use super::{
    convex_mean, exposure_weights, fluctuation, mediator_weights, outcome_family, shift_mean, BinaryArms, EstimateError, EstimateReport, EstimatorId,
    ExposureProbabilities, Fitted, FitSummary, NuisanceSpecs, ReportParts, Step,
};

/// Source of the nuisance estimates TMLE starts from.
pub trait InitialFits {
    /// `P(A = a† | L_i)` at every row.
    fn treated_probability(&self, data: &Dataset, log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError>;

    /// `W1` at control rows, zero elsewhere.
    fn mediator_weight(&self, data: &Dataset, treated_probability: &[f64], log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError>;

    /// Initial `b0(M_i, L_i)` at every row.
    fn outcome(&self, data: &Dataset, w1: &[f64], log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError>;

    /// Initial `h†(L_i)` at every row, learned from `pseudo` on treated rows.
    fn hdagger(&self, data: &Dataset, pseudo: &[f64], w2: &[f64], log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError>;
}

/// GLM initial fits from [`NuisanceSpecs`]. With `weighted` the outcome
/// regressions already use `W1` and `W2`, the fluctuations are zero and the
/// result coincides with WICE.
#[derive(Debug, Clone, Copy)]
pub struct GlmInitialFits<'a> {
    pub specs: &'a NuisanceSpecs,
    pub weighted: bool,
}

impl GlmInitialFits<'_> {
    fn levels(data: &Dataset) -> Result<(BinaryArms, [i64; 2]), EstimateError> {
        let arms = BinaryArms::new(data)?;
        let levels = [arms.treated_level, arms.control_level];
        Ok((arms, levels))
    }
}

impl InitialFits for GlmInitialFits<'_> {
    fn treated_probability(&self, data: &Dataset, log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError> {
        let (_, levels) = Self::levels(data)?;
        let spec = self.specs.require(Step::Exposure)?;
        let probs = ExposureProbabilities::fit(Step::Exposure, spec, data, &[Variable::Covariates], &levels, &self.specs.glm, log)?;
        Ok(probs.column(0))
    }

    fn mediator_weight(&self, data: &Dataset, treated_probability: &[f64], log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError> {
        let (arms, levels) = Self::levels(data)?;
        let exposure = ExposureProbabilities {
            probs: treated_probability.iter().map(|&p| vec![p, 1.0 - p]).collect(),
        };
        Ok(mediator_weights(
            data,
            self.specs,
            levels[0],
            &levels[1..],
            &exposure,
            std::slice::from_ref(&arms.control),
            &[Variable::Mediator, Variable::Covariates],
            &[Variable::Exposure, Variable::Covariates],
            log,
        )?
        .remove(0))
    }

    fn outcome(&self, data: &Dataset, w1: &[f64], log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError> {
        let (arms, _) = Self::levels(data)?;
        let fit = Fitted::new(
            Step::Outcome,
            self.specs.require(Step::Outcome)?,
            data,
            &[Variable::Mediator, Variable::Covariates],
            &arms.control,
            data.outcome(),
            self.weighted.then_some(w1),
            &self.specs.glm,
            Some(arms.control_level),
            log,
        )?;
        Ok(fit.fitted())
    }

    fn hdagger(&self, data: &Dataset, pseudo: &[f64], w2: &[f64], log: &mut Vec<FitSummary>) -> Result<Vec<f64>, EstimateError> {
        let (arms, _) = Self::levels(data)?;
        let fit = Fitted::new(
            Step::HDagger,
            self.specs.require(Step::HDagger)?,
            data,
            &[Variable::Covariates],
            &arms.treated,
            pseudo,
            self.weighted.then_some(w2),
            &self.specs.glm,
            Some(arms.treated_level),
            log,
        )?;
        Ok(fit.fitted())
    }
}

/// Offset-intercept fluctuation of `initial` towards `response` on `rows`.
fn fluctuate(step: Step, family: Family, initial: &[f64], response: &[f64], weights: &[f64], rows: &[usize]) -> Result<f64, EstimateError> {
    let offset: Vec<f64> = rows.iter().map(|&i| family.link(initial[i])).collect();
    let y: Vec<f64> = rows.iter().map(|&i| response[i]).collect();
    let w: Vec<f64> = rows.iter().map(|&i| weights[i]).collect();
    fluctuation(step, fit_offset_intercept(&offset, &y, &w, family))
}

/// TMLE with unweighted GLM initial fits.
pub fn estimate_tmle(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    estimate_tmle_with(data, specs, &GlmInitialFits { specs, weighted: false })
}

/// TMLE from arbitrary initial fits. `specs` supplies the outcome family,
/// weight form and positivity bound.
pub fn estimate_tmle_with(data: &Dataset, specs: &NuisanceSpecs, initial: &dyn InitialFits) -> Result<EstimateReport, EstimateError> {
    let arms = BinaryArms::new(data)?;
    let mut log = Vec::new();
    let family = outcome_family(data, specs);

    let p_treated_l = initial.treated_probability(data, &mut log)?;
    let p_control_l: Vec<f64> = p_treated_l.iter().map(|p| 1.0 - p).collect();
    let w2 = exposure_weights(&p_treated_l, &p_control_l, &arms.treated, specs.positivity_bound)?;
    let w1 = initial.mediator_weight(data, &p_treated_l, &mut log)?;

    let b0_initial = initial.outcome(data, &w1, &mut log)?;
    let delta = fluctuate(Step::FluctuateOutcome, family, &b0_initial, data.outcome(), &w1, &arms.control)?;
    let b0: Vec<f64> = b0_initial.iter().map(|&q| shift_mean(family, q, delta)).collect();

    let h_initial = initial.hdagger(data, &b0, &w2, &mut log)?;
    let nu = fluctuate(Step::FluctuateSecond, family, &h_initial, &b0, &w2, &arms.treated)?;
    let h_dagger: Vec<f64> = h_initial.iter().map(|&r| shift_mean(family, r, nu)).collect();

    let psi3 = convex_mean(arms.control.iter().map(|&i| h_dagger[i]));
    let fits = [ArmFit {
        level: arms.control_level,
        rows: arms.control.clone(),
        b0,
        h_dagger,
        psi3,
        w1,
        w2,
    }];
    let psi = plug_in(data, &fits);
    Ok(ReportParts {
        estimator: EstimatorId::Tmle,
        psi,
        by_control_level: control_means(data, &fits),
        eif: Some(influence(data, arms.treated_level, &fits, psi)),
        weight_form: Some(specs.weight_form),
        iterations: Some(1),
        fits: log,
    }
    .finish(data))
}
