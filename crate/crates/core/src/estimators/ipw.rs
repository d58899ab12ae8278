//! Inverse probability weighting of treated rows:
//! `Ψ̂ = Σ_{A=a†} w_i g(M_i, L_i) / Σ_{A=a†} w_i` with `w_i = 1 / P(a† | L_i)`
//! and `g(M, L) = Σ_a E(Y | a, M, L) P(a | L)`. Not range-respecting, and its
//! standard error is only available by bootstrap.

use crate::data::Dataset;
use crate::design::{Overrides, Variable};

use super::{check_positivity, BinaryArms, EstimateError, EstimateReport, EstimatorId, ExposureProbabilities, Fitted, NuisanceSpecs, ReportParts, Step};

/// Needs `exposure` and either `outcome_full` (fitted on all rows) or `b0`,
/// which is then used for both exposure levels.
pub fn estimate_ipw(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    let arms = BinaryArms::new(data)?;
    let mut log = Vec::new();
    let levels = [arms.treated_level, arms.control_level];
    let all_rows: Vec<usize> = (0..data.n_rows()).collect();

    let exposure = ExposureProbabilities::fit(Step::Exposure, specs.require(Step::Exposure)?, data, &[Variable::Covariates], &levels, &specs.glm, &mut log)?;
    let p_treated_l = exposure.column(0);
    for &i in &arms.treated {
        check_positivity(Step::Exposure, i, p_treated_l[i], specs.positivity_bound)?;
    }

    let (mean_treated, mean_control) = match &specs.outcome_full {
        Some(spec) => {
            let fit = Fitted::new(
                Step::OutcomeFull,
                spec,
                data,
                &[Variable::Exposure, Variable::Mediator, Variable::Covariates],
                &all_rows,
                data.outcome(),
                None,
                &specs.glm,
                None,
                &mut log,
            )?;
            (
                fit.predict_at(Step::OutcomeFull, spec, data, &Overrides::exposure(arms.treated_level))?,
                fit.predict_at(Step::OutcomeFull, spec, data, &Overrides::exposure(arms.control_level))?,
            )
        }
        None => {
            let fit = Fitted::new(
                Step::Outcome,
                specs.require(Step::Outcome)?,
                data,
                &[Variable::Mediator, Variable::Covariates],
                &arms.control,
                data.outcome(),
                None,
                &specs.glm,
                Some(arms.control_level),
                &mut log,
            )?;
            let b0 = fit.fitted();
            (b0.clone(), b0)
        }
    };

    let (mut numerator, mut denominator) = (0.0, 0.0);
    for &i in &arms.treated {
        let p = p_treated_l[i];
        let g = mean_treated[i] * p + mean_control[i] * (1.0 - p);
        numerator += g / p;
        denominator += 1.0 / p;
    }
    Ok(ReportParts {
        estimator: EstimatorId::Ipw,
        psi: numerator / denominator,
        by_control_level: Vec::new(),
        eif: None,
        weight_form: None,
        iterations: None,
        fits: log,
    }
    .finish(data))
}
