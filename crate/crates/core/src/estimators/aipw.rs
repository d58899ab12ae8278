//! One-step (augmented IPW) estimator: the plug-in built from `b0` and the
//! mediator density plus the empirical mean of the efficient influence
//! function. Not range-respecting.

use crate::data::Dataset;
use crate::design::{Overrides, Variable};

use super::{
    check_positivity, exposure_weights, BinaryArms, ControlMean, EstimateError, EstimateReport, EstimatorId, ExposureProbabilities, Fitted, MediatorModel,
    NuisanceSpecs, ReportParts, Step,
};

/// Needs `exposure`, `mediator` (discrete mediator) and `b0`. `h†` is the
/// explicit sum `Σ_m b0(m, L) f(m | a†, L)`; the weight form is ignored.
pub fn estimate_aipw(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    let arms = BinaryArms::new(data)?;
    let mut log = Vec::new();
    let bound = specs.positivity_bound;
    let levels = [arms.treated_level, arms.control_level];
    let n = data.n_rows();

    let exposure = ExposureProbabilities::fit(Step::Exposure, specs.require(Step::Exposure)?, data, &[Variable::Covariates], &levels, &specs.glm, &mut log)?;
    let w2 = exposure_weights(&exposure.column(0), &exposure.column(1), &arms.treated, bound)?;

    let gamma = specs.require(Step::Mediator)?;
    gamma
        .check_allowed(data, &[Variable::Exposure, Variable::Covariates])
        .map_err(|source| EstimateError::Design { step: Step::Mediator, source })?;
    let mediator_model = MediatorModel::fit(gamma, data, &specs.glm, &mut log)?;
    let f_treated = mediator_model.density(gamma, data, arms.treated_level, None)?;
    let f_control = mediator_model.density(gamma, data, arms.control_level, None)?;
    let mut w1 = vec![0.0; n];
    for &i in &arms.control {
        check_positivity(Step::Mediator, i, f_control[i], bound)?;
        w1[i] = f_treated[i] / f_control[i];
    }

    let b0_spec = specs.require(Step::Outcome)?;
    let outcome = Fitted::new(
        Step::Outcome,
        b0_spec,
        data,
        &[Variable::Mediator, Variable::Covariates],
        &arms.control,
        data.outcome(),
        None,
        &specs.glm,
        Some(arms.control_level),
        &mut log,
    )?;
    let b0 = outcome.fitted();
    let mut h_dagger = vec![0.0; n];
    for m in mediator_model.support() {
        let q = outcome.predict_at(Step::Outcome, b0_spec, data, &Overrides::mediator(m))?;
        let f = mediator_model.density(gamma, data, arms.treated_level, Some(m))?;
        for i in 0..n {
            h_dagger[i] += q[i] * f[i];
        }
    }
    let psi3 = arms.control.iter().map(|&i| h_dagger[i]).sum::<f64>() / arms.control.len() as f64;

    let y = data.outcome();
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            if arms.is_treated[i] {
                y[i] + w2[i] * (b0[i] - h_dagger[i])
            } else {
                psi3 + w1[i] * (y[i] - b0[i]) + (h_dagger[i] - psi3)
            }
        })
        .collect();
    let psi = terms.iter().sum::<f64>() / n as f64;
    Ok(ReportParts {
        estimator: EstimatorId::Aipw,
        psi,
        by_control_level: vec![ControlMean {
            level: arms.control_level,
            share: 1.0 - arms.p_treated(),
            psi3,
        }],
        eif: Some(terms.iter().map(|t| t - psi).collect()),
        weight_form: None,
        iterations: None,
        fits: log,
    }
    .finish(data))
}
