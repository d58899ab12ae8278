//! Iterative TMLE for a binary mediator. Besides `b0`, the mediator density
//! under treatment `f(M | a†, L)` is targeted: `b0` is fluctuated with weights
//! `W1` built from the current density, and the density is fluctuated along
//! `b0(1, L) − b0(0, L)` with weights `W2`. The two steps alternate until
//! both fluctuation parameters are negligible, and `h†` is then the exact
//! sum over the two mediator values.

use crate::data::Dataset;
use crate::design::{Overrides, Variable};
use crate::glm::{fit_offset_covariate, fit_offset_intercept, Family};

use super::wice::{control_means, influence, plug_in, ArmFit};
use super::{
    check_positivity, convex_mean, exposure_weights, fluctuation, outcome_family, shift_mean, BinaryArms, EstimateError, EstimateReport, EstimatorId,
    ExposureProbabilities, Fitted, MediatorModel, NuisanceSpecs, ReportParts, Step,
};

pub const ITMLE_MAX_ITERATIONS: usize = 50;
/// Both fluctuation parameters must fall below this in absolute value.
pub const ITMLE_TOLERANCE: f64 = 1e-6;

/// Needs `exposure`, `mediator` and `b0`; the mediator must be coded 0/1.
pub fn estimate_itmle(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    let arms = BinaryArms::new(data)?;
    if !data.mediator_is_binary() {
        return Err(EstimateError::UnsupportedMediator("iterative TMLE needs a mediator coded 0/1".into()));
    }
    let mut log = Vec::new();
    let family = outcome_family(data, specs);
    let bound = specs.positivity_bound;
    let levels = [arms.treated_level, arms.control_level];

    let exposure = ExposureProbabilities::fit(Step::Exposure, specs.require(Step::Exposure)?, data, &[Variable::Covariates], &levels, &specs.glm, &mut log)?;
    let w2 = exposure_weights(&exposure.column(0), &exposure.column(1), &arms.treated, bound)?;

    let gamma = specs.require(Step::Mediator)?;
    gamma
        .check_allowed(data, &[Variable::Exposure, Variable::Covariates])
        .map_err(|source| EstimateError::Design { step: Step::Mediator, source })?;
    let mediator_model = MediatorModel::fit(gamma, data, &specs.glm, &mut log)?;
    // P(M = 1 | a†, L), updated each round
    let mut p_m1 = mediator_model.density(gamma, data, arms.treated_level, Some(1.0))?;
    let f_control = mediator_model.density(gamma, data, arms.control_level, None)?;
    for &i in &arms.control {
        check_positivity(Step::Mediator, i, f_control[i], bound)?;
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
    let mut q1 = outcome.predict_at(Step::Outcome, b0_spec, data, &Overrides::mediator(1.0))?;
    let mut q0 = outcome.predict_at(Step::Outcome, b0_spec, data, &Overrides::mediator(0.0))?;

    let m = data.mediator();
    let observed = |q1: &[f64], q0: &[f64]| -> Vec<f64> { (0..m.len()).map(|i| if m[i] == 1.0 { q1[i] } else { q0[i] }).collect() };
    let mediator_weight = |p_m1: &[f64]| -> Vec<f64> {
        let mut w1 = vec![0.0; m.len()];
        for &i in &arms.control {
            let f_treated = if m[i] == 1.0 { p_m1[i] } else { 1.0 - p_m1[i] };
            w1[i] = f_treated / f_control[i];
        }
        w1
    };

    let treated_offset = |p: &[f64]| -> Vec<f64> { arms.treated.iter().map(|&i| Family::BinomialLogit.link(p[i])).collect() };
    let mut iterations = None;
    for round in 1..=ITMLE_MAX_ITERATIONS {
        let w1 = mediator_weight(&p_m1);
        let q_obs = observed(&q1, &q0);
        let offset: Vec<f64> = arms.control.iter().map(|&i| family.link(q_obs[i])).collect();
        let y: Vec<f64> = arms.control.iter().map(|&i| data.outcome()[i]).collect();
        let w: Vec<f64> = arms.control.iter().map(|&i| w1[i]).collect();
        let delta = fluctuation(Step::FluctuateOutcome, fit_offset_intercept(&offset, &y, &w, family))?;
        for q in q1.iter_mut().chain(q0.iter_mut()) {
            *q = shift_mean(family, *q, delta);
        }

        let contrast: Vec<f64> = q1.iter().zip(&q0).map(|(a, b)| a - b).collect();
        let covariate: Vec<f64> = arms.treated.iter().map(|&i| contrast[i]).collect();
        let response: Vec<f64> = arms.treated.iter().map(|&i| m[i]).collect();
        let weights: Vec<f64> = arms.treated.iter().map(|&i| w2[i]).collect();
        let nu = fluctuation(
            Step::FluctuateSecond,
            fit_offset_covariate(&treated_offset(&p_m1), &covariate, &response, &weights, Family::BinomialLogit),
        )?;
        for (p, &d) in p_m1.iter_mut().zip(&contrast) {
            if d != 0.0 {
                *p = shift_mean(Family::BinomialLogit, *p, nu * d);
            }
        }

        if delta.abs() < ITMLE_TOLERANCE && nu.abs() < ITMLE_TOLERANCE {
            iterations = Some(round);
            break;
        }
    }
    let iterations = iterations.ok_or(EstimateError::IterationLimit(ITMLE_MAX_ITERATIONS))?;

    let h_dagger: Vec<f64> = (0..m.len()).map(|i| q1[i] * p_m1[i] + q0[i] * (1.0 - p_m1[i])).collect();
    let psi3 = convex_mean(arms.control.iter().map(|&i| h_dagger[i]));
    let fits = [ArmFit {
        level: arms.control_level,
        rows: arms.control.clone(),
        b0: observed(&q1, &q0),
        h_dagger,
        psi3,
        w1: mediator_weight(&p_m1),
        w2,
    }];
    let psi = plug_in(data, &fits);
    Ok(ReportParts {
        estimator: EstimatorId::Itmle,
        psi,
        by_control_level: control_means(data, &fits),
        eif: Some(influence(data, arms.treated_level, &fits, psi)),
        weight_form: None,
        iterations: Some(iterations),
        fits: log,
    }
    .finish(data))
}
