//! Iterated conditional expectations, with (WICE) and without (ICE) weights.
//!
//! Both fit `b0` among control rows and regress its fitted values on `L`
//! among treated rows. With an intercept and canonical link the weighted
//! score equations make the one-step correction vanish, so WICE is a plug-in
//! that stays inside the outcome range.

use crate::data::Dataset;
use crate::design::Variable;
use crate::eif::{eif_value, Block};

use super::{
    convex_mean, exposure_weights, mediator_weights, BinaryArms, ControlMean, EstimateError, EstimateReport, EstimatorId, ExposureProbabilities, Fitted,
    FitSummary, NuisanceSpecs, ReportParts, Step,
};

/// One control level's fitted regressions.
pub(super) struct ArmFit {
    pub level: i64,
    pub rows: Vec<usize>,
    /// `b0(M_i, L_i)` at every row
    pub b0: Vec<f64>,
    /// `h†(L_i)` at every row
    pub h_dagger: Vec<f64>,
    pub psi3: f64,
    /// zero outside this level's rows
    pub w1: Vec<f64>,
    /// zero outside the treated rows
    pub w2: Vec<f64>,
}

/// `Ψ̂ = Pn{I(a†)Y + Σ_c I(c)·ψ̂3_c}`.
pub(super) fn plug_in(data: &Dataset, fits: &[ArmFit]) -> f64 {
    let mut values = data.outcome().to_vec();
    for fit in fits {
        for &i in &fit.rows {
            values[i] = fit.psi3;
        }
    }
    convex_mean(values)
}

pub(super) fn influence(data: &Dataset, treated: i64, fits: &[ArmFit], psi: f64) -> Vec<f64> {
    (0..data.n_rows())
        .map(|i| {
            let blocks: Vec<Block> = fits
                .iter()
                .map(|f| Block {
                    in_arm: data.exposure()[i] == f.level,
                    b0: f.b0[i],
                    h_dagger: f.h_dagger[i],
                    psi3: f.psi3,
                    w1: f.w1[i],
                    w2: f.w2[i],
                })
                .collect();
            eif_value(data.exposure()[i] == treated, data.outcome()[i], &blocks, psi)
        })
        .collect()
}

/// Fits `b0` on `control_rows` weighted by `w1` and `h†` on `treated_rows`
/// weighted by `w2`.
#[allow(clippy::too_many_arguments)]
fn iterate(
    data: &Dataset,
    specs: &NuisanceSpecs,
    treated: (i64, &[usize]),
    control: (i64, &[usize]),
    w1: Vec<f64>,
    w2: Vec<f64>,
    weighted: bool,
    log: &mut Vec<FitSummary>,
) -> Result<ArmFit, EstimateError> {
    let weights = |w: &[f64]| -> Option<Vec<f64>> { weighted.then(|| w.to_vec()) };
    let outcome = Fitted::new(
        Step::Outcome,
        specs.require(Step::Outcome)?,
        data,
        &[Variable::Mediator, Variable::Covariates],
        control.1,
        data.outcome(),
        weights(&w1).as_deref(),
        &specs.glm,
        Some(control.0),
        log,
    )?;
    let b0 = outcome.fitted();
    let second = Fitted::new(
        Step::HDagger,
        specs.require(Step::HDagger)?,
        data,
        &[Variable::Covariates],
        treated.1,
        &b0,
        weights(&w2).as_deref(),
        &specs.glm,
        Some(treated.0),
        log,
    )?;
    let h_dagger = second.fitted();
    let psi3 = convex_mean(control.1.iter().map(|&i| h_dagger[i]));
    Ok(ArmFit {
        level: control.0,
        rows: control.1.to_vec(),
        b0,
        h_dagger,
        psi3,
        w1,
        w2,
    })
}

fn binary(data: &Dataset, specs: &NuisanceSpecs, weighted: bool) -> Result<EstimateReport, EstimateError> {
    let arms = BinaryArms::new(data)?;
    let mut log = Vec::new();
    let (w1, w2) = if weighted {
        let levels = [arms.treated_level, arms.control_level];
        let exposure = ExposureProbabilities::fit(Step::Exposure, specs.require(Step::Exposure)?, data, &[Variable::Covariates], &levels, &specs.glm, &mut log)?;
        let w1 = mediator_weights(
            data,
            specs,
            arms.treated_level,
            &[arms.control_level],
            &exposure,
            std::slice::from_ref(&arms.control),
            &[Variable::Mediator, Variable::Covariates],
            &[Variable::Exposure, Variable::Covariates],
            &mut log,
        )?
        .remove(0);
        let w2 = exposure_weights(&exposure.column(0), &exposure.column(1), &arms.treated, specs.positivity_bound)?;
        (w1, w2)
    } else {
        (vec![1.0; data.n_rows()], vec![1.0; data.n_rows()])
    };
    let fit = iterate(
        data,
        specs,
        (arms.treated_level, &arms.treated),
        (arms.control_level, &arms.control),
        w1,
        w2,
        weighted,
        &mut log,
    )?;
    let fits = [fit];
    let psi = plug_in(data, &fits);
    Ok(ReportParts {
        estimator: if weighted { EstimatorId::Wice } else { EstimatorId::Ice },
        psi,
        by_control_level: control_means(data, &fits),
        eif: weighted.then(|| influence(data, arms.treated_level, &fits, psi)),
        weight_form: weighted.then_some(specs.weight_form),
        iterations: None,
        fits: log,
    }
    .finish(data))
}

pub(super) fn control_means(data: &Dataset, fits: &[ArmFit]) -> Vec<ControlMean> {
    fits.iter()
        .map(|f| ControlMean {
            level: f.level,
            share: f.rows.len() as f64 / data.n_rows() as f64,
            psi3: f.psi3,
        })
        .collect()
}

/// Weighted iterated conditional expectation with covariates.
///
/// Needs `b0`, `hdagger`, `exposure` and, by weight form, `exposure_given_mediator`
/// or `mediator`.
pub fn estimate_wice(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    binary(data, specs, true)
}

/// Unweighted iterated conditional expectation; consistent only when both
/// outcome regressions are correct. No standard error is reported.
pub fn estimate_ice(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    binary(data, specs, false)
}

/// WICE ignoring covariates: `b0(M)` is fitted among control rows weighted by
/// `W1` built from `P(A | M)` or `f(M | A)` and sample shares, and `ψ̂3` is
/// the mean of `b̂0` over treated rows.
pub fn estimate_wice_nocov(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    let arms = BinaryArms::new(data)?;
    let mut log = Vec::new();
    let levels = [arms.treated_level, arms.control_level];
    let shares = ExposureProbabilities::marginal(data, &levels);
    let w1 = mediator_weights(
        data,
        specs,
        arms.treated_level,
        &[arms.control_level],
        &shares,
        std::slice::from_ref(&arms.control),
        &[Variable::Mediator],
        &[Variable::Exposure],
        &mut log,
    )?
    .remove(0);
    let outcome = Fitted::new(
        Step::Outcome,
        specs.require(Step::Outcome)?,
        data,
        &[Variable::Mediator],
        &arms.control,
        data.outcome(),
        Some(&w1),
        &specs.glm,
        Some(arms.control_level),
        &mut log,
    )?;
    let b0 = outcome.fitted();
    let psi3 = convex_mean(arms.treated.iter().map(|&i| b0[i]));
    let w2_const = (1.0 - arms.p_treated()) / arms.p_treated();
    let w2 = arms.is_treated.iter().map(|&t| if t { w2_const } else { 0.0 }).collect();
    let fits = [ArmFit {
        level: arms.control_level,
        rows: arms.control.clone(),
        b0,
        h_dagger: vec![psi3; data.n_rows()],
        psi3,
        w1,
        w2,
    }];
    let psi = plug_in(data, &fits);
    Ok(ReportParts {
        estimator: EstimatorId::WiceNocov,
        psi,
        by_control_level: control_means(data, &fits),
        eif: Some(influence(data, arms.treated_level, &fits, psi)),
        weight_form: Some(specs.weight_form),
        iterations: None,
        fits: log,
    }
    .finish(data))
}

/// WICE with several control levels: one pair of weighted regressions per
/// control level, with multinomial exposure models when there are more than
/// two levels. Every observed level must be the treated level or a control.
pub fn estimate_wice_multilevel(data: &Dataset, specs: &NuisanceSpecs) -> Result<EstimateReport, EstimateError> {
    let arms = data.arms().clone();
    let levels: Vec<i64> = std::iter::once(arms.treated).chain(arms.control.iter().copied()).collect();
    if let Some(&other) = data.exposure().iter().find(|a| !levels.contains(a)) {
        return Err(EstimateError::UnassignedLevel(other));
    }
    let rows: Vec<Vec<usize>> = levels.iter().map(|&l| data.rows_with_level(l)).collect();
    if let Some(k) = rows.iter().position(Vec::is_empty) {
        return Err(EstimateError::SingleArm { level: levels[k] });
    }
    let mut log = Vec::new();
    let exposure = ExposureProbabilities::fit(Step::Exposure, specs.require(Step::Exposure)?, data, &[Variable::Covariates], &levels, &specs.glm, &mut log)?;
    let w1s = mediator_weights(
        data,
        specs,
        arms.treated,
        &arms.control,
        &exposure,
        &rows[1..],
        &[Variable::Mediator, Variable::Covariates],
        &[Variable::Exposure, Variable::Covariates],
        &mut log,
    )?;
    let p_treated_l = exposure.column(0);
    let mut fits = Vec::with_capacity(arms.control.len());
    for (k, w1) in w1s.into_iter().enumerate() {
        let w2 = exposure_weights(&p_treated_l, &exposure.column(k + 1), &rows[0], specs.positivity_bound)?;
        fits.push(iterate(data, specs, (arms.treated, &rows[0]), (arms.control[k], &rows[k + 1]), w1, w2, true, &mut log)?);
    }
    let psi = plug_in(data, &fits);
    Ok(ReportParts {
        estimator: EstimatorId::WiceMultilevel,
        psi,
        by_control_level: control_means(data, &fits),
        eif: Some(influence(data, arms.treated, &fits, psi)),
        weight_form: Some(specs.weight_form),
        iterations: None,
        fits: log,
    }
    .finish(data))
}
