//! Estimators checked against the frontdoor formula evaluated on the
//! empirical law, and against each other where they must coincide.

use rand::Rng;

use super::*;
use crate::data::{Arms, Schema};
use crate::glm::RankPolicy;
use crate::oracle::{frontdoor_exact, sample_dataset, DiscreteLaw, StructuralModel};
use crate::rng::{stream, Purpose};

const BINARY_DGM_TOML: &str = include_str!("../../configs/binary_dgm.toml");
const CONTINUOUS_DGM_TOML: &str = include_str!("../../configs/continuous_dgm.toml");

fn sample(config: &str, n: usize, seed: u64) -> Dataset {
    let model = StructuralModel::from_toml(config).unwrap();
    sample_dataset(&model, n, &mut stream(seed, Purpose::Replication, &[0]), Arms::binary(1, 0)).unwrap()
}

fn binary_sample(n: usize, seed: u64) -> Dataset {
    sample(BINARY_DGM_TOML, n, seed)
}

/// Cell frequencies of (covariates, A, M, Y) as a law over the observed supports.
fn empirical_law(data: &Dataset) -> DiscreteLaw {
    let mut names: Vec<String> = data.covariates().iter().map(|c| c.name.clone()).collect();
    let mut columns: Vec<Vec<f64>> = data.covariates().iter().map(|c| c.values.clone()).collect();
    names.extend([data.exposure_name(), data.mediator_name(), data.outcome_name()].map(String::from));
    columns.push(data.exposure().iter().map(|&a| a as f64).collect());
    columns.push(data.mediator().to_vec());
    columns.push(data.outcome().to_vec());
    let supports: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s
        })
        .collect();
    let cells: usize = supports.iter().map(Vec::len).product();
    let mut probabilities = vec![0.0; cells];
    let n = data.n_rows();
    for i in 0..n {
        let cell = columns
            .iter()
            .zip(&supports)
            .fold(0, |acc, (c, s)| acc * s.len() + s.iter().position(|&v| v == c[i]).unwrap());
        probabilities[cell] += 1.0 / n as f64;
    }
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= total);
    DiscreteLaw::new(names, supports, probabilities, data.exposure_name(), data.mediator_name(), data.outcome_name()).unwrap()
}

fn saturated_specs(form: WeightForm) -> NuisanceSpecs {
    Formulas {
        kappa: Some("L1*L2".into()),
        alpha: Some("M*L1*L2".into()),
        gamma: Some("A*L1*L2".into()),
        b0: Some("M*L1*L2".into()),
        hdagger: Some("L1*L2".into()),
        outcome: Some("A*M*L1*L2".into()),
    }
    .to_specs(Family::BinomialLogit, form, GlmOptions::default())
    .unwrap()
}

fn scenario2_specs(form: WeightForm) -> NuisanceSpecs {
    Formulas {
        kappa: Some("L2".into()),
        alpha: Some("M + L2".into()),
        gamma: Some("A + L2".into()),
        b0: Some("M*L1*L2".into()),
        hdagger: Some("L1*L2".into()),
        outcome: None,
    }
    .to_specs(
        Family::BinomialLogit,
        form,
        GlmOptions {
            rank_policy: RankPolicy::DropAliased,
            ..GlmOptions::default()
        },
    )
    .unwrap()
}

#[test]
fn saturated_estimators_reproduce_the_empirical_frontdoor_formula() {
    let data = binary_sample(20_000, 3);
    let truth = frontdoor_exact(&empirical_law(&data), 1.0).unwrap();
    for form in [WeightForm::DensityRatio, WeightForm::PropensityRatio] {
        let specs = saturated_specs(form);
        for id in [EstimatorId::Wice, EstimatorId::WiceMultilevel, EstimatorId::Ice, EstimatorId::Tmle, EstimatorId::Itmle, EstimatorId::Aipw, EstimatorId::Ipw] {
            let report = estimate(id, &data, &specs).unwrap();
            assert!((report.psi - truth).abs() < 1e-9, "{id} {form:?}: {} vs {truth}", report.psi);
        }
    }
}

#[test]
fn saturated_nocov_matches_frontdoor_without_covariates() {
    let full = binary_sample(5_000, 4);
    let schema = Schema {
        exposure: "A".into(),
        mediator: "M".into(),
        outcome: "Y".into(),
        covariates: vec![],
        exposure_levels: Some(vec![0, 1]),
    };
    let data = Dataset::new(&schema, vec![], full.exposure().to_vec(), full.mediator().to_vec(), full.outcome().to_vec(), Arms::binary(1, 0)).unwrap();
    let truth = frontdoor_exact(&empirical_law(&data), 1.0).unwrap();
    for form in [WeightForm::DensityRatio, WeightForm::PropensityRatio] {
        let specs = Formulas {
            alpha: Some("M".into()),
            gamma: Some("A".into()),
            b0: Some("M".into()),
            ..Formulas::default()
        }
        .to_specs(Family::BinomialLogit, form, GlmOptions::default())
        .unwrap();
        let report = estimate_wice_nocov(&data, &specs).unwrap();
        assert!((report.psi - truth).abs() < 1e-10, "{form:?}");
        assert!(report.std_error.unwrap() > 0.0);
    }
}

#[test]
fn saturated_itmle_stops_after_one_round() {
    let data = binary_sample(20_000, 3);
    let report = estimate_itmle(&data, &saturated_specs(WeightForm::DensityRatio)).unwrap();
    assert_eq!(report.iterations, Some(1));
}

#[test]
fn weighted_initial_fits_make_tmle_coincide_with_wice() {
    let data = sample(CONTINUOUS_DGM_TOML, 2_000, 5);
    for form in [WeightForm::DensityRatio, WeightForm::PropensityRatio] {
        let mut specs = scenario2_specs(form);
        specs.outcome = Some(ModelSpec::parse("M + L1 + L2", Family::BinomialLogit, ResponseRole::Outcome).unwrap());
        specs.hdagger = Some(ModelSpec::parse("L2", Family::BinomialLogit, ResponseRole::PseudoOutcome).unwrap());
        let wice = estimate_wice(&data, &specs).unwrap();
        let tmle = estimate_tmle_with(&data, &specs, &GlmInitialFits { specs: &specs, weighted: true }).unwrap();
        assert!((wice.psi - tmle.psi).abs() < 1e-9, "{} vs {}", wice.psi, tmle.psi);
        let unweighted = estimate_tmle(&data, &specs).unwrap();
        assert!((unweighted.psi - wice.psi).abs() > 1e-6, "{} {}", unweighted.psi, wice.psi);
    }
}

#[test]
fn two_level_multilevel_is_binary_wice() {
    let data = binary_sample(1_000, 6);
    for form in [WeightForm::DensityRatio, WeightForm::PropensityRatio] {
        let specs = scenario2_specs(form);
        let binary = estimate_wice(&data, &specs).unwrap();
        let multi = estimate_wice_multilevel(&data, &specs).unwrap();
        assert_eq!(binary.psi, multi.psi);
        assert_eq!(binary.std_error, multi.std_error);
    }
}

#[test]
fn plug_in_and_decomposition_agree() {
    let data = binary_sample(1_000, 7);
    let specs = scenario2_specs(WeightForm::DensityRatio);
    for id in [EstimatorId::Wice, EstimatorId::Tmle, EstimatorId::Itmle] {
        let r = estimate(id, &data, &specs).unwrap();
        assert!((r.psi3 - r.by_control_level[0].psi3).abs() < 1e-12, "{id}");
        assert!((r.p_treated * r.treated_mean + (1.0 - r.p_treated) * r.psi3 - r.psi).abs() < 1e-14);
    }
}

/// Three exposure levels, binary L, M and Y.
fn three_level_sample(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, Purpose::Replication, &[1]);
    let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (mut l, mut a, mut m, mut y) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let li = f64::from(u8::from(rng.gen_bool(0.4)));
        let u: f64 = rng.gen();
        let ai: i64 = if u < 0.3 + 0.2 * li { 0 } else if u < 0.7 { 1 } else { 2 };
        let mi = f64::from(u8::from(rng.gen_bool(expit(-0.5 + 0.8 * ai as f64 - li))));
        let yi = f64::from(u8::from(rng.gen_bool(expit(-1.0 + 0.5 * ai as f64 + mi + 0.7 * li))));
        l.push(li);
        a.push(ai);
        m.push(mi);
        y.push(yi);
    }
    let schema = Schema {
        exposure: "A".into(),
        mediator: "M".into(),
        outcome: "Y".into(),
        covariates: vec!["L".into()],
        exposure_levels: Some(vec![0, 1, 2]),
    };
    Dataset::new(&schema, vec![l], a, m, y, Arms { treated: 2, control: vec![0, 1] }).unwrap()
}

#[test]
fn saturated_multilevel_reproduces_the_empirical_frontdoor_formula() {
    let data = three_level_sample(6_000, 8);
    let truth = frontdoor_exact(&empirical_law(&data), 2.0).unwrap();
    for form in [WeightForm::DensityRatio, WeightForm::PropensityRatio] {
        let specs = Formulas {
            kappa: Some("L".into()),
            alpha: Some("M*L".into()),
            gamma: Some("A*L".into()),
            b0: Some("M*L".into()),
            hdagger: Some("L".into()),
            outcome: None,
        }
        .to_specs(Family::BinomialLogit, form, GlmOptions::default())
        .unwrap();
        let report = estimate_wice_multilevel(&data, &specs).unwrap();
        assert!((report.psi - truth).abs() < 1e-10, "{form:?}: {} vs {truth}", report.psi);
        assert_eq!(report.by_control_level.len(), 2);
        let pooled: f64 = report.by_control_level.iter().map(|c| c.share * c.psi3).sum();
        assert!((pooled - (1.0 - report.p_treated) * report.psi3).abs() < 1e-12);
        assert!(matches!(estimate_wice(&data, &specs), Err(EstimateError::NotBinaryExposure)));
    }
}

#[test]
fn bounded_estimators_stay_in_range_when_every_outcome_is_zero() {
    let mut data = binary_sample(400, 9);
    let zeros = vec![0.0; data.n_rows()];
    let schema = Schema {
        exposure: "A".into(),
        mediator: "M".into(),
        outcome: "Y".into(),
        covariates: vec!["L1".into(), "L2".into()],
        exposure_levels: Some(vec![0, 1]),
    };
    let covariates = data.covariates().iter().map(|c| c.values.clone()).collect();
    data = Dataset::new(&schema, covariates, data.exposure().to_vec(), data.mediator().to_vec(), zeros, Arms::binary(1, 0)).unwrap();
    let specs = scenario2_specs(WeightForm::DensityRatio);
    for id in [EstimatorId::Wice, EstimatorId::Ice, EstimatorId::Tmle, EstimatorId::Itmle] {
        let r = estimate(id, &data, &specs).unwrap();
        assert_eq!(r.psi, 0.0, "{id}");
        assert!(r.within_bounds);
    }
}

#[test]
fn errors_name_the_failing_step() {
    let data = binary_sample(300, 10);
    let mut specs = scenario2_specs(WeightForm::PropensityRatio);
    specs.exposure_given_mediator = None;
    assert_eq!(estimate_wice(&data, &specs).unwrap_err(), EstimateError::MissingSpec(Step::ExposureGivenMediator));

    let mut specs = scenario2_specs(WeightForm::DensityRatio);
    specs.hdagger = Some(ModelSpec::parse("M + L1", Family::BinomialLogit, ResponseRole::PseudoOutcome).unwrap());
    assert!(matches!(estimate_wice(&data, &specs), Err(EstimateError::Design { step: Step::HDagger, .. })));

    let specs = scenario2_specs(WeightForm::DensityRatio);
    let treated_only = data.resample(&data.rows_with_level(1));
    assert_eq!(estimate_wice(&treated_only, &specs).unwrap_err(), EstimateError::SingleArm { level: 0 });

    let tiny = data.resample(&(0..12).collect::<Vec<_>>());
    assert!(matches!(estimate_wice(&tiny, &specs), Err(EstimateError::ArmTooSmall { .. }) | Err(EstimateError::SingleArm { .. })));
}

#[test]
fn positivity_violations_are_reported() {
    let data = binary_sample(2_000, 11);
    let mut specs = scenario2_specs(WeightForm::DensityRatio);
    specs.positivity_bound = 0.2;
    assert!(matches!(estimate_wice(&data, &specs), Err(EstimateError::PositivityViolation { .. })));
}

/// Saturated specs, with covariate-free mediator and outcome models for the
/// estimator that ignores covariates.
fn complete_specs(id: EstimatorId, form: WeightForm) -> NuisanceSpecs {
    let mut specs = saturated_specs(form);
    specs.glm.rank_policy = RankPolicy::DropAliased;
    if id == EstimatorId::WiceNocov {
        specs.exposure_given_mediator = Some(ModelSpec::parse("M", Family::BinomialLogit, ResponseRole::Exposure).unwrap());
        specs.mediator = Some(ModelSpec::parse("A", Family::BinomialLogit, ResponseRole::Mediator).unwrap());
        specs.outcome = Some(ModelSpec::parse("M", Family::BinomialLogit, ResponseRole::Outcome).unwrap());
    }
    specs
}

fn slot(specs: &mut NuisanceSpecs, step: Step) -> &mut Option<ModelSpec> {
    match step {
        Step::Exposure => &mut specs.exposure,
        Step::ExposureGivenMediator => &mut specs.exposure_given_mediator,
        Step::Mediator => &mut specs.mediator,
        Step::Outcome => &mut specs.outcome,
        Step::HDagger => &mut specs.hdagger,
        Step::OutcomeFull => &mut specs.outcome_full,
        Step::FluctuateOutcome | Step::FluctuateSecond => unreachable!("fluctuations have no spec"),
    }
}

#[test]
fn missing_lists_exactly_the_models_each_estimator_fits() {
    let data = binary_sample(2000, 12);
    let all = [Step::Exposure, Step::ExposureGivenMediator, Step::Mediator, Step::Outcome, Step::HDagger, Step::OutcomeFull];
    for form in [WeightForm::DensityRatio, WeightForm::PropensityRatio] {
        for id in EstimatorId::ALL {
            let mut empty = complete_specs(id, form);
            all.into_iter().for_each(|step| *slot(&mut empty, step) = None);
            let needed = empty.missing(id);
            assert!(!needed.is_empty(), "{id}");

            let mut minimal = complete_specs(id, form);
            all.into_iter().filter(|s| !needed.contains(s)).for_each(|step| *slot(&mut minimal, step) = None);
            assert!(minimal.missing(id).is_empty());
            estimate(id, &data, &minimal).unwrap_or_else(|e| panic!("{id} with {needed:?}: {e}"));

            for &step in &needed {
                let mut without = minimal.clone();
                *slot(&mut without, step) = None;
                assert_eq!(without.missing(id), vec![step]);
                assert!(matches!(estimate(id, &data, &without), Err(EstimateError::MissingSpec(_))), "{id} without {step}");
            }
        }
    }
}
