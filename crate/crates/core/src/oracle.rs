//! Ground truth for discrete laws and structural models.
//!
//! [`frontdoor_exact`] evaluates the identifying functional of an observed
//! law by enumeration. [`interventional_mean_exact`] evaluates the target
//! directly on the structural model, with the mediator's exposure input set
//! to the treated level. The two routes share nothing but the model, so their
//! agreement is a check on identification; a model with a confounded mediator
//! must make them disagree.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arms, Dataset, Schema};
use crate::design::{parse_term, DesignError, Factor};
use crate::glm::expit;
use crate::rng::{self, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("positivity fails in cell {cell}")]
    PositivityViolation { cell: String },
    #[error("variable `{0}` is continuous; exact enumeration needs discrete variables")]
    ContinuousVariable(String),
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("invalid structural model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Term(#[from] DesignError),
}

/// A joint probability table over finitely supported variables.
///
/// Cells are ordered row-major over the variables, the last varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    names: Vec<String>,
    supports: Vec<Vec<f64>>,
    probabilities: Vec<f64>,
    roles: LawRoles,
}

/// Variable indices playing each role; remaining variables are covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct LawRoles {
    pub exposure: usize,
    pub mediator: usize,
    pub outcome: usize,
    pub covariates: Vec<usize>,
}

impl DiscreteLaw {
    /// `exposure`, `mediator`, `outcome` name variables in `names`; all other
    /// variables are treated as covariates.
    pub fn new(
        names: Vec<String>,
        supports: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
        exposure: &str,
        mediator: &str,
        outcome: &str,
    ) -> Result<Self, OracleError> {
        if names.len() != supports.len() {
            return Err(OracleError::InvalidLaw("one support per variable".into()));
        }
        let cells: usize = supports.iter().map(Vec::len).product();
        if probabilities.len() != cells {
            return Err(OracleError::InvalidLaw(format!(
                "{} probabilities for {cells} cells",
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(OracleError::InvalidLaw("negative or non-finite probability".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(OracleError::InvalidLaw(format!("probabilities sum to {total}")));
        }
        let find = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| OracleError::InvalidLaw(format!("no variable `{n}`")))
        };
        let (exposure, mediator, outcome) = (find(exposure)?, find(mediator)?, find(outcome)?);
        if exposure == mediator || exposure == outcome || mediator == outcome {
            return Err(OracleError::InvalidLaw("roles must be distinct variables".into()));
        }
        let covariates = (0..names.len()).filter(|i| ![exposure, mediator, outcome].contains(i)).collect();
        Ok(Self {
            names,
            supports,
            probabilities,
            roles: LawRoles {
                exposure,
                mediator,
                outcome,
                covariates,
            },
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn supports(&self) -> &[Vec<f64>] {
        &self.supports
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn roles(&self) -> &LawRoles {
        &self.roles
    }

    /// Support indices of every variable in cell `cell`.
    pub fn cell_indices(&self, mut cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.supports.len()];
        for (v, support) in self.supports.iter().enumerate().rev() {
            idx[v] = cell % support.len();
            cell /= support.len();
        }
        idx
    }

    pub fn cell_values(&self, cell: usize) -> Vec<f64> {
        self.cell_indices(cell)
            .into_iter()
            .zip(&self.supports)
            .map(|(i, s)| s[i])
            .collect()
    }

    /// The same variables with new cell probabilities.
    pub fn with_probabilities(&self, probabilities: Vec<f64>) -> Result<Self, OracleError> {
        let names = self.names.clone();
        Self::new(
            names,
            self.supports.clone(),
            probabilities,
            &self.names[self.roles.exposure],
            &self.names[self.roles.mediator],
            &self.names[self.roles.outcome],
        )
    }

    /// Collapses to (covariate configuration, exposure, mediator, outcome).
    pub fn tables(&self) -> Tables {
        let r = &self.roles;
        let n_l: usize = r.covariates.iter().map(|&c| self.supports[c].len()).product();
        let (n_a, n_m, n_y) = (
            self.supports[r.exposure].len(),
            self.supports[r.mediator].len(),
            self.supports[r.outcome].len(),
        );
        let mut joint = vec![0.0; n_l * n_a * n_m * n_y];
        for (cell, &p) in self.probabilities.iter().enumerate() {
            let idx = self.cell_indices(cell);
            let l = self.covariate_index(&idx);
            joint[((l * n_a + idx[r.exposure]) * n_m + idx[r.mediator]) * n_y + idx[r.outcome]] += p;
        }
        Tables {
            n_l,
            n_a,
            n_m,
            n_y,
            joint,
            exposure: self.supports[r.exposure].clone(),
            mediator: self.supports[r.mediator].clone(),
            outcome: self.supports[r.outcome].clone(),
        }
    }

    /// Index of the covariate configuration of a cell, row-major over covariates.
    pub fn covariate_index(&self, idx: &[usize]) -> usize {
        self.roles
            .covariates
            .iter()
            .fold(0, |acc, &c| acc * self.supports[c].len() + idx[c])
    }
}

/// The law collapsed to `p(l, a, m, y)` with `l` indexing covariate configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub n_l: usize,
    pub n_a: usize,
    pub n_m: usize,
    pub n_y: usize,
    joint: Vec<f64>,
    pub exposure: Vec<f64>,
    pub mediator: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl Tables {
    pub fn p(&self, l: usize, a: usize, m: usize, y: usize) -> f64 {
        self.joint[((l * self.n_a + a) * self.n_m + m) * self.n_y + y]
    }

    pub fn p_lam(&self, l: usize, a: usize, m: usize) -> f64 {
        (0..self.n_y).map(|y| self.p(l, a, m, y)).sum()
    }

    pub fn p_la(&self, l: usize, a: usize) -> f64 {
        (0..self.n_m).map(|m| self.p_lam(l, a, m)).sum()
    }

    pub fn p_lm(&self, l: usize, m: usize) -> f64 {
        (0..self.n_a).map(|a| self.p_lam(l, a, m)).sum()
    }

    pub fn p_l(&self, l: usize) -> f64 {
        (0..self.n_a).map(|a| self.p_la(l, a)).sum()
    }

    pub fn p_a(&self, a: usize) -> f64 {
        (0..self.n_l).map(|l| self.p_la(l, a)).sum()
    }

    /// `E(Y | l, a, m)`; `None` when the cell has zero mass.
    pub fn mean_y(&self, l: usize, a: usize, m: usize) -> Option<f64> {
        let mass = self.p_lam(l, a, m);
        (mass > 0.0).then(|| (0..self.n_y).map(|y| self.outcome[y] * self.p(l, a, m, y)).sum::<f64>() / mass)
    }

    pub fn exposure_index(&self, level: f64) -> Result<usize, OracleError> {
        self.exposure
            .iter()
            .position(|&a| a == level)
            .ok_or_else(|| OracleError::InvalidLaw(format!("exposure level {level} not in support")))
    }
}

/// `Σ_{m,l} f(m | a†, l) f(l) Σ_a E(Y | l, a, m) f(a | l)` by enumeration.
pub fn frontdoor_exact(law: &DiscreteLaw, treated: f64) -> Result<f64, OracleError> {
    let t = law.tables();
    let at = t.exposure_index(treated)?;
    let mut total = 0.0;
    for l in 0..t.n_l {
        let pl = t.p_l(l);
        if pl == 0.0 {
            continue;
        }
        let plt = t.p_la(l, at);
        if plt == 0.0 {
            return Err(OracleError::PositivityViolation {
                cell: format!("covariates #{l}, exposure {treated}"),
            });
        }
        for m in 0..t.n_m {
            let fm = t.p_lam(l, at, m) / plt;
            if fm == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for a in 0..t.n_a {
                let pla = t.p_la(l, a);
                if pla == 0.0 {
                    continue;
                }
                let ey = t.mean_y(l, a, m).ok_or_else(|| OracleError::PositivityViolation {
                    cell: format!("covariates #{l}, exposure {}, mediator {}", t.exposure[a], t.mediator[m]),
                })?;
                inner += ey * pla / pl;
            }
            total += pl * fm * inner;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Bernoulli,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    /// `p = expit(η)`
    #[default]
    Logit,
    /// `p = η`, which must stay in `[0, 1]`
    Identity,
}

/// One structural equation. Coefficient keys are products of parent names,
/// e.g. `"L1:L2"` or `"L2:(1-L1)"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Equation {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub link: Link,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub sd: Option<f64>,
    #[serde(default)]
    pub latent: bool,
}

/// A recursive structural model over Bernoulli and normal variables, listed
/// in causal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralModel {
    pub exposure: String,
    pub mediator: String,
    pub outcome: String,
    #[serde(rename = "equation")]
    pub equations: Vec<Equation>,
}

/// A coefficient times a product of factors of earlier variables.
type Monomial = (f64, Vec<(usize, Factor)>);

/// Equations resolved to variable indices.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    names: Vec<String>,
    kinds: Vec<Kind>,
    links: Vec<Link>,
    intercepts: Vec<f64>,
    terms: Vec<Vec<Monomial>>,
    sds: Vec<f64>,
    latent: Vec<bool>,
    exposure: usize,
    mediator: usize,
    outcome: usize,
}

impl StructuralModel {
    pub fn from_toml(text: &str) -> Result<Self, OracleError> {
        let model: Self = toml::from_str(text).map_err(|e| OracleError::InvalidModel(e.to_string()))?;
        model.compile()?;
        Ok(model)
    }

    pub fn compile(&self) -> Result<CompiledModel, OracleError> {
        let mut names: Vec<String> = Vec::new();
        let mut terms = Vec::new();
        for eq in &self.equations {
            if names.contains(&eq.name) {
                return Err(OracleError::InvalidModel(format!("`{}` defined twice", eq.name)));
            }
            let mut compiled = Vec::new();
            for (key, &coef) in &eq.coefficients {
                let term = parse_term(key)?;
                let factors = term
                    .factors()
                    .iter()
                    .map(|f| {
                        names
                            .iter()
                            .position(|n| n == f.name())
                            .map(|i| (i, f.clone()))
                            .ok_or_else(|| {
                                OracleError::InvalidModel(format!(
                                    "`{}` uses `{}` before it is defined",
                                    eq.name,
                                    f.name()
                                ))
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                compiled.push((coef, factors));
            }
            match (eq.kind, eq.sd) {
                (Kind::Normal, Some(sd)) if sd > 0.0 && sd.is_finite() => {}
                (Kind::Normal, _) => {
                    return Err(OracleError::InvalidModel(format!("`{}` needs a positive sd", eq.name)));
                }
                (Kind::Bernoulli, Some(_)) => {
                    return Err(OracleError::InvalidModel(format!("`{}`: sd is only for normal variables", eq.name)));
                }
                (Kind::Bernoulli, None) => {}
            }
            terms.push(compiled);
            names.push(eq.name.clone());
        }
        let find = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| OracleError::InvalidModel(format!("role variable `{n}` has no equation")))
        };
        let (exposure, mediator, outcome) = (find(&self.exposure)?, find(&self.mediator)?, find(&self.outcome)?);
        if self.equations[exposure].kind != Kind::Bernoulli {
            return Err(OracleError::InvalidModel("the exposure must be Bernoulli".into()));
        }
        for role in [exposure, mediator, outcome] {
            if self.equations[role].latent {
                return Err(OracleError::InvalidModel(format!("role variable `{}` cannot be latent", names[role])));
            }
        }
        Ok(CompiledModel {
            kinds: self.equations.iter().map(|e| e.kind).collect(),
            links: self.equations.iter().map(|e| e.link).collect(),
            intercepts: self.equations.iter().map(|e| e.intercept).collect(),
            sds: self.equations.iter().map(|e| e.sd.unwrap_or(0.0)).collect(),
            latent: self.equations.iter().map(|e| e.latent).collect(),
            names,
            terms,
            exposure,
            mediator,
            outcome,
        })
    }

    /// Observed covariates: non-latent variables other than the three roles.
    pub fn covariate_names(&self) -> Vec<String> {
        self.equations
            .iter()
            .filter(|e| !e.latent && ![&self.exposure, &self.mediator, &self.outcome].contains(&&e.name))
            .map(|e| e.name.clone())
            .collect()
    }
}

impl CompiledModel {
    /// Linear predictor of variable `v` given earlier values; when
    /// `mediator_exposure` is set it replaces the exposure in the mediator's
    /// equation only.
    fn eta(&self, v: usize, values: &[f64], mediator_exposure: Option<f64>) -> f64 {
        let value_of = |i: usize| match mediator_exposure {
            Some(level) if v == self.mediator && i == self.exposure => level,
            _ => values[i],
        };
        self.terms[v].iter().fold(self.intercepts[v], |acc, (coef, factors)| {
            acc + coef
                * factors.iter().fold(1.0, |prod, (i, f)| {
                    prod * match f {
                        Factor::Power { power, .. } => value_of(*i).powi(*power as i32),
                        Factor::Complement { .. } => 1.0 - value_of(*i),
                    }
                })
        })
    }

    /// Mean of variable `v` (its success probability if Bernoulli).
    fn mean(&self, v: usize, values: &[f64], mediator_exposure: Option<f64>) -> Result<f64, OracleError> {
        let eta = self.eta(v, values, mediator_exposure);
        match (self.kinds[v], self.links[v]) {
            (Kind::Normal, _) => Ok(eta),
            (Kind::Bernoulli, Link::Logit) => Ok(expit(eta)),
            (Kind::Bernoulli, Link::Identity) if (0.0..=1.0).contains(&eta) => Ok(eta),
            (Kind::Bernoulli, Link::Identity) => Err(OracleError::InvalidModel(format!(
                "`{}` has probability {eta} outside [0, 1]",
                self.names[v]
            ))),
        }
    }

    /// Draws one unit; returns all variable values in model order.
    fn draw<R: Rng>(&self, rng: &mut R, mediator_exposure: Option<f64>) -> Result<Vec<f64>, OracleError> {
        let mut values = vec![0.0; self.names.len()];
        for v in 0..self.names.len() {
            let mean = self.mean(v, &values, mediator_exposure)?;
            values[v] = match self.kinds[v] {
                Kind::Bernoulli => f64::from(u8::from(rng.gen::<f64>() < mean)),
                Kind::Normal => mean + self.sds[v] * rng.sample::<f64, _>(StandardNormal),
            };
        }
        Ok(values)
    }

    /// Sums `f(probability, values)` over every configuration of the
    /// Bernoulli variables other than `skip`.
    fn enumerate(
        &self,
        skip: Option<usize>,
        mediator_exposure: Option<f64>,
        mut visit: impl FnMut(f64, &[f64]) -> Result<(), OracleError>,
    ) -> Result<(), OracleError> {
        let vars: Vec<usize> = (0..self.names.len()).filter(|&v| Some(v) != skip).collect();
        if let Some(&v) = vars.iter().find(|&&v| self.kinds[v] == Kind::Normal) {
            return Err(OracleError::ContinuousVariable(self.names[v].clone()));
        }
        if vars.len() > 24 {
            return Err(OracleError::InvalidModel("too many variables to enumerate".into()));
        }
        let mut values = vec![0.0; self.names.len()];
        for config in 0..(1u64 << vars.len()) {
            let mut prob = 1.0;
            for (bit, &v) in vars.iter().enumerate() {
                let x = ((config >> bit) & 1) as f64;
                let p = self.mean(v, &values, mediator_exposure)?;
                values[v] = x;
                prob *= if x == 1.0 { p } else { 1.0 - p };
                if prob == 0.0 {
                    break;
                }
            }
            if prob > 0.0 {
                visit(prob, &values)?;
            }
        }
        Ok(())
    }
}

/// `E(Y^{a_M = treated})` by enumerating the structural model. The outcome
/// may be normal; every other variable must be Bernoulli.
pub fn interventional_mean_exact(model: &StructuralModel, treated: f64) -> Result<f64, OracleError> {
    let compiled = model.compile()?;
    // variables after the outcome cannot affect its mean
    let mut total = 0.0;
    compiled.enumerate(Some(compiled.outcome), Some(treated), |prob, values| {
        total += prob * compiled.mean(compiled.outcome, values, Some(treated))?;
        Ok(())
    })?;
    Ok(total)
}

/// Sums latent variables out of a fully Bernoulli model.
pub fn marginalize(model: &StructuralModel) -> Result<DiscreteLaw, OracleError> {
    let compiled = model.compile()?;
    let observed: Vec<usize> = (0..compiled.names.len()).filter(|&v| !compiled.latent[v]).collect();
    let mut probabilities = vec![0.0; 1 << observed.len()];
    compiled.enumerate(None, None, |prob, values| {
        let cell = observed.iter().fold(0usize, |acc, &v| acc * 2 + values[v] as usize);
        probabilities[cell] += prob;
        Ok(())
    })?;
    DiscreteLaw::new(
        observed.iter().map(|&v| compiled.names[v].clone()).collect(),
        vec![vec![0.0, 1.0]; observed.len()],
        probabilities,
        &model.exposure,
        &model.mediator,
        &model.outcome,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

const MC_CHUNK: usize = 1 << 16;

/// Sample mean of the intervened outcome over `draws` units. Chunks run in
/// parallel on independent streams; the result does not depend on the
/// number of threads.
pub fn interventional_mean_mc(
    model: &StructuralModel,
    treated: f64,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloEstimate, OracleError> {
    if draws < 2 {
        return Err(OracleError::InvalidModel("need at least two draws".into()));
    }
    let compiled = model.compile()?;
    let chunks = draws.div_ceil(MC_CHUNK);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, Purpose::MonteCarlo, &[c as u64]);
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut s = 0.0;
            let mut ss = 0.0;
            for _ in 0..len {
                let y = compiled.draw(&mut rng, Some(treated))?[compiled.outcome];
                s += y;
                ss += y * y;
            }
            Ok((s, ss))
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    let (s, ss) = sums.iter().fold((0.0, 0.0), |(a, b), (s, ss)| (a + s, b + ss));
    let n = draws as f64;
    let mean = s / n;
    let var = (ss - n * mean * mean) / (n - 1.0);
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var.max(0.0) / n).sqrt(),
        draws,
    })
}

/// Draws `n` observational units and keeps the observed variables.
pub fn sample_dataset<R: Rng>(model: &StructuralModel, n: usize, rng: &mut R, arms: Arms) -> Result<Dataset, OracleError> {
    let compiled = model.compile()?;
    let covariates: Vec<usize> = model
        .covariate_names()
        .iter()
        .map(|c| compiled.names.iter().position(|n| n == c).expect("covariate is defined"))
        .collect();
    let mut columns = vec![Vec::with_capacity(n); covariates.len()];
    let mut exposure = Vec::with_capacity(n);
    let mut mediator = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for _ in 0..n {
        let values = compiled.draw(rng, None)?;
        for (col, &v) in columns.iter_mut().zip(&covariates) {
            col.push(values[v]);
        }
        exposure.push(values[compiled.exposure] as i64);
        mediator.push(values[compiled.mediator]);
        outcome.push(values[compiled.outcome]);
    }
    let schema = Schema {
        exposure: model.exposure.clone(),
        mediator: model.mediator.clone(),
        outcome: model.outcome.clone(),
        covariates: model.covariate_names(),
        exposure_levels: Some(vec![0, 1]),
    };
    Dataset::new(&schema, columns, exposure, mediator, outcome, arms).map_err(|e| OracleError::InvalidModel(e.to_string()))
}

/// Both routes to the target for a discrete model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentificationCheck {
    pub frontdoor: f64,
    pub interventional: f64,
    pub gap: f64,
}

pub fn check_identification(model: &StructuralModel, treated: f64) -> Result<IdentificationCheck, OracleError> {
    let frontdoor = frontdoor_exact(&marginalize(model)?, treated)?;
    let interventional = interventional_mean_exact(model, treated)?;
    Ok(IdentificationCheck {
        frontdoor,
        interventional,
        gap: (frontdoor - interventional).abs(),
    })
}

/// Distinct values of a support list, sorted.
pub fn sorted_support(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.into_iter().map(f64::to_bits).collect();
    let mut out: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    out.sort_by(f64::total_cmp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
        exposure = "A"
        mediator = "M"
        outcome = "Y"

        [[equation]]
        name = "L"
        kind = "bernoulli"
        link = "identity"
        intercept = 0.4

        [[equation]]
        name = "A"
        kind = "bernoulli"
        intercept = -0.5
        coefficients = { L = 1.0 }

        [[equation]]
        name = "M"
        kind = "bernoulli"
        intercept = -1.0
        coefficients = { A = 2.0, L = 0.5 }

        [[equation]]
        name = "Y"
        kind = "bernoulli"
        intercept = -1.0
        coefficients = { M = 1.5, A = 0.5, L = -1.0, "A:M" = -0.7 }
    "#;

    #[test]
    fn hand_computed_frontdoor() {
        let model = StructuralModel::from_toml(TINY).unwrap();
        let pa = |l: f64| expit(-0.5 + l);
        let pm = |a: f64, l: f64| expit(-1.0 + 2.0 * a + 0.5 * l);
        let py = |a: f64, m: f64, l: f64| expit(-1.0 + 1.5 * m + 0.5 * a - l - 0.7 * a * m);
        let mut truth = 0.0;
        for (l, pl) in [(0.0, 0.6), (1.0, 0.4)] {
            for a in [0.0, 1.0] {
                let fa = if a == 1.0 { pa(l) } else { 1.0 - pa(l) };
                for m in [0.0, 1.0] {
                    let fm = if m == 1.0 { pm(1.0, l) } else { 1.0 - pm(1.0, l) };
                    truth += pl * fa * fm * py(a, m, l);
                }
            }
        }
        let check = check_identification(&model, 1.0).unwrap();
        assert!((check.interventional - truth).abs() < 1e-15);
        assert!(check.gap < 1e-15);
    }

    #[test]
    fn no_exposure_variation_gives_observational_mean() {
        let text = TINY.replace("intercept = -0.5\n        coefficients = { L = 1.0 }", "link = \"identity\"\n        intercept = 0.0");
        let model = StructuralModel::from_toml(&text).unwrap();
        let law = marginalize(&model).unwrap();
        let t = law.tables();
        let observational: f64 = (0..t.n_l)
            .flat_map(|l| (0..t.n_a).flat_map(move |a| (0..t.n_m).map(move |m| (l, a, m))))
            .map(|(l, a, m)| t.p_lam(l, a, m) * t.mean_y(l, a, m).unwrap_or(0.0))
            .sum();
        let intervened = interventional_mean_exact(&model, 0.0).unwrap();
        assert!((observational - intervened).abs() < 1e-15);
    }

    #[test]
    fn positivity_violation_is_reported() {
        let text = TINY.replace("intercept = -0.5\n        coefficients = { L = 1.0 }", "link = \"identity\"\n        intercept = 0.0\n        coefficients = { L = 1.0 }");
        let model = StructuralModel::from_toml(&text).unwrap();
        let err = frontdoor_exact(&marginalize(&model).unwrap(), 1.0).unwrap_err();
        assert!(matches!(err, OracleError::PositivityViolation { .. }));
    }

    #[test]
    fn rejects_forward_references_and_unknown_keys() {
        let bad = TINY.replace("coefficients = { L = 1.0 }", "coefficients = { M = 1.0 }");
        assert!(StructuralModel::from_toml(&bad).is_err());
        let bad = TINY.replace("link = \"identity\"", "lnik = \"identity\"");
        assert!(StructuralModel::from_toml(&bad).is_err());
    }

    #[test]
    fn continuous_variables_block_enumeration() {
        let text = TINY.replace("kind = \"bernoulli\"\n        link = \"identity\"\n        intercept = 0.4", "kind = \"normal\"\n        sd = 1.0");
        let model = StructuralModel::from_toml(&text).unwrap();
        assert!(matches!(interventional_mean_exact(&model, 1.0), Err(OracleError::ContinuousVariable(_))));
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let model = StructuralModel::from_toml(TINY).unwrap();
        let exact = interventional_mean_exact(&model, 1.0).unwrap();
        let mc = interventional_mean_mc(&model, 1.0, 200_000, 11).unwrap();
        assert!((mc.mean - exact).abs() < 4.0 * mc.std_error);
    }
}
