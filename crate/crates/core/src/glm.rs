//! Weighted generalized linear models fitted by Newton/IRLS.
//!
//! Binomial-logit accepts fractional responses in `[0, 1]` (quasi-binomial),
//! which the pseudo-outcome regressions need. Convergence uses the relative
//! deviance change `|Δdev| / (|dev| + 0.1)`; the `+ 0.1` keeps the test
//! meaningful when separation drives the deviance to zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignMatrix;

/// Fitted probabilities are clipped to this distance from 0 and 1 inside the
/// working weights only.
const PROB_CLIP: f64 = 1e-12;

/// Fitted means closer than this to 0 or 1 count as pinned by separation.
const PINNED: f64 = 1e-8;

/// Binomial deviance per unit of total weight below which the fit is treated
/// as completely separated.
const SEPARATED_DEVIANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("weights must be finite and non-negative with at least one positive")]
    InvalidWeights,
    #[error("response value {value} at row {row} is outside the family's range")]
    InvalidResponse { row: usize, value: f64 },
    #[error("design is rank deficient; aliased columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("no convergence after {iterations} iterations (last relative deviance change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },
    #[error("score has no finite root; the estimate diverges toward {}", if *direction > 0 { "+inf" } else { "-inf" })]
    SeparationSuspected { direction: i8 },
    #[error("score equation has no root")]
    NoRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BinomialLogit,
    GaussianIdentity,
}

impl Family {
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::BinomialLogit => expit(eta),
            Family::GaussianIdentity => eta,
        }
    }

    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::BinomialLogit => logit(mu),
            Family::GaussianIdentity => mu,
        }
    }

    fn check_response(self, y: f64) -> bool {
        match self {
            Family::BinomialLogit => (0.0..=1.0).contains(&y),
            Family::GaussianIdentity => y.is_finite(),
        }
    }

    /// Unit deviance as a function of the linear predictor; finite for all
    /// finite `eta`.
    fn unit_deviance(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::BinomialLogit => {
                let saturated = xlogx(y) + xlogx(1.0 - y);
                2.0 * (saturated - y * eta + softplus(eta))
            }
            Family::GaussianIdentity => (y - eta) * (y - eta),
        }
    }
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    /// Any aliased column is an error.
    #[default]
    Error,
    /// Aliased columns are dropped (coefficient fixed at 0) and reported.
    DropAliased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
    pub rank_policy: RankPolicy,
    /// Relative residual norm below which a column counts as aliased.
    pub alias_tolerance: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-9,
            max_halvings: 10,
            rank_policy: RankPolicy::Error,
            alias_tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub family: Family,
    pub names: Vec<String>,
    /// Aliased columns carry 0.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub final_change: f64,
    /// False when every weight equals 1.
    pub weighted: bool,
    pub aliased: Vec<String>,
    /// Some fitted probability lies within `PINNED` of 0 or 1.
    pub separation: bool,
    /// `max_j |Σ w_i x_ij (y_i − μ_i)|` over non-aliased columns.
    pub score_max_abs: f64,
    /// Set when every positively weighted response equals this value and the
    /// design has an intercept; predictions are then exactly this value.
    pub constant: Option<f64>,
}

impl FitResult {
    pub fn linear_predictor(&self, design: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
        if design.n_cols() != self.coefficients.len() {
            return Err(GlmError::DimensionMismatch {
                what: "design columns",
                expected: self.coefficients.len(),
                got: design.n_cols(),
            });
        }
        Ok(design.mul_vec(&self.coefficients))
    }
}

/// Fitted means for every row of `design`.
pub fn predict(fit: &FitResult, design: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
    let eta = fit.linear_predictor(design)?;
    Ok(match fit.constant {
        Some(c) => vec![c; eta.len()],
        None => eta.into_iter().map(|e| fit.family.inverse_link(e)).collect(),
    })
}

fn validate(design: &DesignMatrix, response: &[f64], weights: &[f64]) -> Result<(), GlmError> {
    let n = design.n_rows();
    for (what, len) in [("response", response.len()), ("weights", weights.len())] {
        if len != n {
            return Err(GlmError::DimensionMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !weights.iter().any(|w| *w > 0.0) {
        return Err(GlmError::InvalidWeights);
    }
    Ok(())
}

/// Greedy modified Gram–Schmidt on `sqrt(w)·X`; returns the indices of
/// columns that are (numerically) linear combinations of earlier ones.
fn aliased_columns(design: &DesignMatrix, weights: &[f64], tolerance: f64) -> Vec<usize> {
    let n = design.n_rows();
    let p = design.n_cols();
    let root_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..p {
        let mut v: Vec<f64> = (0..n).map(|i| root_w[i] * design.get(i, j)).collect();
        let original = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let residual = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if original == 0.0 || residual <= tolerance * original {
            aliased.push(j);
        } else {
            v.iter_mut().for_each(|x| *x /= residual);
            basis.push(v);
        }
    }
    aliased
}

struct Active {
    /// indices into the full design columns
    kept: Vec<usize>,
    rows: Vec<usize>,
}

impl Active {
    fn x(&self, design: &DesignMatrix, i: usize, k: usize) -> f64 {
        design.get(i, self.kept[k])
    }
}

/// Fits a weighted GLM. Rows with zero weight are ignored.
pub fn fit_weighted(
    design: &DesignMatrix,
    response: &[f64],
    weights: &[f64],
    family: Family,
    options: &GlmOptions,
) -> Result<FitResult, GlmError> {
    validate(design, response, weights)?;
    let rows: Vec<usize> = (0..design.n_rows()).filter(|&i| weights[i] > 0.0).collect();
    for &i in &rows {
        if !family.check_response(response[i]) {
            return Err(GlmError::InvalidResponse {
                row: i,
                value: response[i],
            });
        }
    }
    let alias = aliased_columns(design, weights, options.alias_tolerance);
    if !alias.is_empty() && options.rank_policy == RankPolicy::Error {
        return Err(GlmError::RankDeficient {
            columns: alias.iter().map(|&j| design.names()[j].clone()).collect(),
        });
    }
    let p = design.n_cols();
    let active = Active {
        kept: (0..p).filter(|j| !alias.contains(j)).collect(),
        rows,
    };
    let weighted = weights.iter().any(|&w| w != 1.0);
    let total_weight: f64 = active.rows.iter().map(|&i| weights[i]).sum();
    let aliased_names: Vec<String> = alias.iter().map(|&j| design.names()[j].clone()).collect();

    let first = response[active.rows[0]];
    let intercept_kept = design.has_intercept() && active.kept.first() == Some(&0);
    if intercept_kept && active.rows.iter().all(|&i| response[i] == first) {
        let mut coefficients = vec![0.0; p];
        coefficients[0] = family.link(first);
        return Ok(FitResult {
            family,
            names: design.names().to_vec(),
            coefficients,
            converged: true,
            iterations: 0,
            deviance: 0.0,
            final_change: 0.0,
            weighted,
            aliased: aliased_names,
            separation: family == Family::BinomialLogit && (first == 0.0 || first == 1.0),
            score_max_abs: 0.0,
            constant: Some(first),
        });
    }

    let k = active.kept.len();
    let eta_of = |beta: &[f64]| -> Vec<f64> {
        active
            .rows
            .iter()
            .map(|&i| (0..k).map(|c| active.x(design, i, c) * beta[c]).sum())
            .collect()
    };
    let deviance_of = |eta: &[f64]| -> f64 {
        active
            .rows
            .iter()
            .zip(eta)
            .map(|(&i, &e)| weights[i] * family.unit_deviance(response[i], e))
            .sum()
    };
    // Weighted least squares on the working response at eta; from a beta with
    // X·beta = eta this is one Newton step.
    let wls = |eta: &[f64]| -> Result<Vec<f64>, GlmError> {
        let mut hessian = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for (r, &i) in active.rows.iter().enumerate() {
            let mu = family.inverse_link(eta[r]);
            let var = match family {
                Family::BinomialLogit => {
                    let m = mu.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    m * (1.0 - m)
                }
                Family::GaussianIdentity => 1.0,
            };
            let ww = weights[i] * var;
            let working = ww * eta[r] + weights[i] * (response[i] - mu);
            for a in 0..k {
                let xa = active.x(design, i, a);
                rhs[a] += xa * working;
                for b in 0..=a {
                    hessian[(a, b)] += ww * xa * active.x(design, i, b);
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hessian[(b, a)] = hessian[(a, b)];
            }
        }
        let chol = hessian.cholesky().ok_or_else(|| GlmError::RankDeficient {
            columns: active.kept.iter().map(|&j| design.names()[j].clone()).collect(),
        })?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    };
    let newton = |beta: &[f64], eta: &[f64]| -> Result<Vec<f64>, GlmError> { Ok(wls(eta)?.iter().zip(beta).map(|(n, b)| n - b).collect()) };

    // first iteration from per-row starting means (y·w + 1/2)/(w + 1), as in R
    let start: Vec<f64> = active
        .rows
        .iter()
        .map(|&i| match family {
            Family::BinomialLogit => logit((weights[i] * response[i] + 0.5) / (weights[i] + 1.0)),
            Family::GaussianIdentity => response[i],
        })
        .collect();
    let mut beta = wls(&start)?;

    let mut eta = eta_of(&beta);
    let mut deviance = deviance_of(&eta);
    let gaussian = family == Family::GaussianIdentity;
    let mut converged = gaussian;
    let mut change = if gaussian { 0.0 } else { f64::INFINITY };
    let mut iterations = 1;
    let mut last_step = f64::INFINITY;

    let pinned = |eta: &[f64]| !gaussian && eta.iter().any(|&e| !(PINNED..=1.0 - PINNED).contains(&expit(e)));

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        // vanishing working weights at pinned rows can make the system singular
        let step = match newton(&beta, &eta) {
            Ok(step) => step,
            Err(_) if pinned(&eta) => break,
            Err(e) => return Err(e),
        };
        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_eta;
        let mut cand_dev;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            cand_eta = eta_of(&candidate);
            cand_dev = deviance_of(&cand_eta);
            if cand_dev.is_finite() && cand_dev <= deviance * (1.0 + 1e-12) + 1e-12 {
                break;
            }
            if halvings >= options.max_halvings {
                // no descent left at working precision
                converged = true;
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        if converged {
            change = 0.0;
            last_step = 0.0;
            break;
        }
        change = (cand_dev - deviance).abs() / (cand_dev.abs() + 0.1);
        last_step = step.iter().fold(0.0f64, |m, s| m.max((scale * s).abs()));
        beta = candidate;
        eta = cand_eta;
        deviance = cand_dev;
        // a vanishing binomial deviance means complete separation: coefficients
        // diverge while fitted means are already pinned at 0/1
        converged = change < options.tolerance || (!gaussian && deviance < SEPARATED_DEVIANCE * total_weight);
    }
    // Under quasi-complete separation the coefficients keep diverging while
    // the pinned means stay put; such a fit is returned unconverged and flagged.
    if !converged && !pinned(&eta) {
        return Err(GlmError::NonConvergence { iterations, change });
    }
    // Newton converges quadratically near an interior optimum; a few extra steps
    // take the coefficients to working precision. Skipped under separation,
    // where steps stay O(1).
    let mut polish = 0;
    while last_step < 1e-2 && last_step > 1e-13 && polish < 3 {
        let Ok(step) = newton(&beta, &eta) else { break };
        let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
        let cand_eta = eta_of(&candidate);
        let cand_dev = deviance_of(&cand_eta);
        if !(cand_dev.is_finite() && cand_dev <= deviance * (1.0 + 1e-12) + 1e-12) {
            break;
        }
        last_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        beta = candidate;
        eta = cand_eta;
        deviance = cand_dev;
        polish += 1;
    }

    let mut coefficients = vec![0.0; p];
    for (c, &j) in active.kept.iter().enumerate() {
        coefficients[j] = beta[c];
    }
    let mut score = vec![0.0; k];
    let mut separation = false;
    for (r, &i) in active.rows.iter().enumerate() {
        let mu = family.inverse_link(eta[r]);
        if family == Family::BinomialLogit && !(PINNED..=1.0 - PINNED).contains(&mu) {
            separation = true;
        }
        for (c, s) in score.iter_mut().enumerate() {
            *s += weights[i] * active.x(design, i, c) * (response[i] - mu);
        }
    }
    Ok(FitResult {
        family,
        names: design.names().to_vec(),
        coefficients,
        converged,
        iterations,
        deviance,
        final_change: change,
        weighted,
        aliased: aliased_names,
        separation,
        score_max_abs: score.iter().fold(0.0f64, |m, s| m.max(s.abs())),
        constant: None,
    })
}

/// Solves `Σ w_i (y_i − g⁻¹(o_i + δ)) = 0` for the scalar `δ`.
pub fn fit_offset_intercept(offset: &[f64], response: &[f64], weights: &[f64], family: Family) -> Result<f64, GlmError> {
    fit_offset_covariate(offset, &vec![1.0; offset.len()], response, weights, family)
}

/// Solves `Σ w_i c_i (y_i − g⁻¹(o_i + ν c_i)) = 0` for the scalar `ν`.
///
/// Offsets may be infinite (a fitted probability of exactly 0 or 1); such
/// rows keep their mean whatever `ν` is. The score is non-increasing in `ν`.
pub fn fit_offset_covariate(
    offset: &[f64],
    covariate: &[f64],
    response: &[f64],
    weights: &[f64],
    family: Family,
) -> Result<f64, GlmError> {
    let n = offset.len();
    for (what, len) in [("covariate", covariate.len()), ("response", response.len()), ("weights", weights.len())] {
        if len != n {
            return Err(GlmError::DimensionMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(GlmError::InvalidWeights);
    }
    let rows: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0 && covariate[i] != 0.0).collect();
    if rows.is_empty() {
        return Ok(0.0);
    }
    for &i in &rows {
        if !family.check_response(response[i]) {
            return Err(GlmError::InvalidResponse {
                row: i,
                value: response[i],
            });
        }
    }

    if family == Family::GaussianIdentity {
        let num: f64 = rows.iter().map(|&i| weights[i] * covariate[i] * (response[i] - offset[i])).sum();
        let den: f64 = rows.iter().map(|&i| weights[i] * covariate[i] * covariate[i]).sum();
        return Ok(num / den);
    }

    let score = |nu: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for &i in &rows {
            let mu = expit(offset[i] + nu * covariate[i]);
            s += weights[i] * covariate[i] * (response[i] - mu);
            ds -= weights[i] * covariate[i] * covariate[i] * mu * (1.0 - mu);
        }
        (s, ds)
    };
    let limit = |direction: f64| -> f64 {
        rows.iter()
            .map(|&i| {
                let mu = if offset[i].is_infinite() {
                    expit(offset[i])
                } else if direction * covariate[i] > 0.0 {
                    1.0
                } else {
                    0.0
                };
                weights[i] * covariate[i] * (response[i] - mu)
            })
            .sum()
    };
    let scale: f64 = rows.iter().map(|&i| (weights[i] * covariate[i]).abs()).sum();
    let tol = 1e-13 * scale;
    let (upper, lower) = (limit(1.0), limit(-1.0));
    if (lower - upper).abs() <= tol {
        // score does not depend on nu
        return if score(0.0).0.abs() <= tol.max(1e-12) {
            Ok(0.0)
        } else {
            Err(GlmError::NoRoot)
        };
    }
    if upper >= -tol {
        return Err(GlmError::SeparationSuspected { direction: 1 });
    }
    if lower <= tol {
        return Err(GlmError::SeparationSuspected { direction: -1 });
    }

    let (s0, _) = score(0.0);
    if s0.abs() <= tol {
        return Ok(0.0);
    }
    // bracket the root
    let (mut lo, mut hi) = (0.0, 0.0);
    let mut width = 1.0;
    if s0 > 0.0 {
        loop {
            hi = width;
            if score(hi).0 < 0.0 {
                break;
            }
            lo = hi;
            width *= 2.0;
            if width > 1e12 {
                return Err(GlmError::SeparationSuspected { direction: 1 });
            }
        }
    } else {
        loop {
            lo = -width;
            if score(lo).0 > 0.0 {
                break;
            }
            hi = lo;
            width *= 2.0;
            if width > 1e12 {
                return Err(GlmError::SeparationSuspected { direction: -1 });
            }
        }
    }
    // safeguarded Newton
    let mut nu = 0.5 * (lo + hi);
    for iteration in 0..200 {
        let (s, ds) = score(nu);
        if s.abs() <= tol {
            return Ok(nu);
        }
        if s > 0.0 {
            lo = nu;
        } else {
            hi = nu;
        }
        if hi - lo <= 1e-15 * (1.0 + nu.abs()) {
            return Ok(nu);
        }
        let newton = nu - s / ds;
        nu = if ds < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if iteration == 199 {
            return Err(GlmError::NonConvergence {
                iterations: 200,
                change: s.abs(),
            });
        }
    }
    Ok(nu)
}

/// Baseline-category multinomial logit; class 0 is the reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultinomialFit {
    pub n_classes: usize,
    pub names: Vec<String>,
    /// One coefficient vector per non-reference class.
    pub coefficients: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub aliased: Vec<String>,
    pub separation: bool,
    pub score_max_abs: f64,
}

impl MultinomialFit {
    /// Row-wise class probabilities.
    pub fn predict_proba(&self, design: &DesignMatrix) -> Result<Vec<Vec<f64>>, GlmError> {
        if design.n_cols() != self.names.len() {
            return Err(GlmError::DimensionMismatch {
                what: "design columns",
                expected: self.names.len(),
                got: design.n_cols(),
            });
        }
        Ok((0..design.n_rows())
            .map(|i| {
                let x = design.row(i);
                let etas: Vec<f64> = self
                    .coefficients
                    .iter()
                    .map(|b| b.iter().zip(x).map(|(b, x)| b * x).sum())
                    .collect();
                softmax_with_reference(&etas)
            })
            .collect())
    }
}

fn softmax_with_reference(etas: &[f64]) -> Vec<f64> {
    let max = etas.iter().copied().fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(etas.len() + 1);
    out.push((-max).exp());
    out.extend(etas.iter().map(|e| (e - max).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Fits a weighted baseline-category logit model. `classes[i]` is in
/// `0..n_classes`.
pub fn fit_multinomial(
    design: &DesignMatrix,
    classes: &[usize],
    n_classes: usize,
    weights: &[f64],
    options: &GlmOptions,
) -> Result<MultinomialFit, GlmError> {
    let n = design.n_rows();
    if classes.len() != n {
        return Err(GlmError::DimensionMismatch {
            what: "classes",
            expected: n,
            got: classes.len(),
        });
    }
    validate(design, &vec![0.0; n], weights)?;
    if let Some(row) = classes.iter().position(|&c| c >= n_classes) {
        return Err(GlmError::InvalidResponse {
            row,
            value: classes[row] as f64,
        });
    }
    let alias = aliased_columns(design, weights, options.alias_tolerance);
    if !alias.is_empty() && options.rank_policy == RankPolicy::Error {
        return Err(GlmError::RankDeficient {
            columns: alias.iter().map(|&j| design.names()[j].clone()).collect(),
        });
    }
    let p = design.n_cols();
    let active = Active {
        kept: (0..p).filter(|j| !alias.contains(j)).collect(),
        rows: (0..n).filter(|&i| weights[i] > 0.0).collect(),
    };
    let k = active.kept.len();
    let free = n_classes - 1;
    let dim = k * free;
    let intercept_kept = design.has_intercept() && active.kept.first() == Some(&0);

    let mut beta = vec![0.0; dim];
    if intercept_kept {
        let total: f64 = active.rows.iter().map(|&i| weights[i]).sum();
        let share = |c: usize| -> f64 {
            let s: f64 = active.rows.iter().filter(|&&i| classes[i] == c).map(|&i| weights[i]).sum();
            (s / total).clamp(1e-4, 1.0)
        };
        let base = share(0);
        for c in 1..n_classes {
            beta[(c - 1) * k] = (share(c) / base).ln();
        }
    }

    let probs_of = |beta: &[f64]| -> Vec<Vec<f64>> {
        active
            .rows
            .iter()
            .map(|&i| {
                let etas: Vec<f64> = (0..free)
                    .map(|c| (0..k).map(|a| active.x(design, i, a) * beta[c * k + a]).sum())
                    .collect();
                softmax_with_reference(&etas)
            })
            .collect()
    };
    let deviance_of = |probs: &[Vec<f64>]| -> f64 {
        active
            .rows
            .iter()
            .zip(probs)
            .map(|(&i, p)| -2.0 * weights[i] * p[classes[i]].max(f64::MIN_POSITIVE).ln())
            .sum()
    };
    let newton = |probs: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<f64>), GlmError> {
        let mut hessian = DMatrix::<f64>::zeros(dim, dim);
        let mut score = DVector::<f64>::zeros(dim);
        for (r, &i) in active.rows.iter().enumerate() {
            let p: Vec<f64> = probs[r].iter().map(|q| q.clamp(PROB_CLIP, 1.0 - PROB_CLIP)).collect();
            for c in 0..free {
                let y = f64::from(u8::from(classes[i] == c + 1));
                let resid = weights[i] * (y - probs[r][c + 1]);
                for a in 0..k {
                    score[c * k + a] += active.x(design, i, a) * resid;
                }
                for d in 0..free {
                    let v = if c == d { p[c + 1] * (1.0 - p[c + 1]) } else { -p[c + 1] * p[d + 1] };
                    let wv = weights[i] * v;
                    for a in 0..k {
                        let xa = active.x(design, i, a);
                        for b in 0..k {
                            hessian[(c * k + a, d * k + b)] += wv * xa * active.x(design, i, b);
                        }
                    }
                }
            }
        }
        let chol = hessian.clone().cholesky().ok_or_else(|| GlmError::RankDeficient {
            columns: active.kept.iter().map(|&j| design.names()[j].clone()).collect(),
        })?;
        Ok((chol.solve(&score).iter().copied().collect(), score.iter().copied().collect()))
    };

    let mut probs = probs_of(&beta);
    let mut deviance = deviance_of(&probs);
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let (step, _) = newton(&probs)?;
        let mut scale = 1.0;
        let mut halvings = 0;
        let (candidate, cand_probs, cand_dev) = loop {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_probs = probs_of(&candidate);
            let cand_dev = deviance_of(&cand_probs);
            if (cand_dev.is_finite() && cand_dev <= deviance * (1.0 + 1e-12) + 1e-12) || halvings >= options.max_halvings {
                break (candidate, cand_probs, cand_dev);
            }
            scale *= 0.5;
            halvings += 1;
        };
        change = (cand_dev - deviance).abs() / (cand_dev.abs() + 0.1);
        last_step = step.iter().fold(0.0f64, |m, s| m.max((scale * s).abs()));
        beta = candidate;
        probs = cand_probs;
        deviance = cand_dev;
        converged = change < options.tolerance;
    }
    if !converged {
        return Err(GlmError::NonConvergence { iterations, change });
    }
    let mut polish = 0;
    while last_step < 1e-2 && last_step > 1e-13 && polish < 3 {
        let (step, _) = newton(&probs)?;
        let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
        let cand_probs = probs_of(&candidate);
        let cand_dev = deviance_of(&cand_probs);
        if !(cand_dev.is_finite() && cand_dev <= deviance * (1.0 + 1e-12) + 1e-12) {
            break;
        }
        last_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        beta = candidate;
        probs = cand_probs;
        deviance = cand_dev;
        polish += 1;
    }
    let (_, score) = newton(&probs)?;
    let separation = probs.iter().flatten().any(|&q| q < PINNED);
    let coefficients = (0..free)
        .map(|c| {
            let mut full = vec![0.0; p];
            for (a, &j) in active.kept.iter().enumerate() {
                full[j] = beta[c * k + a];
            }
            full
        })
        .collect();
    Ok(MultinomialFit {
        n_classes,
        names: design.names().to_vec(),
        coefficients,
        converged,
        iterations,
        deviance,
        aliased: alias.iter().map(|&j| design.names()[j].clone()).collect(),
        separation,
        score_max_abs: score.iter().fold(0.0f64, |m, s| m.max(s.abs())),
    })
}
