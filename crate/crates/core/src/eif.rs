//! Efficient influence function of the interventional mean.
//!
//! Every variant is a sum of per-control-level blocks:
//!
//! ```text
//! φ = I(a†)·Y − Ψ + Σ_c [ I(c)·ψ3_c + I(c)·W1_c·(Y − b0_c) + I(a†)·W2_c·(b0_c − h_c) + I(c)·(h_c − ψ3_c) ]
//! ```
//!
//! with `W2_c = P(c | L) / P(a† | L)` and `W1_c` either the propensity-ratio
//! form `P(a† | M, L)·P(c | L) / (P(c | M, L)·P(a† | L))` or the
//! density-ratio form `f(M | a†, L) / f(M | c, L)`. Without covariates the
//! conditional probabilities given `L` become marginal ones and `h_c = ψ3_c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{frontdoor_exact, DiscreteLaw, OracleError, Tables};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EifError {
    #[error("{what} = {value} must lie strictly inside (0, 1)")]
    InvalidProbability { what: &'static str, value: f64 },
    #[error("density ratio {0} must be finite and non-negative")]
    InvalidDensityRatio(f64),
    #[error("perturbation: {0}")]
    InvalidSubmodel(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Which representation of the mediator weight `W1` is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightForm {
    /// `P(a†|M,L) P(a◦|L) / (P(a◦|M,L) P(a†|L))`, from exposure models only.
    PropensityRatio,
    /// `f(M|a†,L) / f(M|a◦,L)`, from a mediator model.
    #[default]
    DensityRatio,
}

/// One control level's contribution at one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    /// The observation's exposure equals this control level.
    pub in_arm: bool,
    pub b0: f64,
    pub h_dagger: f64,
    pub psi3: f64,
    pub w1: f64,
    pub w2: f64,
}

/// Sum of the blocks' contributions; see the module docs.
pub fn eif_value(treated: bool, y: f64, blocks: &[Block], psi: f64) -> f64 {
    let it = f64::from(u8::from(treated));
    let mut phi = it * y - psi;
    for b in blocks {
        let ic = f64::from(u8::from(b.in_arm));
        phi += ic * b.psi3 + ic * b.w1 * (y - b.b0) + it * b.w2 * (b.b0 - b.h_dagger) + ic * (b.h_dagger - b.psi3);
    }
    phi
}

fn open_unit(what: &'static str, value: f64) -> Result<f64, EifError> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(EifError::InvalidProbability { what, value })
    }
}

/// Mediator-weight inputs at an observation for a binary exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MediatorWeight {
    /// `P(A = a† | M, L)`
    Propensity(f64),
    /// `f(M | a†, L) / f(M | a◦, L)`
    DensityRatio(f64),
}

/// Nuisance values at one observation `(L, A, M, Y)` for a binary exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowNuisance {
    pub b0: f64,
    pub h_dagger: f64,
    /// `P(A = a† | L)`
    pub p_treated_l: f64,
    pub mediator: MediatorWeight,
}

impl RowNuisance {
    /// `(W1, W2)` for the binary-exposure case.
    pub fn weights(&self) -> Result<(f64, f64), EifError> {
        let pt = open_unit("P(a†|L)", self.p_treated_l)?;
        let w2 = (1.0 - pt) / pt;
        let w1 = match self.mediator {
            MediatorWeight::Propensity(p) => {
                let p = open_unit("P(a†|M,L)", p)?;
                w2 * p / (1.0 - p)
            }
            MediatorWeight::DensityRatio(r) if r.is_finite() && r >= 0.0 => r,
            MediatorWeight::DensityRatio(r) => return Err(EifError::InvalidDensityRatio(r)),
        };
        Ok((w1, w2))
    }
}

/// Binary-exposure EIF with covariates.
pub fn eif_generalized(treated: bool, y: f64, row: &RowNuisance, psi3: f64, psi: f64) -> Result<f64, EifError> {
    let (w1, w2) = row.weights()?;
    let block = Block {
        in_arm: !treated,
        b0: row.b0,
        h_dagger: row.h_dagger,
        psi3,
        w1,
        w2,
    };
    Ok(eif_value(treated, y, &[block], psi))
}

/// Binary-exposure EIF without covariates. `p_treated` is `P(A = a†)`.
pub fn eif_nocov(
    treated: bool,
    y: f64,
    b0: f64,
    mediator: MediatorWeight,
    p_treated: f64,
    psi3: f64,
    psi: f64,
) -> Result<f64, EifError> {
    let row = RowNuisance {
        b0,
        h_dagger: psi3,
        p_treated_l: p_treated,
        mediator,
    };
    eif_generalized(treated, y, &row, psi3, psi)
}

/// Multi-level exposure: one block per control level.
pub fn eif_multilevel(treated: bool, y: f64, blocks: &[Block], psi: f64) -> f64 {
    eif_value(treated, y, blocks, psi)
}

/// `Σ φ_i² / n²`, the plug-in variance of a mean-zero influence function.
pub fn sandwich_variance(phi: &[f64]) -> f64 {
    let n = phi.len() as f64;
    phi.iter().map(|p| p * p).sum::<f64>() / (n * n)
}

/// True nuisance functions of a discrete law.
#[derive(Debug, Clone)]
pub struct ExactNuisances {
    pub tables: Tables,
    /// exposure index of `a†`
    pub treated: usize,
    /// exposure indices of the control levels
    pub controls: Vec<usize>,
    pub psi: f64,
    /// `[control][l][m]`
    pub b0: Vec<Vec<Vec<f64>>>,
    /// `[control][l]`
    pub h_dagger: Vec<Vec<f64>>,
    pub psi3: Vec<f64>,
}

impl ExactNuisances {
    /// Requires every `(l, a, m)` with `f(l) > 0` to have positive mass, and
    /// every exposure level to be either treated or a control.
    pub fn new(law: &DiscreteLaw, treated: f64, controls: &[f64]) -> Result<Self, EifError> {
        let t = law.tables();
        let at = t.exposure_index(treated)?;
        let cs = controls.iter().map(|&c| t.exposure_index(c)).collect::<Result<Vec<_>, _>>()?;
        if cs.len() + 1 != t.n_a || cs.contains(&at) {
            return Err(EifError::InvalidSubmodel("controls must be every level except the treated one".into()));
        }
        for l in 0..t.n_l {
            if t.p_l(l) == 0.0 {
                continue;
            }
            for a in 0..t.n_a {
                for m in 0..t.n_m {
                    if t.p_lam(l, a, m) == 0.0 {
                        return Err(OracleError::PositivityViolation {
                            cell: format!("covariates #{l}, exposure {}, mediator {}", t.exposure[a], t.mediator[m]),
                        }
                        .into());
                    }
                }
            }
        }
        let f_m = |l: usize, a: usize, m: usize| t.p_lam(l, a, m) / t.p_la(l, a);
        let mut b0 = Vec::new();
        let mut h_dagger = Vec::new();
        let mut psi3 = Vec::new();
        for &c in &cs {
            let b: Vec<Vec<f64>> = (0..t.n_l)
                .map(|l| (0..t.n_m).map(|m| t.mean_y(l, c, m).unwrap_or(0.0)).collect())
                .collect();
            let h: Vec<f64> = (0..t.n_l)
                .map(|l| {
                    if t.p_l(l) == 0.0 {
                        0.0
                    } else {
                        (0..t.n_m).map(|m| b[l][m] * f_m(l, at, m)).sum()
                    }
                })
                .collect();
            let pc = t.p_a(c);
            psi3.push((0..t.n_l).map(|l| h[l] * t.p_la(l, c) / pc).sum());
            b0.push(b);
            h_dagger.push(h);
        }
        let psi = frontdoor_exact(law, treated)?;
        Ok(Self {
            tables: t,
            treated: at,
            controls: cs,
            psi,
            b0,
            h_dagger,
            psi3,
        })
    }

    pub fn p_a_given_l(&self, l: usize, a: usize) -> f64 {
        self.tables.p_la(l, a) / self.tables.p_l(l)
    }

    pub fn p_a_given_ml(&self, l: usize, m: usize, a: usize) -> f64 {
        self.tables.p_lam(l, a, m) / self.tables.p_lm(l, m)
    }

    pub fn f_m(&self, l: usize, a: usize, m: usize) -> f64 {
        self.tables.p_lam(l, a, m) / self.tables.p_la(l, a)
    }

    /// Blocks at `(l, a, m)` using the true nuisances.
    pub fn blocks(&self, l: usize, a: usize, m: usize, form: WeightForm) -> Vec<Block> {
        let t = self.treated;
        self.controls
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let w2 = self.p_a_given_l(l, c) / self.p_a_given_l(l, t);
                let w1 = match form {
                    WeightForm::PropensityRatio => w2 * self.p_a_given_ml(l, m, t) / self.p_a_given_ml(l, m, c),
                    WeightForm::DensityRatio => self.f_m(l, t, m) / self.f_m(l, c, m),
                };
                Block {
                    in_arm: a == c,
                    b0: self.b0[k][l][m],
                    h_dagger: self.h_dagger[k][l],
                    psi3: self.psi3[k],
                    w1,
                    w2,
                }
            })
            .collect()
    }

    /// `φ` at every cell of `law` (cells with zero covariate mass give 0).
    pub fn eif_by_cell(&self, law: &DiscreteLaw, form: WeightForm) -> Vec<f64> {
        let r = law.roles();
        (0..law.probabilities().len())
            .map(|cell| {
                let idx = law.cell_indices(cell);
                let l = law.covariate_index(&idx);
                if self.tables.p_l(l) == 0.0 {
                    return 0.0;
                }
                let (a, m) = (idx[r.exposure], idx[r.mediator]);
                let y = law.supports()[r.outcome][idx[r.outcome]];
                eif_value(a == self.treated, y, &self.blocks(l, a, m, form), self.psi)
            })
            .collect()
    }
}

/// `E_P[φ]` under the law itself; zero up to rounding when the EIF is right.
pub fn eif_mean(law: &DiscreteLaw, treated: f64, controls: &[f64], form: WeightForm) -> Result<f64, EifError> {
    let exact = ExactNuisances::new(law, treated, controls)?;
    Ok(exact
        .eif_by_cell(law, form)
        .iter()
        .zip(law.probabilities())
        .map(|(phi, p)| phi * p)
        .sum())
}

/// A direction `S` for the submodel `p_t(o) = p(o)(1 + t S(o))`, with `E_p[S] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    score: Vec<f64>,
}

impl Perturbation {
    pub fn new(law: &DiscreteLaw, score: Vec<f64>) -> Result<Self, EifError> {
        if score.len() != law.probabilities().len() || score.iter().any(|s| !s.is_finite()) {
            return Err(EifError::InvalidSubmodel("score must be finite, one value per cell".into()));
        }
        let mean: f64 = score.iter().zip(law.probabilities()).map(|(s, p)| s * p).sum();
        if mean.abs() > 1e-12 {
            return Err(EifError::InvalidSubmodel(format!("score has mean {mean}")));
        }
        Ok(Self { score })
    }

    /// Centres an arbitrary bounded function into a score.
    pub fn centred(law: &DiscreteLaw, g: impl Fn(&[f64]) -> f64) -> Result<Self, EifError> {
        let raw: Vec<f64> = (0..law.probabilities().len()).map(|c| g(&law.cell_values(c))).collect();
        let mean: f64 = raw.iter().zip(law.probabilities()).map(|(s, p)| s * p).sum();
        Self::new(law, raw.iter().map(|s| s - mean).collect())
    }

    /// Tilts `f(m | a, l)` toward `m0` at one `(a, l)` configuration:
    /// `S = I(A = a, L = l)·(I(M = m0) − f(m0 | a, l))`.
    pub fn mediator_cell(law: &DiscreteLaw, a: usize, l: usize, m0: usize) -> Result<Self, EifError> {
        let t = law.tables();
        let r = law.roles();
        let f = t.p_lam(l, a, m0) / t.p_la(l, a);
        let score = (0..law.probabilities().len())
            .map(|cell| {
                let idx = law.cell_indices(cell);
                if idx[r.exposure] == a && law.covariate_index(&idx) == l {
                    f64::from(u8::from(idx[r.mediator] == m0)) - f
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(law, score)
    }

    pub fn score(&self) -> &[f64] {
        &self.score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathwiseCheck {
    pub step: f64,
    /// central difference of `Ψ(p_t)` at `t = 0`
    pub derivative: f64,
    /// `E_p[φ S]`
    pub inner_product: f64,
    pub gap: f64,
}

/// Compares the numerical pathwise derivative with `E[φ S]`.
pub fn verify_pathwise_derivative(
    law: &DiscreteLaw,
    treated: f64,
    controls: &[f64],
    direction: &Perturbation,
    step: f64,
    form: WeightForm,
) -> Result<PathwiseCheck, EifError> {
    let bound = direction.score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if !(step > 0.0 && step * bound < 1.0) {
        return Err(EifError::InvalidSubmodel(format!(
            "step {step} leaves the model (max |S| = {bound})"
        )));
    }
    let tilt = |t: f64| -> Result<f64, EifError> {
        let probabilities = law
            .probabilities()
            .iter()
            .zip(&direction.score)
            .map(|(p, s)| p * (1.0 + t * s))
            .collect();
        Ok(frontdoor_exact(&law.with_probabilities(probabilities)?, treated)?)
    };
    let derivative = (tilt(step)? - tilt(-step)?) / (2.0 * step);
    let exact = ExactNuisances::new(law, treated, controls)?;
    let inner_product = exact
        .eif_by_cell(law, form)
        .iter()
        .zip(law.probabilities())
        .zip(&direction.score)
        .map(|((phi, p), s)| phi * p * s)
        .sum();
    Ok(PathwiseCheck {
        step,
        derivative,
        inner_product,
        gap: (derivative - inner_product).abs(),
    })
}
