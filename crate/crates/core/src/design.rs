//! Model formulas and design matrices.
//!
//! Formula grammar, whitespace-insensitive:
//!
//! ```text
//! formula := item ("+" item)*
//! item    := "1" | "0" | product ("*" product)*
//! product := factor (":" factor)*
//! factor  := name | name "^" power | "(1-" name ")"
//! ```
//!
//! `0` drops the intercept. `a*b` expands to `a + b + a:b` (every non-empty
//! sub-product). `A` and `M` always resolve to the exposure and mediator
//! columns, as do their dataset column names. A term containing the exposure
//! expands to one column per non-reference level.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::glm::Family;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("formula `{formula}`: {reason}")]
    Parse { formula: String, reason: String },
    #[error("unknown variable `{0}` in model formula")]
    UnknownTerm(String),
    #[error("term `{0}` appears more than once")]
    DuplicateTerm(String),
    #[error("`(1-{0})` needs a binary exposure when applied to the exposure")]
    ComplementOfMultilevelExposure(String),
    #[error("design column `{column}` is non-finite at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("model formula references `{0}`, which this nuisance may not condition on")]
    ForbiddenVariable(String),
}

/// The variable a nuisance regression predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseRole {
    Exposure,
    Mediator,
    Outcome,
    PseudoOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Factor {
    Power { name: String, power: u32 },
    /// `1 - name`
    Complement { name: String },
}

impl Factor {
    pub fn name(&self) -> &str {
        match self {
            Factor::Power { name, .. } | Factor::Complement { name } => name,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Power { name, power: 1 } => write!(f, "{name}"),
            Factor::Power { name, power } => write!(f, "{name}^{power}"),
            Factor::Complement { name } => write!(f, "(1-{name})"),
        }
    }
}

/// A product of factors in canonical order; repeated powers are merged.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Term(Vec<Factor>);

impl Term {
    pub fn new(factors: Vec<Factor>) -> Self {
        let mut powers: BTreeMap<String, u32> = BTreeMap::new();
        let mut rest = Vec::new();
        for factor in factors {
            match factor {
                Factor::Power { name, power } => *powers.entry(name).or_default() += power,
                other => rest.push(other),
            }
        }
        let mut all: Vec<Factor> = powers
            .into_iter()
            .map(|(name, power)| Factor::Power { name, power })
            .chain(rest)
            .collect();
        all.sort();
        Term(all)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.0
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(":"))
    }
}

/// A GLM specification for one nuisance function.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub intercept: bool,
    pub terms: Vec<Term>,
    pub role: ResponseRole,
}

impl ModelSpec {
    pub fn parse(formula: &str, family: Family, role: ResponseRole) -> Result<Self, DesignError> {
        let err = |reason: &str| DesignError::Parse {
            formula: formula.to_string(),
            reason: reason.to_string(),
        };
        let mut intercept = true;
        let mut terms: Vec<Term> = Vec::new();
        let compact: String = formula.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(err("empty formula"));
        }
        for item in compact.split('+') {
            match item {
                "" => return Err(err("empty term")),
                "1" => continue,
                "0" => {
                    intercept = false;
                    continue;
                }
                _ => {}
            }
            let products = item
                .split('*')
                .map(|p| parse_product(p).map_err(|r| err(&r)))
                .collect::<Result<Vec<_>, _>>()?;
            // every non-empty subset of the crossed products, in subset-size order
            let k = products.len();
            let mut subsets: Vec<u32> = (1..(1u32 << k)).collect();
            subsets.sort_by_key(|s| (s.count_ones(), *s));
            for subset in subsets {
                let factors = (0..k)
                    .filter(|j| subset & (1 << j) != 0)
                    .flat_map(|j| products[j].iter().cloned())
                    .collect();
                let term = Term::new(factors);
                if terms.contains(&term) {
                    if k == 1 {
                        return Err(DesignError::DuplicateTerm(term.to_string()));
                    }
                    continue;
                }
                terms.push(term);
            }
        }
        Ok(Self {
            family,
            intercept,
            terms,
            role,
        })
    }

    /// Intercept-only specification.
    pub fn intercept_only(family: Family, role: ResponseRole) -> Self {
        Self {
            family,
            intercept: true,
            terms: Vec::new(),
            role,
        }
    }

    pub fn formula(&self) -> String {
        let mut parts = vec![if self.intercept { "1" } else { "0" }.to_string()];
        parts.extend(self.terms.iter().map(ToString::to_string));
        parts.join(" + ")
    }

    /// Variable names referenced anywhere in the formula.
    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().flat_map(|t| t.factors().iter().map(Factor::name))
    }

    pub fn references(&self, data: &Dataset, role: Variable) -> bool {
        self.variables().any(|name| resolve(data, name) == Ok(role.as_resolved()))
    }

    /// Fails if the formula uses a variable outside `allowed`.
    pub fn check_allowed(&self, data: &Dataset, allowed: &[Variable]) -> Result<(), DesignError> {
        for name in self.variables() {
            let resolved = resolve(data, name)?;
            let ok = allowed.iter().any(|v| v.as_resolved() == resolved);
            if !ok {
                return Err(DesignError::ForbiddenVariable(name.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.formula())
    }
}

/// Parses a single `:`-product such as `L1:L2^2:(1-L3)`.
pub fn parse_term(text: &str) -> Result<Term, DesignError> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    parse_product(&compact).map(Term::new).map_err(|reason| DesignError::Parse {
        formula: text.to_string(),
        reason,
    })
}

fn parse_product(text: &str) -> Result<Vec<Factor>, String> {
    text.split(':').map(parse_factor).collect()
}

fn parse_factor(text: &str) -> Result<Factor, String> {
    if let Some(inner) = text.strip_prefix("(1-").and_then(|t| t.strip_suffix(')')) {
        check_name(inner)?;
        return Ok(Factor::Complement {
            name: inner.to_string(),
        });
    }
    let (name, power) = match text.split_once('^') {
        Some((name, p)) => {
            let power: u32 = p.parse().map_err(|_| format!("bad power `{p}`"))?;
            if power == 0 {
                return Err("power must be positive".into());
            }
            (name, power)
        }
        None => (text, 1),
    };
    check_name(name)?;
    Ok(Factor::Power {
        name: name.to_string(),
        power,
    })
}

fn check_name(name: &str) -> Result<(), String> {
    let valid = !name.is_empty()
        && name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
        && !name.chars().next().is_some_and(|c| c.is_ascii_digit());
    if valid {
        Ok(())
    } else {
        Err(format!("invalid variable name `{name}`"))
    }
}

/// Role-level variable kinds a formula may refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Exposure,
    Mediator,
    Covariates,
}

impl Variable {
    fn as_resolved(self) -> Resolved {
        match self {
            Variable::Exposure => Resolved::Exposure,
            Variable::Mediator => Resolved::Mediator,
            Variable::Covariates => Resolved::Covariate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resolved {
    Exposure,
    Mediator,
    Covariate,
}

fn resolve(data: &Dataset, name: &str) -> Result<Resolved, DesignError> {
    if name == "A" || name == data.exposure_name() {
        Ok(Resolved::Exposure)
    } else if name == "M" || name == data.mediator_name() {
        Ok(Resolved::Mediator)
    } else if data.covariate(name).is_some() {
        Ok(Resolved::Covariate)
    } else {
        Err(DesignError::UnknownTerm(name.to_string()))
    }
}

/// Counterfactual values substituted for every row when building a design.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub exposure: Option<i64>,
    pub mediator: Option<f64>,
}

impl Overrides {
    pub fn exposure(level: i64) -> Self {
        Self {
            exposure: Some(level),
            mediator: None,
        }
    }

    pub fn mediator(value: f64) -> Self {
        Self {
            exposure: None,
            mediator: Some(value),
        }
    }
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    names: Vec<String>,
    intercept: bool,
}

impl DesignMatrix {
    /// Builds from column vectors of equal length.
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>, intercept: bool) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut values = vec![0.0; rows * cols];
        for (j, column) in columns.iter().enumerate() {
            assert_eq!(column.len(), rows, "ragged design columns");
            for (i, &v) in column.iter().enumerate() {
                values[i * cols + j] = v;
            }
        }
        Self {
            rows,
            cols,
            values,
            names,
            intercept,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Whether column 0 is the all-ones intercept.
    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            values,
            names: self.names.clone(),
            intercept: self.intercept,
        }
    }

    /// `X β` for each row.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }
}

/// Evaluates `spec` on every row of `data`, with `overrides` substituted.
pub fn build_design(spec: &ModelSpec, data: &Dataset, overrides: &Overrides) -> Result<DesignMatrix, DesignError> {
    let n = data.n_rows();
    let exposure: Vec<i64> = match overrides.exposure {
        Some(level) => vec![level; n],
        None => data.exposure().to_vec(),
    };
    let mediator: Vec<f64> = match overrides.mediator {
        Some(value) => vec![value; n],
        None => data.mediator().to_vec(),
    };
    let non_reference = &data.levels()[1.min(data.levels().len())..];

    let mut names = Vec::new();
    let mut columns = Vec::new();
    if spec.intercept {
        names.push("(Intercept)".to_string());
        columns.push(vec![1.0; n]);
    }
    for term in &spec.terms {
        // product of the non-exposure factors, then split by exposure dummy
        let mut base = vec![1.0; n];
        let mut exposure_factor: Option<&Factor> = None;
        for factor in term.factors() {
            let resolved = resolve(data, factor.name())?;
            let values: &[f64] = match resolved {
                Resolved::Exposure => {
                    exposure_factor = Some(factor);
                    continue;
                }
                Resolved::Mediator => &mediator,
                Resolved::Covariate => data.covariate(factor.name()).expect("resolved covariate"),
            };
            for (b, &v) in base.iter_mut().zip(values) {
                *b *= match factor {
                    Factor::Power { power, .. } => v.powi(*power as i32),
                    Factor::Complement { .. } => 1.0 - v,
                };
            }
        }
        match exposure_factor {
            None => {
                names.push(term.to_string());
                columns.push(base);
            }
            Some(factor) => {
                if matches!(factor, Factor::Complement { .. }) && non_reference.len() != 1 {
                    return Err(DesignError::ComplementOfMultilevelExposure(factor.name().to_string()));
                }
                for &level in non_reference {
                    let label = term.to_string().replace(&factor.to_string(), &format!("{factor}[{level}]"));
                    let column = base
                        .iter()
                        .zip(&exposure)
                        .map(|(&b, &a)| {
                            let dummy = f64::from(u8::from(a == level));
                            match factor {
                                Factor::Complement { .. } => b * (1.0 - dummy),
                                Factor::Power { .. } => b * dummy,
                            }
                        })
                        .collect();
                    let label = if non_reference.len() == 1 && data.levels() == [0, 1] {
                        term.to_string()
                    } else {
                        label
                    };
                    names.push(label);
                    columns.push(column);
                }
            }
        }
    }
    for (name, column) in names.iter().zip(&columns) {
        if let Some(row) = column.iter().position(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite {
                column: name.clone(),
                row,
            });
        }
    }
    Ok(DesignMatrix::from_columns(names, columns, spec.intercept))
}
