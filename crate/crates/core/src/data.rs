//! Observed-data container: covariates `L`, categorical exposure `A`,
//! mediator `M`, outcome `Y`, plus the declared treated/control arms.
//!
//! Columns are stored column-major. Exposure values are integer level codes.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in input")]
    MissingColumn(String),
    #[error("column `{column}` row {row}: non-numeric value `{value}`")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{column}` row {row}: missing value")]
    MissingValue { column: String, row: usize },
    #[error("column `{column}` row {row}: exposure level {level} is not a declared level")]
    UnknownExposureLevel {
        column: String,
        row: usize,
        level: i64,
    },
    #[error("arm level {0} does not occur among the exposure levels")]
    UnknownArmLevel(i64),
    #[error("exposure column `{column}` row {row}: value {value} is not an integer code")]
    NonIntegerExposure {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("column `{0}` is assigned more than one role")]
    DuplicateRole(String),
    #[error("treated level {0} also listed as a control level")]
    OverlappingArms(i64),
    #[error("no control levels declared")]
    NoControlLevel,
    #[error("dataset has no rows")]
    Empty,
    #[error("column `{column}` has {got} rows, expected {expected}")]
    RaggedColumn {
        column: String,
        expected: usize,
        got: usize,
    },
    #[error("column `{column}` row {row}: non-finite value")]
    NonFinite { column: String, row: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Which exposure level plays `a†` and which play `a◦`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arms {
    pub treated: i64,
    pub control: Vec<i64>,
}

impl Arms {
    pub fn binary(treated: i64, control: i64) -> Self {
        Self {
            treated,
            control: vec![control],
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.control.is_empty() {
            return Err(DataError::NoControlLevel);
        }
        if self.control.contains(&self.treated) {
            return Err(DataError::OverlappingArms(self.treated));
        }
        Ok(())
    }
}

/// Column names for each role in a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub exposure: String,
    pub mediator: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Declared exposure levels; derived from the data when absent.
    #[serde(default)]
    pub exposure_levels: Option<Vec<i64>>,
}

impl Schema {
    fn check_roles(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        let names = [&self.exposure, &self.mediator, &self.outcome]
            .into_iter()
            .chain(self.covariates.iter());
        for name in names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateRole(name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Vec<Column>,
    exposure_name: String,
    exposure: Vec<i64>,
    levels: Vec<i64>,
    mediator_name: String,
    mediator: Vec<f64>,
    outcome_name: String,
    outcome: Vec<f64>,
    arms: Arms,
}

impl Dataset {
    /// Builds a dataset from in-memory columns. `levels` defaults to the
    /// sorted distinct exposure codes.
    pub fn new(
        schema: &Schema,
        covariates: Vec<Vec<f64>>,
        exposure: Vec<i64>,
        mediator: Vec<f64>,
        outcome: Vec<f64>,
        arms: Arms,
    ) -> Result<Self, DataError> {
        schema.check_roles()?;
        arms.validate()?;
        let n = exposure.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if covariates.len() != schema.covariates.len() {
            return Err(DataError::MissingColumn(format!(
                "{} covariate columns supplied for {} names",
                covariates.len(),
                schema.covariates.len()
            )));
        }
        let check = |name: &str, values: &[f64]| -> Result<(), DataError> {
            if values.len() != n {
                return Err(DataError::RaggedColumn {
                    column: name.to_string(),
                    expected: n,
                    got: values.len(),
                });
            }
            match values.iter().position(|v| !v.is_finite()) {
                Some(row) => Err(DataError::NonFinite {
                    column: name.to_string(),
                    row,
                }),
                None => Ok(()),
            }
        };
        check(&schema.mediator, &mediator)?;
        check(&schema.outcome, &outcome)?;
        for (name, values) in schema.covariates.iter().zip(&covariates) {
            check(name, values)?;
        }

        let levels = match &schema.exposure_levels {
            Some(declared) => {
                let declared: BTreeSet<i64> = declared.iter().copied().collect();
                if let Some(row) = exposure.iter().position(|a| !declared.contains(a)) {
                    return Err(DataError::UnknownExposureLevel {
                        column: schema.exposure.clone(),
                        row,
                        level: exposure[row],
                    });
                }
                declared.into_iter().collect::<Vec<_>>()
            }
            None => exposure
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        for level in std::iter::once(&arms.treated).chain(&arms.control) {
            if !levels.contains(level) {
                return Err(DataError::UnknownArmLevel(*level));
            }
        }

        Ok(Self {
            covariates: schema
                .covariates
                .iter()
                .cloned()
                .zip(covariates)
                .map(|(name, values)| Column { name, values })
                .collect(),
            exposure_name: schema.exposure.clone(),
            exposure,
            levels,
            mediator_name: schema.mediator.clone(),
            mediator,
            outcome_name: schema.outcome.clone(),
            outcome,
            arms,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.exposure.len()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            exposure: self.exposure_name.clone(),
            mediator: self.mediator_name.clone(),
            outcome: self.outcome_name.clone(),
            covariates: self.covariates.iter().map(|c| c.name.clone()).collect(),
            exposure_levels: Some(self.levels.clone()),
        }
    }

    pub fn covariates(&self) -> &[Column] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn exposure(&self) -> &[i64] {
        &self.exposure
    }

    pub fn exposure_name(&self) -> &str {
        &self.exposure_name
    }

    /// Sorted exposure levels; the first is the dummy-coding reference.
    pub fn levels(&self) -> &[i64] {
        &self.levels
    }

    pub fn mediator(&self) -> &[f64] {
        &self.mediator
    }

    pub fn mediator_name(&self) -> &str {
        &self.mediator_name
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn arms(&self) -> &Arms {
        &self.arms
    }

    /// Same rows with a different choice of arms.
    pub fn with_arms(&self, arms: Arms) -> Result<Self, DataError> {
        arms.validate()?;
        for level in std::iter::once(&arms.treated).chain(&arms.control) {
            if !self.levels.contains(level) {
                return Err(DataError::UnknownArmLevel(*level));
            }
        }
        Ok(Self {
            arms,
            ..self.clone()
        })
    }

    /// Rows in the given order (repeats allowed). Declared levels and arms
    /// are kept even when a level no longer occurs.
    pub fn resample(&self, rows: &[usize]) -> Self {
        let pick_f = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            covariates: self
                .covariates
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: pick_f(&c.values),
                })
                .collect(),
            exposure: rows.iter().map(|&i| self.exposure[i]).collect(),
            mediator: pick_f(&self.mediator),
            outcome: pick_f(&self.outcome),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            covariates: Vec::new(),
            exposure_name: self.exposure_name.clone(),
            exposure: Vec::new(),
            levels: self.levels.clone(),
            mediator_name: self.mediator_name.clone(),
            mediator: Vec::new(),
            outcome_name: self.outcome_name.clone(),
            outcome: Vec::new(),
            arms: self.arms.clone(),
        }
    }

    /// Indices of rows whose exposure equals `level`.
    pub fn rows_with_level(&self, level: i64) -> Vec<usize> {
        self.exposure
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| (a == level).then_some(i))
            .collect()
    }

    /// Sorted distinct mediator values if the mediator is integer-coded with
    /// at most `max_levels` values.
    pub fn mediator_support(&self, max_levels: usize) -> Option<Vec<f64>> {
        let mut seen = BTreeSet::new();
        for &m in &self.mediator {
            if m.fract() != 0.0 {
                return None;
            }
            seen.insert(m as i64);
            if seen.len() > max_levels {
                return None;
            }
        }
        Some(seen.into_iter().map(|m| m as f64).collect())
    }

    pub fn mediator_is_binary(&self) -> bool {
        self.mediator.iter().all(|&m| m == 0.0 || m == 1.0)
    }

    pub fn outcome_range(&self) -> (f64, f64) {
        self.outcome
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            })
    }
}

/// Reads a CSV with a header row. Columns not named by the schema are ignored.
/// Header row of a CSV file.
pub fn csv_headers(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path.as_ref())?;
    Ok(reader.headers()?.iter().map(String::from).collect())
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, arms: Arms) -> Result<Dataset, DataError> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    read_csv(reader, schema, arms)
}

pub fn read_csv<R: std::io::Read>(
    mut reader: csv::Reader<R>,
    schema: &Schema,
    arms: Arms,
) -> Result<Dataset, DataError> {
    schema.check_roles()?;
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let exposure_idx = index_of(&schema.exposure)?;
    let mediator_idx = index_of(&schema.mediator)?;
    let outcome_idx = index_of(&schema.outcome)?;
    let covariate_idx = schema
        .covariates
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut exposure = Vec::new();
    let mut mediator = Vec::new();
    let mut outcome = Vec::new();
    let mut covariates = vec![Vec::new(); covariate_idx.len()];

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |idx: usize, name: &str| -> Result<f64, DataError> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(DataError::MissingValue {
                    column: name.to_string(),
                    row,
                });
            }
            let value: f64 = raw.parse().map_err(|_| DataError::NonNumericCell {
                column: name.to_string(),
                row,
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    column: name.to_string(),
                    row,
                });
            }
            Ok(value)
        };
        let a = cell(exposure_idx, &schema.exposure)?;
        if a.fract() != 0.0 {
            return Err(DataError::NonIntegerExposure {
                column: schema.exposure.clone(),
                row,
                value: a,
            });
        }
        exposure.push(a as i64);
        mediator.push(cell(mediator_idx, &schema.mediator)?);
        outcome.push(cell(outcome_idx, &schema.outcome)?);
        for ((values, &idx), name) in covariates.iter_mut().zip(&covariate_idx).zip(&schema.covariates) {
            values.push(cell(idx, name)?);
        }
    }
    Dataset::new(schema, covariates, exposure, mediator, outcome, arms)
}

/// Writes covariates, exposure, mediator, outcome. Floats use the shortest
/// representation that parses back to the same value.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    write_csv(data, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: &mut csv::Writer<W>) -> Result<(), DataError> {
    let mut header: Vec<&str> = data.covariates.iter().map(|c| c.name.as_str()).collect();
    header.extend([
        data.exposure_name.as_str(),
        data.mediator_name.as_str(),
        data.outcome_name.as_str(),
    ]);
    writer.write_record(&header)?;
    for i in 0..data.n_rows() {
        let mut record: Vec<String> = data.covariates.iter().map(|c| c.values[i].to_string()).collect();
        record.push(data.exposure[i].to_string());
        record.push(data.mediator[i].to_string());
        record.push(data.outcome[i].to_string());
        writer.write_record(&record)?;
    }
    Ok(())
}
