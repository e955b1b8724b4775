//! Scenario dataset and canonical-set files.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use cometh_core::synthetic::{BenchmarkSample, CanonicalSet};
use cometh_core::{JudgmentCounts, JudgmentDistribution};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("scenario id {0:?} appears twice")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

impl From<DatasetError> for Error {
    fn from(e: DatasetError) -> Self {
        Error::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgments {
    pub blame: u64,
    pub neutral: u64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideal_action: Option<String>,
    pub judgments: Judgments,
}

impl Scenario {
    pub fn counts(&self) -> JudgmentCounts {
        JudgmentCounts::new(self.judgments.blame, self.judgments.neutral, self.judgments.support)
    }

    pub fn distribution(&self) -> JudgmentDistribution {
        self.counts().normalize().expect("validated at ingest")
    }
}

/// Validates a parsed dataset.
pub fn validate(scenarios: &[Scenario]) -> Result<(), DatasetError> {
    if scenarios.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut seen = BTreeSet::new();
    for s in scenarios {
        if s.id.trim().is_empty() {
            return Err(DatasetError::Schema("empty scenario id".into()));
        }
        if s.text.trim().is_empty() {
            return Err(DatasetError::Schema(format!("scenario {:?} has empty text", s.id)));
        }
        if s.counts().total() == 0 {
            return Err(DatasetError::Schema(format!("scenario {:?} has no judgments", s.id)));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(DatasetError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<Vec<Scenario>, DatasetError> {
    let scenarios: Vec<Scenario> =
        serde_json::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
    validate(&scenarios)?;
    Ok(scenarios)
}

pub fn ingest(path: &Path) -> Result<Vec<Scenario>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes a synthetic benchmark in dataset form; the canonical label goes
/// into `ideal_action` so that ground truth travels with the file.
pub fn benchmark_as_scenarios(samples: &[BenchmarkSample]) -> Vec<Scenario> {
    samples
        .iter()
        .map(|s| Scenario {
            id: s.id.clone(),
            text: format!("synthetic sample drawn from {}", s.label),
            language: None,
            ideal_action: Some(s.label.clone()),
            judgments: Judgments {
                blame: s.counts.blame,
                neutral: s.counts.neutral,
                support: s.counts.support,
            },
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_canonicals(path: Option<&Path>) -> Result<CanonicalSet, Error> {
    match path {
        None => Ok(CanonicalSet::default()),
        Some(p) => read_json(p),
    }
}
