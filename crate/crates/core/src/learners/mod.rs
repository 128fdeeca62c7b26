//! Binary tree-ensemble learners over fixed-length feature vectors.
//!
//! Label `true` means adversarial. Every learner breaks ties toward
//! adversarial and is deterministic for a given seed.

mod adaboost;
mod forest;
mod gbt;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adaboost::{fit_adaboost, fit_adaboost_traced, AdaModel, AdaParams, Stump};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub use gbt::{fit_gbt, log_loss, sigmoid, GbtModel, GbtParams, GBT_LAMBDA};
pub use tree::{fit_tree, Node, TreeModel, TreeParams};

/// Version tag written into every JSON dump.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("no training data")]
    EmptyData,
    #[error("training data has a single class")]
    SingleClass,
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid learner parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub features: Vec<f64>,
    pub label: bool,
}

impl LabeledVector {
    pub fn new(features: Vec<f64>, label: bool) -> Self {
        Self { features, label }
    }
}

/// Checks non-emptiness, equal finite dimensions; returns `d`.
pub(crate) fn check_data(data: &[LabeledVector]) -> Result<usize, LearnerError> {
    let first = data.first().ok_or(LearnerError::EmptyData)?;
    let d = first.features.len();
    for v in data {
        if v.features.len() != d {
            return Err(LearnerError::DimensionMismatch { expected: d, found: v.features.len() });
        }
        if v.features.iter().any(|x| !x.is_finite()) {
            return Err(LearnerError::NonFinite);
        }
    }
    Ok(d)
}

pub(crate) fn check_both_classes(data: &[LabeledVector]) -> Result<(), LearnerError> {
    let pos = data.iter().filter(|v| v.label).count();
    if pos == 0 || pos == data.len() {
        return Err(LearnerError::SingleClass);
    }
    Ok(())
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), LearnerError> {
    if x.len() != expected {
        return Err(LearnerError::DimensionMismatch { expected, found: x.len() });
    }
    Ok(())
}

/// Any fitted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerModel {
    Tree(TreeModel),
    Forest(ForestModel),
    Ada(AdaModel),
    Gbt(GbtModel),
}

impl LearnerModel {
    /// Adversarial flag plus a score: leaf probability (tree), vote
    /// fraction (forest), normalized margin (AdaBoost) or σ(F) (GBT).
    pub fn predict_binary(&self, x: &[f64]) -> Result<(bool, f64), LearnerError> {
        match self {
            Self::Tree(m) => m.predict_binary(x),
            Self::Forest(m) => m.predict_binary(x),
            Self::Ada(m) => m.predict_binary(x),
            Self::Gbt(m) => m.predict_binary(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Self::Tree(m) => m.n_features,
            Self::Forest(m) => m.n_features,
            Self::Ada(m) => m.n_features,
            Self::Gbt(m) => m.n_features,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&LearnerDump { schema_version: SCHEMA_VERSION, model: self.clone() }).expect("finite model")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let dump: LearnerDump = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if dump.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", dump.schema_version));
        }
        Ok(dump.model)
    }
}

#[derive(Serialize, Deserialize)]
struct LearnerDump {
    schema_version: u32,
    #[serde(flatten)]
    model: LearnerModel,
}

/// Fraction of `data` predicted correctly.
pub fn train_accuracy(model: &LearnerModel, data: &[LabeledVector]) -> f64 {
    let hits = data.iter().filter(|v| model.predict_binary(&v.features).map(|(p, _)| p == v.label).unwrap_or(false)).count();
    hits as f64 / data.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip_and_version_check() {
        let data = vec![LabeledVector::new(vec![0.0], false), LabeledVector::new(vec![1.0], true)];
        let m = LearnerModel::Tree(fit_tree(&data, &TreeParams::default(), 0).unwrap());
        let json = m.to_json();
        assert!(json.contains("\"schema_version\":1"));
        assert_eq!(LearnerModel::from_json(&json).unwrap(), m);
        assert!(LearnerModel::from_json(&json.replace("\"schema_version\":1", "\"schema_version\":9")).is_err());
    }

    #[test]
    fn wrong_length_input() {
        let data = vec![LabeledVector::new(vec![0.0, 1.0], false), LabeledVector::new(vec![1.0, 0.0], true)];
        let m = LearnerModel::Tree(fit_tree(&data, &TreeParams::default(), 0).unwrap());
        assert_eq!(m.predict_binary(&[1.0]), Err(LearnerError::DimensionMismatch { expected: 2, found: 1 }));
    }
}
