//! Keyword classifier producing per-class probability vectors.
//!
//! [`KwModel`] is a small log-mel MLP trained in-repo; [`ExternalClassifier`]
//! wraps any model reachable over a JSON-lines subprocess protocol. Both
//! implement [`Classifier`], which is all the attack and detectors need.

mod external;
mod features;
mod format;
mod mlp;
mod model;
mod train;

use std::sync::Arc;

use thiserror::Error;

use crate::audio::AudioClip;

pub use external::{ExternalClassifier, Request, Response};
pub use features::{extract_features, FeatureExtractor, FeatureMatrix, FeatureSpec, LOG_FLOOR};
pub use format::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use mlp::{softmax, Adam, Gradients, Layer, Mlp, Scalar};
pub use model::KwModel;
pub use train::{train, train_with_spec, TrainConfig, TrainOutcome, MIN_CLIPS_PER_CLASS};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("bad model magic")]
    BadMagic,
    #[error("unsupported model version {0}")]
    VersionMismatch(u32),
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("external classifier exited")]
    ChildExited,
    #[error("invalid probabilities: {0}")]
    InvalidProbs(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// A probability distribution over named classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    class_names: Arc<[String]>,
}

impl ProbVector {
    /// Validates non-negativity, normalization within 1e-6 and `C >= 2`.
    pub fn new(probs: Vec<f64>, class_names: Arc<[String]>) -> Result<Self, ClassifierError> {
        if probs.len() < 2 || probs.len() != class_names.len() {
            return Err(ClassifierError::InvalidProbs(format!(
                "{} probabilities for {} classes",
                probs.len(),
                class_names.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(ClassifierError::InvalidProbs("negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ClassifierError::InvalidProbs(format!("sum {sum}")));
        }
        Ok(Self { probs, class_names })
    }

    /// Test and synthetic-data helper: builds from raw values with generic
    /// class names `c0, c1, ...`.
    pub fn from_slice(probs: &[f64]) -> Result<Self, ClassifierError> {
        let names: Arc<[String]> = (0..probs.len()).map(|i| format!("c{i}")).collect();
        Self::new(probs.to_vec(), names)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn label(&self) -> &str {
        &self.class_names[self.argmax()]
    }

    pub fn prob_of(&self, class: &str) -> Option<f64> {
        self.class_names.iter().position(|c| c == class).map(|i| self.probs[i])
    }
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps a clip to class probabilities.
pub trait Classifier: Send + Sync {
    fn class_names(&self) -> &[String];

    fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError>;

    /// Probabilities plus pre-softmax scores. Classifiers without logits
    /// report `ln p` (which softmaxes back to `p`).
    fn predict_with_logits(&self, clip: &AudioClip) -> Result<(ProbVector, Vec<f64>), ClassifierError> {
        let p = self.predict(clip)?;
        let logits = p.probs().iter().map(|v| v.max(1e-300).ln()).collect();
        Ok((p, logits))
    }

    fn class_index(&self, class: &str) -> Option<usize> {
        self.class_names().iter().position(|c| c == class)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn class_names(&self) -> &[String] {
        (**self).class_names()
    }
    fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError> {
        (**self).predict(clip)
    }
    fn predict_with_logits(&self, clip: &AudioClip) -> Result<(ProbVector, Vec<f64>), ClassifierError> {
        (**self).predict_with_logits(clip)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn class_names(&self) -> &[String] {
        (**self).class_names()
    }
    fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError> {
        (**self).predict(clip)
    }
    fn predict_with_logits(&self, clip: &AudioClip) -> Result<(ProbVector, Vec<f64>), ClassifierError> {
        (**self).predict_with_logits(clip)
    }
}

/// Top-1 accuracy of `classifier` on labelled clips.
pub fn accuracy<C: Classifier + ?Sized>(classifier: &C, clips: &[(AudioClip, String)]) -> Result<f64, ClassifierError> {
    if clips.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (clip, label) in clips {
        if classifier.predict(clip)?.label() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / clips.len() as f64)
}
