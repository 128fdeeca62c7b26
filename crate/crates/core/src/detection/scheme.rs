use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    cp_vector_in, learn_l1_threshold, learn_vote_threshold, majority_vote, sad_vector_in, DetectionError, DetectionOptions,
    EnsembleVerdict, ThresholdModel,
};
use crate::learners::{
    fit_adaboost, fit_forest, fit_gbt, AdaParams, ForestParams, GbtParams, LabeledVector, LearnerModel,
};

/// Every ensemble decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Majority,
    VoteThreshold,
    L1,
    ForestSad,
    ForestCp,
    AdaSad,
    AdaCp,
    GbtSad,
    GbtCp,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::Majority,
        Scheme::VoteThreshold,
        Scheme::L1,
        Scheme::ForestSad,
        Scheme::ForestCp,
        Scheme::AdaSad,
        Scheme::AdaCp,
        Scheme::GbtSad,
        Scheme::GbtCp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Majority => "majority",
            Scheme::VoteThreshold => "vote_threshold",
            Scheme::L1 => "l1",
            Scheme::ForestSad => "forest_sad",
            Scheme::ForestCp => "forest_cp",
            Scheme::AdaSad => "ada_sad",
            Scheme::AdaCp => "ada_cp",
            Scheme::GbtSad => "gbt_sad",
            Scheme::GbtCp => "gbt_cp",
        }
    }

    /// Only majority voting has no learned state.
    pub fn requires_training(self) -> bool {
        self != Scheme::Majority
    }

    /// CP features for `*_cp`, SAD for `*_sad`, `None` otherwise.
    fn uses_cp(self) -> Option<bool> {
        match self {
            Scheme::ForestSad | Scheme::AdaSad | Scheme::GbtSad => Some(false),
            Scheme::ForestCp | Scheme::AdaCp | Scheme::GbtCp => Some(true),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown scheme {s:?}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerParams {
    pub forest: ForestParams,
    pub adaboost: AdaParams,
    pub gbt: GbtParams,
}

/// A scheme with its learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum FittedDetector {
    Majority,
    VoteThreshold { model: ThresholdModel },
    L1 { model: ThresholdModel },
    Learner { name: Scheme, cp: bool, model: LearnerModel },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub adversarial: bool,
    /// Vote fraction (majority), vote count (threshold), L1 score, or the
    /// learner's own score.
    pub score: f64,
}

fn features(v: &EnsembleVerdict, cp: bool, options: &DetectionOptions) -> Vec<f64> {
    if cp {
        cp_vector_in(v, options.space)
    } else {
        sad_vector_in(v, options.space)
    }
}

/// Learns `scheme`'s state from labelled verdicts (`true` = adversarial).
pub fn fit_detector(
    scheme: Scheme,
    training: &[(EnsembleVerdict, bool)],
    options: &DetectionOptions,
    params: &LearnerParams,
    seed: u64,
) -> Result<FittedDetector, DetectionError> {
    Ok(match scheme {
        Scheme::Majority => FittedDetector::Majority,
        Scheme::VoteThreshold => FittedDetector::VoteThreshold { model: learn_vote_threshold(training)? },
        Scheme::L1 => {
            let scores: Vec<(f64, bool)> = training.iter().map(|(v, y)| (v.l1_with(options), *y)).collect();
            FittedDetector::L1 { model: learn_l1_threshold(&scores)? }
        }
        learner => {
            let cp = learner.uses_cp().expect("learner scheme");
            let data: Vec<LabeledVector> =
                training.iter().map(|(v, y)| LabeledVector::new(features(v, cp, options), *y)).collect();
            let model = match learner {
                Scheme::ForestSad | Scheme::ForestCp => LearnerModel::Forest(fit_forest(&data, &params.forest, seed)?),
                Scheme::AdaSad | Scheme::AdaCp => LearnerModel::Ada(fit_adaboost(&data, &params.adaboost)?),
                _ => LearnerModel::Gbt(fit_gbt(&data, &params.gbt)?),
            };
            FittedDetector::Learner { name: learner, cp, model }
        }
    })
}

impl FittedDetector {
    pub fn scheme(&self) -> Scheme {
        match self {
            FittedDetector::Majority => Scheme::Majority,
            FittedDetector::VoteThreshold { .. } => Scheme::VoteThreshold,
            FittedDetector::L1 { .. } => Scheme::L1,
            FittedDetector::Learner { name, .. } => *name,
        }
    }

    pub fn decide(&self, verdict: &EnsembleVerdict, options: &DetectionOptions) -> Result<Decision, DetectionError> {
        Ok(match self {
            FittedDetector::Majority => {
                Decision { adversarial: majority_vote(verdict), score: verdict.vote_count as f64 / verdict.k() as f64 }
            }
            FittedDetector::VoteThreshold { model } => {
                let c = verdict.vote_count as f64;
                Decision { adversarial: model.classify(c), score: c }
            }
            FittedDetector::L1 { model } => {
                let s = verdict.l1_with(options);
                Decision { adversarial: model.classify(s), score: s }
            }
            FittedDetector::Learner { cp, model, .. } => {
                let (adversarial, score) = model.predict_binary(&features(verdict, *cp, options))?;
                Decision { adversarial, score }
            }
        })
    }
}

/// One line of the verdict JSON-lines export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub clip: String,
    pub votes: Vec<bool>,
    pub vote_count: usize,
    pub l1: f64,
    pub adversarial: bool,
    pub scheme: Scheme,
    pub score: f64,
    /// Ground truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_adversarial: Option<bool>,
    /// True label of a benign clip, or source label of an adversarial one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
}

impl VerdictRecord {
    pub fn new(clip: impl Into<String>, verdict: &EnsembleVerdict, scheme: Scheme, decision: Decision) -> Self {
        Self {
            clip: clip.into(),
            votes: verdict.votes.clone(),
            vote_count: verdict.vote_count,
            l1: verdict.l1_score,
            adversarial: decision.adversarial,
            scheme,
            score: decision.score,
            actual_adversarial: None,
            source_label: None,
            target_label: None,
        }
    }
}
