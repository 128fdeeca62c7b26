//! Prediction-mismatch probes and the ensemble decision rules built on them.
//!
//! A probe runs the classifier on the raw clip (`r`) and on each transformed
//! copy (`p_i`). Rules then combine the per-member label mismatches (votes),
//! the largest L1 distance between `r` and a member, or whole-vector
//! features (SAD, CP) passed to a tree learner.

mod scheme;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::classifier::{Classifier, ClassifierError, ProbVector};
use crate::eval::Confusion;
use crate::learners::LearnerError;
use crate::transforms::{TransformError, TransformSpec};

pub use scheme::{fit_detector, Decision, FittedDetector, LearnerParams, Scheme, VerdictRecord};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("ensemble member {id:?} failed: {source}")]
    Member {
        id: String,
        #[source]
        source: TransformError,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("expected dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Which vector pairs the L1 score maximizes over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Pairs {
    /// Raw prediction against each member.
    #[default]
    RawVsMember,
    /// Every pair among the raw prediction and all members.
    AnyPair,
}

/// Whether L1, SAD and CP use softmax outputs or pre-softmax scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionOptions {
    pub l1_pairs: L1Pairs,
    pub space: ScoreSpace,
}

/// Raw and per-member predictions for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleVerdict {
    pub member_ids: Vec<String>,
    pub raw_probs: ProbVector,
    pub raw_logits: Vec<f64>,
    pub member_probs: Vec<ProbVector>,
    pub member_logits: Vec<Vec<f64>>,
    /// `votes[i]` is true when member `i` changes the top label.
    pub votes: Vec<bool>,
    pub vote_count: usize,
    pub l1_score: f64,
    /// Set by whichever scheme consumes the verdict.
    pub adversarial: bool,
}

impl EnsembleVerdict {
    /// Assembles a verdict from predictions; logits default to `ln p`.
    pub fn from_predictions(
        member_ids: Vec<String>,
        raw: (ProbVector, Option<Vec<f64>>),
        members: Vec<(ProbVector, Option<Vec<f64>>)>,
        options: &DetectionOptions,
    ) -> Result<Self, DetectionError> {
        if members.is_empty() {
            return Err(DetectionError::EmptyEnsemble);
        }
        let c = raw.0.len();
        for (p, _) in &members {
            if p.len() != c {
                return Err(DetectionError::DimensionMismatch { expected: c, found: p.len() });
            }
        }
        let ln = |p: &ProbVector| p.probs().iter().map(|v| v.max(1e-300).ln()).collect::<Vec<f64>>();
        let raw_logits = raw.1.unwrap_or_else(|| ln(&raw.0));
        let raw_probs = raw.0;
        let (member_probs, member_logits): (Vec<_>, Vec<_>) = members
            .into_iter()
            .map(|(p, l)| {
                let l = l.unwrap_or_else(|| ln(&p));
                (p, l)
            })
            .unzip();
        let top = raw_probs.argmax();
        let votes: Vec<bool> = member_probs.iter().map(|p| p.argmax() != top).collect();
        let vote_count = votes.iter().filter(|&&v| v).count();
        let mut v = Self {
            member_ids,
            raw_probs,
            raw_logits,
            member_probs,
            member_logits,
            votes,
            vote_count,
            l1_score: 0.0,
            adversarial: false,
        };
        v.l1_score = v.l1_with(options);
        Ok(v)
    }

    /// Test and synthetic-data helper taking bare probability vectors.
    pub fn from_probs(raw: ProbVector, members: Vec<ProbVector>) -> Result<Self, DetectionError> {
        let ids = (0..members.len()).map(|i| format!("m{i}")).collect();
        Self::from_predictions(ids, (raw, None), members.into_iter().map(|p| (p, None)).collect(), &DetectionOptions::default())
    }

    pub fn k(&self) -> usize {
        self.member_probs.len()
    }

    pub fn num_classes(&self) -> usize {
        self.raw_probs.len()
    }

    /// Raw and member vectors in the requested space.
    pub fn vectors(&self, space: ScoreSpace) -> (&[f64], Vec<&[f64]>) {
        match space {
            ScoreSpace::Probabilities => (self.raw_probs.probs(), self.member_probs.iter().map(|p| p.probs()).collect()),
            ScoreSpace::Logits => (&self.raw_logits, self.member_logits.iter().map(|l| l.as_slice()).collect()),
        }
    }

    pub fn l1_with(&self, options: &DetectionOptions) -> f64 {
        let (r, members) = self.vectors(options.space);
        match options.l1_pairs {
            L1Pairs::RawVsMember => members.iter().map(|p| l1_distance(r, p)).fold(0.0, f64::max),
            L1Pairs::AnyPair => {
                let mut all = vec![r];
                all.extend(members);
                let mut best = 0.0f64;
                for i in 0..all.len() {
                    for j in i + 1..all.len() {
                        best = best.max(l1_distance(all[i], all[j]));
                    }
                }
                best
            }
        }
    }
}

/// Runs `model` on `clip` and on each transformed copy. Members are
/// evaluated concurrently; the verdict keeps ensemble order.
pub fn probe<C: Classifier + ?Sized>(
    model: &C,
    clip: &AudioClip,
    ensemble: &[TransformSpec],
) -> Result<EnsembleVerdict, DetectionError> {
    probe_with(model, clip, ensemble, &DetectionOptions::default())
}

pub fn probe_with<C: Classifier + ?Sized>(
    model: &C,
    clip: &AudioClip,
    ensemble: &[TransformSpec],
    options: &DetectionOptions,
) -> Result<EnsembleVerdict, DetectionError> {
    if ensemble.is_empty() {
        return Err(DetectionError::EmptyEnsemble);
    }
    let (rp, rl) = model.predict_with_logits(clip)?;
    let members: Vec<(ProbVector, Option<Vec<f64>>)> = ensemble
        .par_iter()
        .map(|spec| {
            let t = spec.apply(clip).map_err(|source| DetectionError::Member { id: spec.id.clone(), source })?;
            let (p, l) = model.predict_with_logits(&t)?;
            Ok((p, Some(l)))
        })
        .collect::<Result<_, DetectionError>>()?;
    EnsembleVerdict::from_predictions(ensemble.iter().map(|s| s.id.clone()).collect(), (rp, Some(rl)), members, options)
}

/// Adversarial when at least half the members disagree (`2·votes ≥ k`).
pub fn majority_vote(verdict: &EnsembleVerdict) -> bool {
    majority_from_counts(verdict.vote_count, verdict.k())
}

pub fn majority_from_counts(vote_count: usize, k: usize) -> bool {
    2 * vote_count >= k
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Largest `‖r − p‖₁` over the members; zero for no members.
pub fn l1_score(r: &ProbVector, members: &[ProbVector]) -> Result<f64, DetectionError> {
    let mut best = 0.0f64;
    for p in members {
        if p.len() != r.len() {
            return Err(DetectionError::DimensionMismatch { expected: r.len(), found: p.len() });
        }
        best = best.max(l1_distance(r.probs(), p.probs()));
    }
    Ok(best)
}

/// Per-class summed absolute difference `S_i = Σ_p |r_i − p_i|`.
pub fn sad_vector(verdict: &EnsembleVerdict) -> Vec<f64> {
    sad_vector_in(verdict, ScoreSpace::Probabilities)
}

pub fn sad_vector_in(verdict: &EnsembleVerdict, space: ScoreSpace) -> Vec<f64> {
    let (r, members) = verdict.vectors(space);
    (0..r.len()).map(|i| members.iter().map(|p| (r[i] - p[i]).abs()).sum()).collect()
}

/// Concatenation `[r, p_1, …, p_k]` in ensemble order.
pub fn cp_vector(verdict: &EnsembleVerdict) -> Vec<f64> {
    cp_vector_in(verdict, ScoreSpace::Probabilities)
}

pub fn cp_vector_in(verdict: &EnsembleVerdict, space: ScoreSpace) -> Vec<f64> {
    let (r, members) = verdict.vectors(space);
    let mut out = r.to_vec();
    for p in members {
        out.extend_from_slice(p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    VoteCount,
    L1,
}

/// A learned cut-off; values at or above `threshold` are adversarial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub kind: ThresholdKind,
    pub threshold: f64,
    pub training_f1: f64,
    /// Information gain in bits, for L1 thresholds.
    pub info_gain: Option<f64>,
}

impl ThresholdModel {
    pub fn classify(&self, value: f64) -> bool {
        value >= self.threshold
    }
}

fn check_both(labels: impl Iterator<Item = bool>) -> Result<(), DetectionError> {
    let (mut pos, mut neg) = (0, 0);
    for l in labels {
        if l {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 || neg == 0 {
        return Err(DetectionError::DegenerateTraining(format!("{pos} adversarial and {neg} benign examples")));
    }
    Ok(())
}

/// F1 values closer than this count as tied.
pub const F1_TIE: f64 = 1e-12;

/// Vote-count threshold `t ∈ {0..k}` maximizing training F1; the smaller
/// `t` wins ties.
pub fn learn_vote_threshold(training: &[(EnsembleVerdict, bool)]) -> Result<ThresholdModel, DetectionError> {
    let k = training.first().map(|(v, _)| v.k()).ok_or_else(|| DetectionError::DegenerateTraining("empty".into()))?;
    if let Some((v, _)) = training.iter().find(|(v, _)| v.k() != k) {
        return Err(DetectionError::DimensionMismatch { expected: k, found: v.k() });
    }
    let counts: Vec<(usize, bool)> = training.iter().map(|(v, y)| (v.vote_count, *y)).collect();
    learn_vote_threshold_from_counts(&counts, k)
}

pub fn learn_vote_threshold_from_counts(training: &[(usize, bool)], k: usize) -> Result<ThresholdModel, DetectionError> {
    check_both(training.iter().map(|(_, y)| *y))?;
    let mut best: Option<(usize, f64)> = None;
    for t in 0..=k {
        let f = Confusion::from_pairs(training.iter().map(|&(c, y)| (c >= t, y))).f1_or_zero();
        if best.is_none_or(|(_, bf)| f > bf + F1_TIE) {
            best = Some((t, f));
        }
    }
    let (t, f) = best.expect("k + 1 candidates");
    Ok(ThresholdModel { kind: ThresholdKind::VoteCount, threshold: t as f64, training_f1: f, info_gain: None })
}

/// Base-2 entropy of a two-class count.
pub fn binary_entropy(pos: usize, neg: usize) -> f64 {
    let n = (pos + neg) as f64;
    [pos, neg]
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of splitting labelled scores at `threshold`
/// (`score ≥ threshold` on one side).
pub fn information_gain(training: &[(f64, bool)], threshold: f64) -> f64 {
    let n = training.len() as f64;
    let count = |sel: &dyn Fn(f64) -> bool| {
        training.iter().filter(|(s, _)| sel(*s)).fold((0, 0), |(p, q), (_, y)| if *y { (p + 1, q) } else { (p, q + 1) })
    };
    let (ap, an) = count(&|s| s >= threshold);
    let (bp, bn) = count(&|s| s < threshold);
    let parent = binary_entropy(ap + bp, an + bn);
    parent - (ap + an) as f64 / n * binary_entropy(ap, an) - (bp + bn) as f64 / n * binary_entropy(bp, bn)
}

/// Ties in gain closer than this go to the smaller threshold.
pub const GAIN_TIE: f64 = 1e-12;

/// Threshold on the L1 score with maximum information gain among the
/// midpoints of consecutive distinct training scores.
pub fn learn_l1_threshold(training: &[(f64, bool)]) -> Result<ThresholdModel, DetectionError> {
    check_both(training.iter().map(|(_, y)| *y))?;
    let mut scores: Vec<f64> = training.iter().map(|(s, _)| *s).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    if scores.len() < 2 {
        return Err(DetectionError::DegenerateTraining("all scores identical".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for w in scores.windows(2) {
        let t = w[0] + (w[1] - w[0]) / 2.0;
        let g = information_gain(training, t);
        if best.is_none_or(|(_, bg)| g > bg + GAIN_TIE) {
            best = Some((t, g));
        }
    }
    let (threshold, gain) = best.expect("at least one midpoint");
    let f = Confusion::from_pairs(training.iter().map(|&(s, y)| (s >= threshold, y))).f1_or_zero();
    Ok(ThresholdModel { kind: ThresholdKind::L1, threshold, training_f1: f, info_gain: Some(gain) })
}
