//! Dataset splitting, detection metrics, per-pair heat maps, and the
//! frequency and accuracy analyses of detected versus missed examples.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::audio::{to_mono, AudioClip, LabeledClip};
use crate::classifier::{Classifier, ClassifierError};
use crate::rng::{self, domain};
use crate::spectral::Stft;

/// Frames whose windowed energy falls below this are ignored by [`avg_frequency`].
pub const SILENT_FRAME_ENERGY: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("split ratio must be in [0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("clip has no frame above the energy floor")]
    SilentClip,
    #[error("need at least 2 samples per group, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("{0} flags for {1} clips")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Confusion counts with adversarial as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// From `(predicted_adversarial, actually_adversarial)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    /// Undefined when precision or recall is undefined or both are zero.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| f1(p, r))
    }

    /// F1 with undefined values read as zero, for model selection.
    pub fn f1_or_zero(&self) -> f64 {
        self.f1().unwrap_or(0.0)
    }
}

/// Metrics for one scheme on one split. Undefined ratios serialize as
/// `null` and are explained in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scheme: String,
    pub split: String,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub notes: Vec<String>,
}

impl DetectionReport {
    pub fn confusion(&self) -> Confusion {
        Confusion { tp: self.tp, fp: self.fp, tn: self.tn, fn_: self.fn_ }
    }
}

/// Scores `(predicted_adversarial, actually_adversarial)` pairs.
pub fn score(predictions: &[(bool, bool)], scheme: &str, split: &str) -> DetectionReport {
    let c = Confusion::from_pairs(predictions.iter().copied());
    let mut notes = Vec::new();
    if predictions.is_empty() {
        notes.push("no predictions".to_string());
    }
    if c.precision().is_none() {
        notes.push("precision undefined: nothing was flagged adversarial".to_string());
    }
    if c.recall().is_none() {
        notes.push("recall undefined: no adversarial examples".to_string());
    }
    if c.precision().is_some() && c.recall().is_some() && c.f1().is_none() {
        notes.push("f1 undefined: precision and recall are both zero".to_string());
    }
    DetectionReport {
        scheme: scheme.to_string(),
        split: split.to_string(),
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        notes,
    }
}

/// Indices into the adversarial and benign inputs of [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_adversarial: Vec<usize>,
    pub train_benign: Vec<usize>,
    pub test_adversarial: Vec<usize>,
    pub test_benign: Vec<usize>,
}

/// Stratified split: `round(ratio · n)` of each set goes to training, the
/// rest to testing. Indices within each part are ascending.
pub fn split_dataset(n_adversarial: usize, n_benign: usize, ratio: f64, seed: u64) -> Result<Split, EvalError> {
    if n_adversarial == 0 {
        return Err(EvalError::EmptySet("adversarial"));
    }
    if n_benign == 0 {
        return Err(EvalError::EmptySet("benign"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let part = |n: usize, key: u64| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, domain::SPLIT, key, 1));
        let k = (n as f64 * ratio).round() as usize;
        let (mut train, mut test) = (idx[..k].to_vec(), idx[k..].to_vec());
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    };
    let (train_adversarial, test_adversarial) = part(n_adversarial, 0);
    let (train_benign, test_benign) = part(n_benign, 1);
    Ok(Split { train_adversarial, train_benign, test_adversarial, test_benign })
}

/// Per-label holdout: `round(fraction · n)` clips of each label go to the
/// second (test) list. Labels are keyed by first appearance, so the split
/// depends only on the label sequence and `seed`. Lists are ascending.
pub fn holdout_by_label(labels: &[&str], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(EvalError::InvalidRatio(fraction));
    }
    let mut order: Vec<&str> = Vec::new();
    for l in labels {
        if !order.contains(l) {
            order.push(l);
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (key, label) in order.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *label).collect();
        idx.shuffle(&mut rng::stream(seed, domain::SPLIT, key as u64, 2));
        let k = (idx.len() as f64 * fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Detection rate in percent per ordered (source, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    /// Sorted class names, indexing both rows (source) and columns (target).
    pub labels: Vec<String>,
    /// `None` where a pair has no examples. The diagonal is always zero.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl HeatMap {
    pub fn cell(&self, source: &str, target: &str) -> Option<f64> {
        let s = self.labels.iter().position(|l| l == source)?;
        let t = self.labels.iter().position(|l| l == target)?;
        self.cells[s][t]
    }

    /// Header row and column of labels, one decimal place, empty cells for
    /// pairs without examples.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source/target");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.cells) {
            out.push_str(l);
            for c in row {
                match c {
                    Some(v) => {
                        let _ = write!(out, ",{v:.1}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the heat map from `(source_label, target_label, detected)` rows.
/// `labels` adds classes that may have no rows; all labels are sorted.
pub fn heat_map<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, bool)>, labels: &[String]) -> HeatMap {
    let rows: Vec<_> = rows.into_iter().collect();
    let set: BTreeSet<String> =
        labels.iter().cloned().chain(rows.iter().flat_map(|(s, t, _)| [s.to_string(), t.to_string()])).collect();
    let labels: Vec<String> = set.into_iter().collect();
    let n = labels.len();
    let mut hits = vec![vec![0usize; n]; n];
    let mut totals = vec![vec![0usize; n]; n];
    for (s, t, d) in rows {
        let si = labels.binary_search_by(|l| l.as_str().cmp(s)).unwrap();
        let ti = labels.binary_search_by(|l| l.as_str().cmp(t)).unwrap();
        totals[si][ti] += 1;
        hits[si][ti] += d as usize;
    }
    let cells = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    if s == t {
                        Some(0.0)
                    } else if totals[s][t] == 0 {
                        None
                    } else {
                        Some(100.0 * hits[s][t] as f64 / totals[s][t] as f64)
                    }
                })
                .collect()
        })
        .collect();
    HeatMap { labels, cells }
}

/// Mean spectral centroid in Hz over 25 ms Hann frames with a 10 ms hop,
/// skipping frames below [`SILENT_FRAME_ENERGY`].
pub fn avg_frequency(clip: &AudioClip) -> Result<f64, EvalError> {
    let mono = to_mono(clip);
    let rate = mono.sample_rate() as f64;
    let stft = Stft::from_ms(mono.sample_rate(), 25.0, 10.0);
    let bin_hz = rate / stft.n_fft as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    stft.for_each_frame(mono.samples(), |_, energy, mags| {
        if energy < SILENT_FRAME_ENERGY {
            return;
        }
        let total: f64 = mags.iter().sum();
        let weighted: f64 = mags.iter().enumerate().map(|(k, m)| k as f64 * bin_hz * m).sum();
        sum += weighted / total;
        count += 1;
    });
    if count == 0 {
        return Err(EvalError::SilentClip);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { n, mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-tailed p for the alternative "first mean < second mean".
    pub p_one_tailed: f64,
    pub welch: bool,
}

/// Two-sample t statistic `(mean_a − mean_b) / se`, pooled-variance by
/// default or Welch's unequal-variance form.
pub fn t_test(a: &[f64], b: &[f64], welch: bool) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples(a.len(), b.len()));
    }
    let (sa, sb) = (GroupStats::of(a), GroupStats::of(b));
    let (na, nb) = (sa.n as f64, sb.n as f64);
    let (va, vb) = (sa.std * sa.std, sb.std * sb.std);
    let (se, df) = if welch {
        let (qa, qb) = (va / na, vb / nb);
        let se2 = qa + qb;
        (se2.sqrt(), se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0)))
    } else {
        let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
        ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
    };
    let diff = sa.mean - sb.mean;
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let p = if t.is_finite() && df.is_finite() && df > 0.0 {
        StudentsT::new(0.0, 1.0, df).map(|d| d.cdf(t)).unwrap_or(f64::NAN)
    } else if t == f64::NEG_INFINITY {
        0.0
    } else if t == f64::INFINITY {
        1.0
    } else {
        0.5
    };
    Ok(TTest { t, df, p_one_tailed: p, welch })
}

/// Spectral-centroid shift of each adversarial clip from its source.
pub fn centroid_differences(pairs: &[(AudioClip, AudioClip)]) -> Result<Vec<f64>, EvalError> {
    pairs
        .par_iter()
        .map(|(adv, src)| Ok((avg_frequency(adv)? - avg_frequency(src)?).abs()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqAnalysis {
    pub detected: GroupStats,
    pub undetected: GroupStats,
    /// Tests "undetected shift < detected shift".
    pub test: TTest,
    pub significant_at_0_01: bool,
}

/// Compares centroid shifts of detected and undetected adversarial
/// examples. Each pair is `(adversarial, clean source)`.
pub fn freq_diff_ttest(
    detected_pairs: &[(AudioClip, AudioClip)],
    undetected_pairs: &[(AudioClip, AudioClip)],
    welch: bool,
) -> Result<FreqAnalysis, EvalError> {
    if detected_pairs.len() < 2 || undetected_pairs.len() < 2 {
        return Err(EvalError::TooFewSamples(detected_pairs.len(), undetected_pairs.len()));
    }
    let det = centroid_differences(detected_pairs)?;
    let und = centroid_differences(undetected_pairs)?;
    freq_diff_from_values(&det, &und, welch)
}

/// As [`freq_diff_ttest`] on precomputed shifts.
pub fn freq_diff_from_values(detected: &[f64], undetected: &[f64], welch: bool) -> Result<FreqAnalysis, EvalError> {
    let test = t_test(undetected, detected, welch)?;
    Ok(FreqAnalysis {
        detected: GroupStats::of(detected),
        undetected: GroupStats::of(undetected),
        significant_at_0_01: test.p_one_tailed < 0.01,
        test,
    })
}

/// Classifier accuracy on benign clips split by the detector's flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalAccuracy {
    /// `None` when nothing was flagged.
    pub accuracy_flagged: Option<f64>,
    /// `None` when everything was flagged.
    pub accuracy_unflagged: Option<f64>,
    pub accuracy_overall: Option<f64>,
    pub n_flagged: usize,
    pub n_unflagged: usize,
}

/// From per-clip `(correctly_classified, flagged)` pairs.
pub fn conditional_accuracy_from(outcomes: &[(bool, bool)]) -> ConditionalAccuracy {
    let rate = |sel: &dyn Fn(bool) -> bool| {
        let group: Vec<bool> = outcomes.iter().filter(|(_, f)| sel(*f)).map(|(c, _)| *c).collect();
        let acc = (!group.is_empty()).then(|| group.iter().filter(|&&c| c).count() as f64 / group.len() as f64);
        (acc, group.len())
    };
    let (accuracy_flagged, n_flagged) = rate(&|f| f);
    let (accuracy_unflagged, n_unflagged) = rate(&|f| !f);
    let (accuracy_overall, _) = rate(&|_| true);
    ConditionalAccuracy { accuracy_flagged, accuracy_unflagged, accuracy_overall, n_flagged, n_unflagged }
}

pub fn conditional_accuracy<C: Classifier + ?Sized>(
    clips: &[LabeledClip],
    model: &C,
    flags: &[bool],
) -> Result<ConditionalAccuracy, EvalError> {
    if clips.len() != flags.len() {
        return Err(EvalError::LengthMismatch(flags.len(), clips.len()));
    }
    let correct: Vec<bool> =
        clips.par_iter().map(|c| model.predict(&c.clip).map(|p| p.label() == c.label)).collect::<Result<_, _>>()?;
    Ok(conditional_accuracy_from(&correct.into_iter().zip(flags.iter().copied()).collect::<Vec<_>>()))
}
