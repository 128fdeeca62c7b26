use serde::{Deserialize, Serialize};

use super::tree::GAIN_TOL;
use super::{check_both_classes, check_data, check_dim, LabeledVector, LearnerError};

/// Weighted error assigned when a stump is perfect, keeping α finite.
const MIN_ERROR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaParams {
    pub rounds: usize,
}

impl Default for AdaParams {
    fn default() -> Self {
        Self { rounds: 100 }
    }
}

/// Depth-one classifier voting `left` when `x[feature] < threshold`, else
/// `right`; votes are ±1 with +1 adversarial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: i8,
    pub right: i8,
}

impl Stump {
    pub fn vote(&self, x: &[f64]) -> f64 {
        (if x[self.feature] < self.threshold { self.left } else { self.right }) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaModel {
    pub n_features: usize,
    pub stumps: Vec<Stump>,
    pub alphas: Vec<f64>,
    /// Weighted training error of each kept stump.
    pub errors: Vec<f64>,
}

impl AdaModel {
    /// `Σ α h(x)`; non-negative is adversarial.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.stumps.iter().zip(&self.alphas).map(|(s, a)| a * s.vote(x)).sum()
    }

    /// Score is the margin normalized by `Σ α` (zero for an empty model).
    pub fn predict_binary(&self, x: &[f64]) -> Result<(bool, f64), LearnerError> {
        check_dim(self.n_features, x)?;
        let m = self.margin(x);
        let total: f64 = self.alphas.iter().sum();
        Ok((m >= 0.0, if total > 0.0 { m / total } else { 0.0 }))
    }

    /// `Π 2√(ε(1−ε))` over the kept rounds.
    pub fn error_bound(&self) -> f64 {
        self.errors.iter().map(|e| 2.0 * (e * (1.0 - e)).sqrt()).product()
    }
}

fn sign(pos: f64, neg: f64) -> i8 {
    if pos >= neg {
        1
    } else {
        -1
    }
}

/// Minimum weighted-error stump; ties go to the lower feature, then the
/// lower threshold. Falls back to a constant vote when no split exists.
fn fit_stump(data: &[LabeledVector], w: &[f64], d: usize) -> (Stump, f64) {
    let (tot_pos, tot_neg) = data.iter().zip(w).fold((0.0, 0.0), |(p, n), (v, &wi)| if v.label { (p + wi, n) } else { (p, n + wi) });
    let c = sign(tot_pos, tot_neg);
    let mut best = (Stump { feature: 0, threshold: 0.0, left: c, right: c }, tot_pos.min(tot_neg));
    let mut found_split = false;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for f in 0..d {
        order.sort_by(|&a, &b| data[a].features[f].total_cmp(&data[b].features[f]));
        let (mut lp, mut ln) = (0.0, 0.0);
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            if data[i].label {
                lp += w[i];
            } else {
                ln += w[i];
            }
            let (lo, hi) = (data[i].features[f], data[order[pos + 1]].features[f]);
            if lo == hi {
                continue;
            }
            let (rp, rn) = (tot_pos - lp, tot_neg - ln);
            let (l, r) = (sign(lp, ln), sign(rp, rn));
            let err = (if l > 0 { ln } else { lp }) + (if r > 0 { rn } else { rp });
            if !found_split || err < best.1 - GAIN_TOL {
                best = (Stump { feature: f, threshold: lo + (hi - lo) / 2.0, left: l, right: r }, err);
                found_split = true;
            }
        }
    }
    best
}

/// Discrete AdaBoost over stumps. Stops early when a stump's weighted
/// error reaches one half (the stump is dropped) or zero (the stump is kept
/// with a large finite weight).
pub fn fit_adaboost(data: &[LabeledVector], params: &AdaParams) -> Result<AdaModel, LearnerError> {
    Ok(fit_adaboost_traced(data, params)?.0)
}

/// As [`fit_adaboost`], also returning the sample weights after each round.
pub fn fit_adaboost_traced(data: &[LabeledVector], params: &AdaParams) -> Result<(AdaModel, Vec<Vec<f64>>), LearnerError> {
    let d = check_data(data)?;
    check_both_classes(data)?;
    let n = data.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut model = AdaModel { n_features: d, stumps: Vec::new(), alphas: Vec::new(), errors: Vec::new() };
    let mut history = Vec::new();
    for _ in 0..params.rounds {
        let (stump, err) = fit_stump(data, &w, d);
        if err >= 0.5 {
            break;
        }
        let perfect = err <= 0.0;
        let e = err.max(MIN_ERROR);
        let alpha = 0.5 * ((1.0 - e) / e).ln();
        for (wi, v) in w.iter_mut().zip(data) {
            let y = if v.label { 1.0 } else { -1.0 };
            *wi *= (-alpha * y * stump.vote(&v.features)).exp();
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|wi| *wi /= z);
        model.stumps.push(stump);
        model.alphas.push(alpha);
        model.errors.push(err.max(0.0));
        history.push(w.clone());
        if perfect {
            break;
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(x: &[f64], y: bool) -> LabeledVector {
        LabeledVector::new(x.to_vec(), y)
    }

    #[test]
    fn separable_stops_after_one_round() {
        let data: Vec<_> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&v| lv(&[v], v > 0.0)).collect();
        let m = fit_adaboost(&data, &AdaParams::default()).unwrap();
        assert_eq!(m.stumps.len(), 1);
        assert!(m.alphas[0].is_finite());
        assert!(data.iter().all(|v| m.predict_binary(&v.features).unwrap().0 == v.label));
    }

    #[test]
    fn weights_stay_normalized() {
        let data: Vec<_> = (0..30).map(|i| lv(&[(i * 7 % 11) as f64, (i * 5 % 13) as f64], (i * 3) % 4 < 2)).collect();
        let (_, history) = fit_adaboost_traced(&data, &AdaParams { rounds: 15 }).unwrap();
        assert!(!history.is_empty());
        for w in &history {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stumps_cannot_solve_xor() {
        let data = vec![lv(&[0.0, 0.0], false), lv(&[0.0, 1.0], true), lv(&[1.0, 0.0], true), lv(&[1.0, 1.0], false)];
        let m = fit_adaboost(&data, &AdaParams { rounds: 10 }).unwrap();
        let acc = data.iter().filter(|v| m.predict_binary(&v.features).unwrap().0 == v.label).count();
        assert!(acc as f64 / 4.0 <= 0.75);
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![lv(&[0.0], true), lv(&[1.0], true)];
        assert_eq!(fit_adaboost(&data, &AdaParams::default()), Err(LearnerError::SingleClass));
    }
}
