use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowParams, TreeModel};
use super::{check_both_classes, check_data, check_dim, LabeledVector, LearnerError};

/// L2 regularization added to each leaf's hessian sum.
pub const GBT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { rounds: 100, learning_rate: 0.1, max_depth: 3, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub n_features: usize,
    /// Log-odds of the training base rate.
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeModel>,
    /// Mean training log-loss before round 1 and after each round.
    pub train_loss: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean binary cross-entropy of log-odds `f` against labels.
pub fn log_loss(f: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            // log(1 + e^{-z}) for positives, log(1 + e^{z}) for negatives.
            let m = if y { -z } else { z };
            m.max(0.0) + (-m.abs()).exp().ln_1p()
        })
        .sum();
    total / f.len() as f64
}

impl GbtModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.leaf_value(x)).sum::<f64>()
    }

    /// Adversarial iff `σ(F) ≥ 0.5`; the score is `σ(F)`.
    pub fn predict_binary(&self, x: &[f64]) -> Result<(bool, f64), LearnerError> {
        check_dim(self.n_features, x)?;
        let p = sigmoid(self.raw_score(x));
        Ok((p >= 0.5, p))
    }
}

/// Gradient boosting on logistic loss: each round fits a squared-error
/// regression tree to the residuals `y − σ(F)` and sets each leaf to the
/// Newton step `Σ r / (Σ σ(1−σ) + λ)`.
pub fn fit_gbt(data: &[LabeledVector], params: &GbtParams) -> Result<GbtModel, LearnerError> {
    let d = check_data(data)?;
    check_both_classes(data)?;
    if !(params.learning_rate >= 0.0 && params.learning_rate.is_finite()) {
        return Err(LearnerError::InvalidParams("learning_rate must be finite and non-negative".into()));
    }
    let labels: Vec<bool> = data.iter().map(|v| v.label).collect();
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let base = (pos / (data.len() as f64 - pos)).ln();
    let x: Vec<&[f64]> = data.iter().map(|v| v.features.as_slice()).collect();
    let mut f = vec![base; data.len()];
    let mut model =
        GbtModel { n_features: d, base, learning_rate: params.learning_rate, trees: Vec::new(), train_loss: vec![log_loss(&f, &labels)] };
    let grow_params =
        GrowParams { max_depth: params.max_depth, min_leaf: params.min_leaf, criterion: Criterion::Newton { lambda: GBT_LAMBDA } };
    for _ in 0..params.rounds {
        let stats: Vec<[f64; 3]> = f
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| {
                let p = sigmoid(z);
                [y as u8 as f64 - p, 1.0, p * (1.0 - p)]
            })
            .collect();
        let tree = grow(&x, &stats, (0..data.len()).collect(), d, &grow_params, None);
        for (fi, xi) in f.iter_mut().zip(&x) {
            *fi += params.learning_rate * tree.leaf_value(xi);
        }
        model.trees.push(tree);
        model.train_loss.push(log_loss(&f, &labels));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(x: &[f64], y: bool) -> LabeledVector {
        LabeledVector::new(x.to_vec(), y)
    }

    #[test]
    fn zero_rate_predicts_base_rate() {
        let data: Vec<_> = (0..10).map(|i| lv(&[i as f64], i < 7)).collect();
        let m = fit_gbt(&data, &GbtParams { learning_rate: 0.0, ..GbtParams::default() }).unwrap();
        assert!(data.iter().all(|v| m.predict_binary(&v.features).unwrap().0));
    }

    #[test]
    fn separable_reaches_perfect_accuracy() {
        let data: Vec<_> = (0..20).map(|i| lv(&[i as f64], i >= 10)).collect();
        let m = fit_gbt(&data, &GbtParams { rounds: 20, learning_rate: 0.3, ..GbtParams::default() }).unwrap();
        assert!(data.iter().all(|v| m.predict_binary(&v.features).unwrap().0 == v.label));
    }

    #[test]
    fn loss_never_increases() {
        let data: Vec<_> =
            (0..60).map(|i| lv(&[(i * 37 % 17) as f64, (i * 11 % 7) as f64], (i * 13 % 5) < 2 || i % 9 == 0)).collect();
        let m = fit_gbt(&data, &GbtParams::default()).unwrap();
        assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", m.train_loss);
    }

    #[test]
    fn log_loss_matches_direct_formula() {
        let f = [0.3, -1.2, 4.0];
        let y = [true, false, false];
        let direct: f64 = f
            .iter()
            .zip(&y)
            .map(|(&z, &t)| {
                let p = sigmoid(z);
                -(if t { p.ln() } else { (1.0 - p).ln() })
            })
            .sum::<f64>()
            / 3.0;
        assert!((log_loss(&f, &y) - direct).abs() < 1e-12);
    }
}
