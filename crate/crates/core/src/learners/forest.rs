use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, FeatureSampler, GrowParams, TreeModel};
use super::{check_data, check_dim, LabeledVector, LearnerError};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fit each tree on a bootstrap resample.
    pub bootstrap: bool,
    /// Consider `⌈√d⌉` random features at each split.
    pub feature_subsampling: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, min_leaf: 1, bootstrap: true, feature_subsampling: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<TreeModel>,
}

impl ForestModel {
    /// Fraction of trees voting adversarial; at least one half is adversarial.
    pub fn predict_binary(&self, x: &[f64]) -> Result<(bool, f64), LearnerError> {
        check_dim(self.n_features, x)?;
        let votes = self.trees.iter().filter(|t| t.leaf_value(x) >= 0.5).count();
        let frac = votes as f64 / self.trees.len() as f64;
        Ok((frac >= 0.5, frac))
    }
}

/// Random forest of Gini trees. Tree `b` draws its bootstrap sample and
/// split features from its own stream, so trees can be fitted in parallel.
pub fn fit_forest(data: &[LabeledVector], params: &ForestParams, seed: u64) -> Result<ForestModel, LearnerError> {
    let d = check_data(data)?;
    if params.n_trees == 0 {
        return Err(LearnerError::InvalidParams("n_trees must be at least 1".into()));
    }
    let stats: Vec<[f64; 3]> = data.iter().map(|v| [v.label as u8 as f64, 1.0, 0.0]).collect();
    let x: Vec<&[f64]> = data.iter().map(|v| v.features.as_slice()).collect();
    let grow_params = GrowParams { max_depth: params.max_depth, min_leaf: params.min_leaf, criterion: Criterion::Gini };
    let m = (d as f64).sqrt().ceil() as usize;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, domain::FOREST, b as u64, 0);
            let n = data.len();
            let idx: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| r.random_range(0..n)).collect() } else { (0..n).collect() };
            let sampler = params.feature_subsampling.then(|| FeatureSampler { m, rng: &mut r });
            grow(&x, &stats, idx, d, &grow_params, sampler)
        })
        .collect();
    Ok(ForestModel { n_features: d, trees })
}
