use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_data, check_dim, LabeledVector, LearnerError};

/// Gain differences below this count as ties.
pub(crate) const GAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    /// Samples with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Adversarial probability (classification) or additive value (regression).
    Leaf { value: f64 },
}

/// Node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub n_features: usize,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 8, min_leaf: 1 }
    }
}

impl TreeModel {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Adversarial iff the leaf's adversarial fraction is at least one half.
    pub fn predict_binary(&self, x: &[f64]) -> Result<(bool, f64), LearnerError> {
        check_dim(self.n_features, x)?;
        let p = self.leaf_value(x);
        Ok((p >= 0.5, p))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// CART classification tree with Gini impurity. Splits are tried at
/// midpoints of sorted distinct values; the best gain wins, ties going to
/// the lower feature index and then the lower threshold. An impure node is
/// split even when the best gain is zero, so depth-limited trees can still
/// separate interactions such as XOR. `seed` is accepted for interface
/// uniformity; a single tree uses every feature and draws nothing.
pub fn fit_tree(data: &[LabeledVector], params: &TreeParams, seed: u64) -> Result<TreeModel, LearnerError> {
    let _ = seed;
    let d = check_data(data)?;
    let stats: Vec<[f64; 3]> = data.iter().map(|v| [v.label as u8 as f64, 1.0, 0.0]).collect();
    let x: Vec<&[f64]> = data.iter().map(|v| v.features.as_slice()).collect();
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(grow(&x, &stats, idx, d, &GrowParams { max_depth: params.max_depth, min_leaf: params.min_leaf, criterion: Criterion::Gini }, None))
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Stats: `[positives, count, _]`; leaf = positive fraction.
    Gini,
    /// Stats: `[gradient, count, hessian]`; squared-error splits, Newton leaves.
    Newton { lambda: f64 },
}

impl Criterion {
    /// Node cost to be minimized, scaled by node size.
    fn cost(self, s: &[f64; 3]) -> f64 {
        match self {
            Criterion::Gini => {
                if s[1] == 0.0 {
                    0.0
                } else {
                    2.0 * s[0] * (s[1] - s[0]) / s[1]
                }
            }
            Criterion::Newton { .. } => {
                if s[1] == 0.0 {
                    0.0
                } else {
                    -s[0] * s[0] / s[1]
                }
            }
        }
    }

    fn leaf(self, s: &[f64; 3]) -> f64 {
        match self {
            Criterion::Gini => s[0] / s[1],
            Criterion::Newton { lambda } => s[0] / (s[2] + lambda),
        }
    }

    fn is_pure(self, s: &[f64; 3]) -> bool {
        match self {
            Criterion::Gini => s[0] == 0.0 || s[0] == s[1],
            Criterion::Newton { .. } => false,
        }
    }

    /// Whether a zero-gain split of an impure node is allowed.
    fn splits_at_zero_gain(self) -> bool {
        matches!(self, Criterion::Gini)
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub criterion: Criterion,
}

/// Per-split feature subsampling: `m` distinct features drawn from `rng`.
pub(crate) struct FeatureSampler<'a> {
    pub m: usize,
    pub rng: &'a mut ChaCha8Rng,
}

fn sum(stats: &[[f64; 3]], idx: &[usize]) -> [f64; 3] {
    let mut s = [0.0; 3];
    for &i in idx {
        for k in 0..3 {
            s[k] += stats[i][k];
        }
    }
    s
}

/// Grows a tree depth-first over `idx` (duplicates allowed, as in bootstrap
/// resamples). Nodes are stored in creation order.
pub(crate) fn grow(
    x: &[&[f64]],
    stats: &[[f64; 3]],
    idx: Vec<usize>,
    d: usize,
    params: &GrowParams,
    mut sampler: Option<FeatureSampler<'_>>,
) -> TreeModel {
    let mut nodes = Vec::new();
    build(x, stats, idx, d, 0, params, &mut sampler, &mut nodes);
    TreeModel { n_features: d, nodes }
}

#[allow(clippy::too_many_arguments)]
fn build(
    x: &[&[f64]],
    stats: &[[f64; 3]],
    idx: Vec<usize>,
    d: usize,
    depth: usize,
    params: &GrowParams,
    sampler: &mut Option<FeatureSampler<'_>>,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    let total = sum(stats, &idx);
    let crit = params.criterion;
    nodes.push(Node::Leaf { value: crit.leaf(&total) });
    if depth >= params.max_depth || crit.is_pure(&total) || idx.len() < 2 * params.min_leaf.max(1) {
        return me;
    }
    let features: Vec<usize> = match sampler {
        Some(s) if s.m < d => {
            let mut f = sample(s.rng, d, s.m).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..d).collect(),
    };
    let parent = crit.cost(&total);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.clone();
    for &f in &features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = [0.0; 3];
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            for k in 0..3 {
                left[k] += stats[i][k];
            }
            let (lo, hi) = (x[i][f], x[order[pos + 1]][f]);
            if lo == hi || pos + 1 < params.min_leaf || order.len() - pos - 1 < params.min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
            let gain = parent - crit.cost(&left) - crit.cost(&right);
            if best.is_none_or(|(g, _, _)| gain > g + GAIN_TOL) {
                best = Some((gain, f, lo + (hi - lo) / 2.0));
            }
        }
    }
    let Some((gain, feature, threshold)) = best else { return me };
    let allowed = if crit.splits_at_zero_gain() { gain > -GAIN_TOL } else { gain > GAIN_TOL };
    if !allowed {
        return me;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] < threshold);
    let left = build(x, stats, l, d, depth + 1, params, sampler, nodes);
    let right = build(x, stats, r, d, depth + 1, params, sampler, nodes);
    nodes[me] = Node::Split { feature, threshold, left, right };
    me
}
