use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureExtractor, FeatureSpec};
use super::mlp::{Adam, Mlp};
use super::model::KwModel;
use super::{argmax, ClassifierError};
use crate::audio::{to_mono, LabeledClip};
use crate::rng::{self, domain};

/// Minimum clips per class accepted by [`train`].
pub const MIN_CLIPS_PER_CLASS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-class fraction held out for validation accuracy.
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, learning_rate: 1e-3, validation_fraction: 0.1, hidden: vec![256, 128] }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KwModel,
    pub train_accuracy: f64,
    /// `None` when nothing was held out.
    pub validation_accuracy: Option<f64>,
}

/// Adam on mean cross-entropy over shuffled mini-batches. Class names are
/// the sorted distinct labels. Deterministic for a given seed.
pub fn train(dataset: &[LabeledClip], config: &TrainConfig, seed: u64) -> Result<TrainOutcome, ClassifierError> {
    train_with_spec(dataset, config, FeatureSpec::default(), seed)
}

pub fn train_with_spec(
    dataset: &[LabeledClip],
    config: &TrainConfig,
    spec: FeatureSpec,
    seed: u64,
) -> Result<TrainOutcome, ClassifierError> {
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(ClassifierError::InsufficientData("epochs, batch size and rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(ClassifierError::InsufficientData("validation fraction must be in [0, 1)".into()));
    }
    let classes: Vec<String> = dataset.iter().map(|c| c.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(ClassifierError::InsufficientData(format!("{} class(es); need at least 2", classes.len())));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (i, c) in dataset.iter().enumerate() {
        by_class[classes.binary_search(&c.label).unwrap()].push(i);
    }
    for (name, members) in classes.iter().zip(&by_class) {
        if members.len() < MIN_CLIPS_PER_CLASS {
            return Err(ClassifierError::InsufficientData(format!(
                "class {name:?} has {} clips; need at least {MIN_CLIPS_PER_CLASS}",
                members.len()
            )));
        }
    }

    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    for (ci, members) in by_class.iter().enumerate() {
        let mut m = members.clone();
        m.shuffle(&mut rng::stream(seed, domain::SPLIT, ci as u64, 0));
        let n_val = (members.len() as f64 * config.validation_fraction).round() as usize;
        val_idx.extend_from_slice(&m[..n_val]);
        train_idx.extend_from_slice(&m[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let extractor = FeatureExtractor::new(spec);
    let features = |idx: &[usize]| -> Array2<f32> {
        let rows: Vec<Vec<f32>> = idx
            .par_iter()
            .map(|&i| {
                let clip = to_mono(&dataset[i].clip);
                extractor.extract(&clip).data.iter().map(|&v| v as f32).collect()
            })
            .collect();
        let mut x = Array2::zeros((idx.len(), spec.feature_len()));
        for (mut row, r) in x.axis_iter_mut(Axis(0)).zip(rows) {
            row.assign(&ndarray::ArrayView1::from(&r[..]));
        }
        x
    };
    let label_of = |idx: &[usize]| -> Vec<usize> {
        idx.iter().map(|&i| classes.binary_search(&dataset[i].label).unwrap()).collect()
    };
    let mut x_train = features(&train_idx);
    let y_train = label_of(&train_idx);
    let mut x_val = features(&val_idx);
    let y_val = label_of(&val_idx);

    // One scalar mean and deviation over all training cells.
    let count = x_train.len() as f64;
    let mean = x_train.iter().map(|&v| v as f64).sum::<f64>() / count;
    let var = x_train.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt().max(1e-8);
    let normalize = |v: &mut f32| *v = ((*v as f64 - mean) / std) as f32;
    x_train.map_inplace(normalize);
    x_val.map_inplace(normalize);

    let mut dims = vec![spec.feature_len()];
    dims.extend_from_slice(&config.hidden);
    dims.push(classes.len());
    let mut net = Mlp::<f32>::init(&dims, &mut rng::stream(seed, domain::INIT, 0, 0));
    let mut opt = Adam::new(&net, config.learning_rate);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(seed, domain::SHUFFLE, epoch as u64, 0));
        for batch in order.chunks(config.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let (_, grads) = net.loss_and_gradients(xb.view(), &yb);
            opt.update(&mut net, &grads);
        }
        log::debug!("epoch {epoch}: train loss {:.4}", net.loss(x_train.view(), &y_train));
    }

    let acc = |x: &Array2<f32>, y: &[usize]| -> f64 {
        let hits = x
            .axis_iter(Axis(0))
            .zip(y)
            .filter(|(row, &label)| {
                let z: Vec<f64> = net.logits(*row).iter().map(|&v| v as f64).collect();
                argmax(&z) == label
            })
            .count();
        hits as f64 / y.len() as f64
    };
    let train_accuracy = acc(&x_train, &y_train);
    let validation_accuracy = (!y_val.is_empty()).then(|| acc(&x_val, &y_val));

    // Fold the normalization into the first layer so inference takes raw features.
    let first = &mut net.layers[0];
    let row_sums = first.weights.sum_axis(Axis(1));
    let (inv, shift) = ((1.0 / std) as f32, (mean / std) as f32);
    first.weights.mapv_inplace(|w| w * inv);
    first.bias.zip_mut_with(&row_sums, |b, &s| *b -= shift * s);

    let model = KwModel::new(spec, net, classes)?;
    Ok(TrainOutcome { model, train_accuracy, validation_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::classifier::Classifier;
    use rand::Rng;
    use std::path::PathBuf;

    fn tone_dataset(per_class: usize) -> Vec<LabeledClip> {
        let mut rng = rng::stream(99, domain::SYNTH, 0, 0);
        let mut out = Vec::new();
        for (label, f) in [("high", 880.0), ("low", 440.0)] {
            for _ in 0..per_class {
                let phase: f64 = rng.random_range(0.0..6.28);
                let amp: f64 = rng.random_range(0.2..0.5);
                let samples = (0..16000)
                    .map(|n| {
                        amp * (2.0 * std::f64::consts::PI * f * n as f64 / 16000.0 + phase).sin()
                            + rng.random_range(-0.05..0.05)
                    })
                    .collect();
                out.push(LabeledClip { path: PathBuf::new(), label: label.into(), clip: AudioClip::mono(samples, 16000) });
            }
        }
        out
    }

    #[test]
    fn separable_tones_train_to_high_accuracy() {
        let data = tone_dataset(50);
        let cfg = TrainConfig { validation_fraction: 0.2, ..TrainConfig::default() };
        let out = train(&data, &cfg, 5).unwrap();
        assert!(out.validation_accuracy.unwrap() >= 0.95, "{:?}", out.validation_accuracy);
        assert_eq!(out.model.class_names(), ["high", "low"]);
        // Folded normalization gives the same decisions on raw clips.
        let correct = data.iter().filter(|c| out.model.predict(&c.clip).unwrap().label() == c.label).count();
        assert!(correct as f64 / data.len() as f64 >= 0.95);
    }

    #[test]
    fn same_seed_same_weights() {
        let data = tone_dataset(20);
        let cfg = TrainConfig { epochs: 2, hidden: vec![8, 8], ..TrainConfig::default() };
        let a = train(&data, &cfg, 11).unwrap();
        let b = train(&data, &cfg, 11).unwrap();
        assert_eq!(a.model.network(), b.model.network());
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<_> = tone_dataset(20).into_iter().filter(|c| c.label == "low").collect();
        assert!(matches!(train(&data, &TrainConfig::default(), 0), Err(ClassifierError::InsufficientData(_))));
    }

    #[test]
    fn small_class_is_rejected() {
        let mut data = tone_dataset(20);
        data.pop();
        assert!(matches!(train(&data, &TrainConfig::default(), 0), Err(ClassifierError::InsufficientData(_))));
    }
}
