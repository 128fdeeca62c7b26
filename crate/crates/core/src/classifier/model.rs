use std::sync::Arc;

use ndarray::Array1;

use super::features::{FeatureExtractor, FeatureSpec};
use super::mlp::{softmax, Mlp};
use super::{Classifier, ClassifierError, ProbVector};
use crate::audio::{to_mono, AudioClip};

/// Log-mel front end followed by a rectifier MLP with a softmax head.
#[derive(Debug, Clone)]
pub struct KwModel {
    net: Mlp<f32>,
    extractor: FeatureExtractor,
    class_names: Arc<[String]>,
}

impl KwModel {
    /// Checks that layer shapes chain from the feature length to one output
    /// per class.
    pub fn new(spec: FeatureSpec, net: Mlp<f32>, class_names: Vec<String>) -> Result<Self, ClassifierError> {
        if class_names.len() < 2 {
            return Err(ClassifierError::CorruptPayload(format!("{} classes", class_names.len())));
        }
        if net.layers.is_empty() {
            return Err(ClassifierError::CorruptPayload("no layers".into()));
        }
        if net.input_len() != spec.feature_len() || net.output_len() != class_names.len() {
            return Err(ClassifierError::CorruptPayload(format!(
                "layer dims {:?} do not match {} features and {} classes",
                net.dims(),
                spec.feature_len(),
                class_names.len()
            )));
        }
        for (i, pair) in net.layers.windows(2).enumerate() {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return Err(ClassifierError::CorruptPayload(format!("layer {i} does not chain")));
            }
        }
        for layer in &net.layers {
            if layer.bias.len() != layer.weights.nrows() {
                return Err(ClassifierError::CorruptPayload("bias length".into()));
            }
        }
        Ok(Self { net, extractor: FeatureExtractor::new(spec), class_names: class_names.into() })
    }

    /// All-zero weights with the given hidden widths; predicts uniformly.
    pub fn zeros(spec: FeatureSpec, hidden: &[usize], class_names: Vec<String>) -> Self {
        let mut dims = vec![spec.feature_len()];
        dims.extend_from_slice(hidden);
        dims.push(class_names.len());
        Self::new(spec, Mlp::zeros(&dims), class_names).expect("consistent dims")
    }

    pub fn feature_spec(&self) -> &FeatureSpec {
        self.extractor.spec()
    }

    pub fn network(&self) -> &Mlp<f32> {
        &self.net
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.net.dims()
    }

    /// Pre-softmax scores.
    pub fn logits(&self, clip: &AudioClip) -> Vec<f64> {
        let mono;
        let clip = if clip.is_mono() {
            clip
        } else {
            mono = to_mono(clip);
            &mono
        };
        let feats = self.extractor.extract(clip);
        let x: Array1<f32> = feats.data.iter().map(|&v| v as f32).collect();
        self.net.logits(x.view()).iter().map(|&v| v as f64).collect()
    }
}

impl Classifier for KwModel {
    fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError> {
        Ok(self.predict_with_logits(clip)?.0)
    }

    fn predict_with_logits(&self, clip: &AudioClip) -> Result<(ProbVector, Vec<f64>), ClassifierError> {
        let logits = self.logits(clip);
        let probs = softmax(&logits);
        Ok((ProbVector::new(probs, self.class_names.clone())?, logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let m = KwModel::zeros(FeatureSpec::default(), &[256, 128], names(12));
        let clip = AudioClip::mono((0..16000).map(|n| (n as f64 * 0.01).sin() * 0.4).collect(), 16000);
        let p = m.predict(&clip).unwrap();
        assert!(p.probs().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-12));
    }

    #[test]
    fn prediction_is_deterministic_and_normalized() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let spec = FeatureSpec::default();
        let net = Mlp::init(&[spec.feature_len(), 16, 3], &mut rng);
        let m = KwModel::new(spec, net, names(3)).unwrap();
        let clip = AudioClip::mono((0..12000).map(|n| ((n * 7919) % 101) as f64 / 200.0 - 0.25).collect(), 16000);
        let a = m.predict(&clip).unwrap();
        let b = m.predict(&clip).unwrap();
        assert_eq!(a, b);
        assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let spec = FeatureSpec::default();
        assert!(KwModel::new(spec, Mlp::zeros(&[10, 4, 3]), names(3)).is_err());
        assert!(KwModel::new(spec, Mlp::zeros(&[spec.feature_len(), 4, 2]), names(3)).is_err());
    }
}
