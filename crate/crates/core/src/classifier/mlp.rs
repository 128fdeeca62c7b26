//! Fully connected network with rectifier hidden layers and a softmax head.
//!
//! Generic over the float type: models run in `f32`, while gradient checks
//! instantiate the same code at `f64`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Scalar: Float + LinalgScalar + ScalarOperand + std::fmt::Debug + Send + Sync + 'static {}
impl<T: Float + LinalgScalar + ScalarOperand + std::fmt::Debug + Send + Sync + 'static> Scalar for T {}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out × in`, so the layer computes `W x + b`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer gradients, shaped like the layers.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// All-zero parameters for the given layer widths (`dims[0]` is the input).
    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Layer { weights: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        Self { layers }
    }

    /// He-normal weights, zero biases.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(dims);
        for layer in &mut m.layers {
            let fan_in = layer.weights.ncols() as f64;
            let std = (2.0 / fan_in).sqrt();
            layer.weights.mapv_inplace(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from(z * std).unwrap()
            });
        }
        m
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weights.ncols()];
        d.extend(self.layers.iter().map(|l| l.weights.nrows()));
        d
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Logits for a single input vector.
    pub fn logits(&self, x: ArrayView1<T>) -> Array1<T> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&h) + &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            h = z;
        }
        h
    }

    /// Mean cross-entropy over a batch (`batch × in`) and its gradients.
    pub fn loss_and_gradients(&self, x: ArrayView2<T>, labels: &[usize]) -> (T, Gradients<T>) {
        let n = T::from(x.nrows()).unwrap();
        let last = self.layers.len() - 1;
        // Forward, keeping activations.
        let mut acts: Vec<Array2<T>> = vec![x.to_owned()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights.t()) + &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            acts.push(z);
        }
        let logits = acts.pop().unwrap();
        let mut delta = logits.clone();
        let mut loss = T::zero();
        for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
            loss = loss - (row[y].max(T::min_positive_value())).ln();
            row[y] = row[y] - T::one();
        }
        delta.mapv_inplace(|v| v / n);
        loss = loss / n;

        let mut grads: Vec<Layer<T>> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { weights: gw, bias: gb });
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights);
                // ReLU derivative from the stored post-activation.
                ndarray::Zip::from(&mut back).and(input).for_each(|b, &a| {
                    if a <= T::zero() {
                        *b = T::zero();
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, x: ArrayView2<T>, labels: &[usize]) -> T {
        let n = T::from(x.nrows()).unwrap();
        let mut total = T::zero();
        for (row, &y) in x.axis_iter(Axis(0)).zip(labels) {
            let z = self.logits(row);
            let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = z.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln() + max;
            total = total + (lse - z[y]);
        }
        total / n
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Mlp<T>, lr: f64) -> Self {
        let zeros = Mlp::<T>::zeros(&model.dims()).layers;
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, model: &mut Mlp<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = T::from(self.lr * c2.sqrt() / c1).unwrap();
        let (b1, b2, eps) = (T::from(self.beta1).unwrap(), T::from(self.beta2).unwrap(), T::from(self.eps).unwrap());
        let one = T::one();
        for (((layer, g), m), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            let apply = |p: &mut T, g: &T, m: &mut T, v: &mut T| {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                *p = *p - lr * *m / (v.sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(apply);
            ndarray::Zip::from(&mut layer.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(apply);
        }
    }
}

/// Numerically stable softmax in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences against backprop on every parameter tensor.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [7, 6, 5, 3];
        let model = Mlp::<f64>::init(&dims, &mut rng);
        let x = Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0));
        let labels = [0, 2, 1, 1, 0];
        let (_, grads) = model.loss_and_gradients(x.view(), &labels);
        let h = 1e-6;
        for li in 0..model.layers.len() {
            for idx in 0..model.layers[li].weights.len() {
                let (r, c) = (idx / dims[li], idx % dims[li]);
                let mut plus = model.clone();
                plus.layers[li].weights[[r, c]] += h;
                let mut minus = model.clone();
                minus.layers[li].weights[[r, c]] -= h;
                let fd = (plus.loss(x.view(), &labels) - minus.loss(x.view(), &labels)) / (2.0 * h);
                let an = grads.layers[li].weights[[r, c]];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
                assert!(rel < 1e-4 || (fd - an).abs() < 1e-9, "layer {li} w[{r},{c}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Mlp::<f32>::zeros(&[4, 3, 3, 5]);
        let z = m.logits(Array1::from_vec(vec![1.0, -2.0, 3.0, 0.5]).view());
        let p = softmax(&z.iter().map(|&v| v as f64).collect::<Vec<_>>());
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn adam_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = Mlp::<f64>::init(&[2, 8, 2], &mut rng);
        let x = Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9]).unwrap();
        let labels = [0, 0, 1, 1];
        let before = model.loss(x.view(), &labels);
        let mut opt = Adam::new(&model, 1e-2);
        for _ in 0..100 {
            let (_, g) = model.loss_and_gradients(x.view(), &labels);
            opt.update(&mut model, &g);
        }
        assert!(model.loss(x.view(), &labels) < before * 0.5);
    }
}
