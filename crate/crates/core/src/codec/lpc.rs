//! Linear prediction analysis and the perceptual weighting filter
//! `W(z) = A(z/γ1) / A(z/γ2)`.

use super::CodecError;

/// Conventional CELP bandwidth-expansion factors.
pub const DEFAULT_GAMMA1: f64 = 0.9;
pub const DEFAULT_GAMMA2: f64 = 0.6;

/// Prediction polynomial `A(z) = 1 - Σ a_k z^-k` plus weighting factors.
///
/// A freshly analysed model carries `gamma1 = gamma2 = 1`, for which the
/// weighting filter is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl LpcModel {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs, reflection: Vec::new(), gamma1: 1.0, gamma2: 1.0 }
    }

    pub fn with_gammas(mut self, gamma1: f64, gamma2: f64) -> Self {
        self.gamma1 = gamma1;
        self.gamma2 = gamma2;
        self
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficients of `A(z/γ)`: `{1, -a_1 γ, -a_2 γ², ...}`.
    pub fn scaled_polynomial(&self, gamma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(1.0);
        let mut g = 1.0;
        for &a in &self.coeffs {
            g *= gamma;
            out.push(-a * g);
        }
        out
    }

    /// Numerator and denominator of the weighting filter.
    pub fn weighting_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        (self.scaled_polynomial(self.gamma1), self.scaled_polynomial(self.gamma2))
    }

    /// Prediction error `e[n] = x[n] - Σ a_k x[n-k]`, with `history` holding the
    /// samples immediately preceding `x` (most recent last; missing ones are 0).
    pub fn residual(&self, x: &[f64], history: &[f64]) -> Vec<f64> {
        let p = self.order();
        let at = |i: isize| -> f64 {
            if i >= 0 {
                x[i as usize]
            } else {
                let h = history.len() as isize + i;
                if h >= 0 {
                    history[h as usize]
                } else {
                    0.0
                }
            }
        };
        (0..x.len())
            .map(|n| {
                let mut e = x[n];
                for k in 1..=p {
                    e -= self.coeffs[k - 1] * at(n as isize - k as isize);
                }
                e
            })
            .collect()
    }
}

/// Autocorrelation method with Levinson–Durbin recursion.
///
/// The recursion stops early (remaining coefficients zero) if a reflection
/// coefficient reaches the unit circle, so the returned polynomial is always
/// minimum phase.
pub fn lpc_analyze(frame: &[f64], order: usize) -> Result<LpcModel, CodecError> {
    if frame.len() < 2 * order {
        return Err(CodecError::InvalidFrame { len: frame.len(), order });
    }
    let r: Vec<f64> = (0..=order)
        .map(|lag| frame.iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum())
        .collect();
    if !(r[0] > f64::MIN_POSITIVE) {
        return Err(CodecError::SilentFrame);
    }
    let mut a = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    for i in 1..=order {
        let acc = r[i] - (1..i).map(|j| a[j - 1] * r[i - j]).sum::<f64>();
        let k = acc / err;
        if !k.is_finite() || k.abs() >= 1.0 - 1e-12 {
            break;
        }
        let prev = a.clone();
        a[i - 1] = k;
        for j in 1..i {
            a[j - 1] = prev[j - 1] - k * prev[i - j - 1];
        }
        err *= 1.0 - k * k;
        reflection.push(k);
    }
    Ok(LpcModel { coeffs: a, reflection, gamma1: 1.0, gamma2: 1.0 })
}

/// Direct-form I pole–zero filter with persistent state.
///
/// `den[0] = 1` is assumed. The recursion is arranged as
/// `y = b0·x + Σ b_k·(x − y)[n−k] + Σ (b_k − a_k)·y[n−k]`, which equals the
/// usual difference equation but returns the input bit-exactly when the
/// numerator and denominator are equal.
#[derive(Debug, Clone)]
pub struct PoleZeroFilter {
    num: Vec<f64>,
    den: Vec<f64>,
    x_hist: Vec<f64>,
    y_hist: Vec<f64>,
}

impl PoleZeroFilter {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        let n = num.len().max(den.len()).max(1);
        let mut num = num;
        let mut den = den;
        num.resize(n, 0.0);
        den.resize(n, 0.0);
        Self { num, den, x_hist: vec![0.0; n - 1], y_hist: vec![0.0; n - 1] }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let mut acc = 0.0;
        for k in 1..self.num.len() {
            let (xp, yp) = (self.x_hist[k - 1], self.y_hist[k - 1]);
            acc += self.num[k] * (xp - yp) + (self.num[k] - self.den[k]) * yp;
        }
        let y = self.num[0] * x + acc;
        if !self.x_hist.is_empty() {
            self.x_hist.rotate_right(1);
            self.y_hist.rotate_right(1);
            self.x_hist[0] = x;
            self.y_hist[0] = y;
        }
        y
    }
}

/// Applies `W(z)` to `signal` from a zero initial state.
pub fn weighting_filter(signal: &[f64], model: &LpcModel) -> Vec<f64> {
    let (num, den) = model.weighting_coefficients();
    let mut f = PoleZeroFilter::new(num, den);
    signal.iter().map(|&x| f.process(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1(coef: f64, len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(len);
        let mut prev = 0.0;
        for _ in 0..len {
            let e: f64 = rng.sample(StandardNormal);
            prev = coef * prev + e;
            x.push(prev);
        }
        x
    }

    /// Yule–Walker estimate for AR(1): r1 / r0.
    fn yule_walker_ar1(x: &[f64]) -> f64 {
        let r0: f64 = x.iter().map(|v| v * v).sum();
        let r1: f64 = x.windows(2).map(|w| w[0] * w[1]).sum();
        r1 / r0
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let x = ar1(0.9, 4000, 11);
        let oracle = yule_walker_ar1(&x);
        assert!((oracle - 0.9).abs() < 0.05);
        let m = lpc_analyze(&x, 1).unwrap();
        assert!((m.coeffs[0] - oracle).abs() < 1e-12);
        let m10 = lpc_analyze(&x, 10).unwrap();
        assert!((m10.coeffs[0] - 0.9).abs() < 0.05);
    }

    #[test]
    fn white_noise_has_small_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let m = lpc_analyze(&x, 10).unwrap();
        assert!(m.coeffs.iter().all(|a| a.abs() <= 0.2), "{:?}", m.coeffs);
    }

    #[test]
    fn silent_and_short_frames() {
        assert!(matches!(lpc_analyze(&[0.0; 320], 10), Err(CodecError::SilentFrame)));
        assert!(matches!(lpc_analyze(&[1.0; 5], 10), Err(CodecError::InvalidFrame { .. })));
    }

    #[test]
    fn reflection_coefficients_inside_unit_circle() {
        let x: Vec<f64> = (0..320).map(|n| (n as f64 * 0.3).sin() + 0.5 * (n as f64 * 1.1).sin()).collect();
        let m = lpc_analyze(&x, 10).unwrap();
        assert!(m.reflection.iter().all(|k| k.abs() < 1.0));
    }

    #[test]
    fn weighting_coefficient_scaling() {
        let m = LpcModel::new(vec![0.9]).with_gammas(0.9, 0.6);
        let (num, den) = m.weighting_coefficients();
        assert_eq!(num.len(), 2);
        assert_eq!(num[0], 1.0);
        assert!((num[1] + 0.81).abs() < 1e-15);
        assert!((den[1] + 0.54).abs() < 1e-15);
    }

    #[test]
    fn equal_gammas_and_order_zero_are_identity() {
        let x = ar1(0.7, 500, 3);
        let m = lpc_analyze(&x, 10).unwrap().with_gammas(0.8, 0.8);
        let y = weighting_filter(&x, &m);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
        let z = weighting_filter(&x, &LpcModel::new(vec![]).with_gammas(0.9, 0.6));
        assert_eq!(z, x);
    }

    #[test]
    fn weighting_filter_is_linear() {
        let x = ar1(0.5, 300, 1);
        let y = ar1(-0.3, 300, 2);
        let m = lpc_analyze(&ar1(0.9, 2000, 9), 10).unwrap().with_gammas(0.9, 0.6);
        let (alpha, beta) = (0.7, -1.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = weighting_filter(&mix, &m);
        let wx = weighting_filter(&x, &m);
        let wy = weighting_filter(&y, &m);
        for i in 0..mix.len() {
            assert!((lhs[i] - (alpha * wx[i] + beta * wy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_response_decays() {
        let m = lpc_analyze(&ar1(0.95, 4000, 21), 10).unwrap().with_gammas(0.9, 0.6);
        let mut imp = vec![0.0; 2000];
        imp[0] = 1.0;
        let h = weighting_filter(&imp, &m);
        assert!(h[1001..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn residual_inverts_synthesis() {
        let x = ar1(0.9, 200, 4);
        let m = LpcModel::new(vec![0.9]);
        let e = m.residual(&x, &[]);
        let mut y = vec![0.0; x.len()];
        for n in 0..x.len() {
            y[n] = e[n] + if n > 0 { 0.9 * y[n - 1] } else { 0.0 };
        }
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
