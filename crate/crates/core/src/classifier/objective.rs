//! Multinomial logistic regression objective over sparse features.
//!
//! Loss for parameters `(W, b)` over samples `(x_i, y_i)`:
//! `L = (1/n) Σ_i −ln softmax(Wᵀx_i + b)[y_i] + (λ/2) ‖W‖²` (the bias is not regularized).
//! Gradient: `∂L/∂W[j][c] = (1/n) Σ_i r_ic x_ij + λ W[j][c]`, `∂L/∂b[c] = (1/n) Σ_i r_ic`,
//! with residual `r_i = softmax(·) − onehot(y_i)`.

use super::features::FeatureVector;
use super::prediction::Distribution;

/// One training sample: features and a class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub class: usize,
}

/// Dense parameters. `weights` is feature-major: `weights[j * n_classes + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub n_classes: usize,
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Params {
    pub fn zeros(dimension: usize, n_classes: usize) -> Self {
        Self {
            n_classes,
            dimension,
            weights: vec![0.0; dimension * n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    /// Raw class scores `scale · Wᵀx + b`.
    pub(crate) fn scores(&self, x: &FeatureVector, scale: f64) -> Vec<f64> {
        let k = self.n_classes;
        let mut acc = vec![0.0; k];
        for &(j, v) in x.entries() {
            let row = &self.weights[j as usize * k..(j as usize + 1) * k];
            for (a, w) in acc.iter_mut().zip(row) {
                *a += v * w;
            }
        }
        acc.iter().zip(&self.bias).map(|(a, b)| scale * a + b).collect()
    }

    pub(crate) fn distribution(&self, x: &FeatureVector, scale: f64) -> Distribution {
        Distribution::softmax(&self.scores(x, scale))
    }

    /// `p − onehot(y)` for one sample.
    pub(crate) fn residual(&self, sample: &Sample, scale: f64) -> Vec<f64> {
        let mut r = self.distribution(&sample.features, scale).probs().to_vec();
        r[sample.class] -= 1.0;
        r
    }
}

/// Regularized mean cross-entropy.
pub fn loss(params: &Params, samples: &[Sample], l2: f64) -> f64 {
    let n = samples.len().max(1) as f64;
    let ce: f64 = samples
        .iter()
        .map(|s| {
            -params
                .distribution(&s.features, 1.0)
                .prob(s.class)
                .max(f64::MIN_POSITIVE)
                .ln()
        })
        .sum();
    let reg: f64 = params.weights.iter().map(|w| w * w).sum();
    ce / n + 0.5 * l2 * reg
}

/// Analytic gradient of [`loss`].
pub fn gradient(params: &Params, samples: &[Sample], l2: f64) -> Params {
    let n = samples.len().max(1) as f64;
    let mut grad = Params::zeros(params.dimension, params.n_classes);
    for s in samples {
        let r = params.residual(s, 1.0);
        accumulate(&mut grad, s, &r, 1.0 / n);
    }
    for (g, w) in grad.weights.iter_mut().zip(&params.weights) {
        *g += l2 * w;
    }
    grad
}

/// Adds `factor · r xᵀ` (and `factor · r` to the bias) into `target`.
pub(crate) fn accumulate(target: &mut Params, sample: &Sample, residual: &[f64], factor: f64) {
    let k = target.n_classes;
    for &(j, v) in sample.features.entries() {
        let row = &mut target.weights[j as usize * k..(j as usize + 1) * k];
        for (w, r) in row.iter_mut().zip(residual) {
            *w += factor * v * r;
        }
    }
    for (b, r) in target.bias.iter_mut().zip(residual) {
        *b += factor * r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Params, Vec<Sample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 6;
        let k = 3;
        let samples = (0..5)
            .map(|i| Sample {
                features: FeatureVector::from_entries(
                    dim,
                    (0..3)
                        .map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(0.5..2.0)))
                        .collect(),
                ),
                class: i % k,
            })
            .collect();
        let mut p = Params::zeros(dim, k);
        p.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        p.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        (p, samples)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, samples) = fixture();
        let l2 = 0.01;
        let g = gradient(&p, &samples, l2);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for idx in 0..p.weights.len() + p.bias.len() {
            let bump = |delta: f64| {
                let mut q = p.clone();
                if idx < q.weights.len() {
                    q.weights[idx] += delta;
                } else {
                    q.bias[idx - q.weights.len()] += delta;
                }
                loss(&q, &samples, l2)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = if idx < g.weights.len() {
                g.weights[idx]
            } else {
                g.bias[idx - g.weights.len()]
            };
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_features_give_bias_softmax() {
        let mut p = Params::zeros(4, 2);
        p.bias = vec![0.3, -0.2];
        let d = p.distribution(&FeatureVector::from_entries(4, vec![]), 1.0);
        let expected = Distribution::softmax(&[0.3, -0.2]);
        assert_eq!(d, expected);
    }
}
