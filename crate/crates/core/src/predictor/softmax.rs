use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureLayout, FeatureVector};
use crate::error::{Error, Result};
use crate::topic_model::TopicDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Initial step size; epoch `e` uses `learning_rate / sqrt(e + 1)`.
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            l2: 1e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

/// A training example: sparse input and a target distribution over classes.
#[derive(Debug, Clone)]
pub struct Example {
    pub x: FeatureVector,
    pub target: Vec<f64>,
}

impl Example {
    pub fn soft(x: FeatureVector, target: &TopicDistribution) -> Self {
        Self {
            x,
            target: target.probs().to_vec(),
        }
    }

    pub fn hard(x: FeatureVector, class: usize, num_classes: usize) -> Self {
        let mut target = vec![0.0; num_classes];
        target[class] = 1.0;
        Self { x, target }
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// `KL(target || p)` with `0 log 0 = 0`.
pub fn kl_divergence(target: &[f64], p: &[f64]) -> f64 {
    target
        .iter()
        .zip(p)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &q)| t * (t.ln() - q.ln()))
        .sum()
}

/// Linear softmax classifier trained against soft or hard labels.
///
/// Weights are stored by feature row, and only rows with a nonzero entry are
/// kept: `weights[r * M + k]` belongs to feature `rows[r]`. Features never
/// seen in training keep exactly zero weight, so this is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegressor {
    layout: FeatureLayout,
    num_classes: usize,
    rows: Vec<u32>,
    weights: Vec<f64>,
    config: SgdConfig,
}

fn dense_scores(weights: &[f64], m: usize, x: &FeatureVector) -> Vec<f64> {
    let mut s = vec![0.0; m];
    for (f, v) in x.iter() {
        if let Some(row) = weights.get(f * m..(f + 1) * m) {
            s.iter_mut().zip(row).for_each(|(acc, w)| *acc += v * w);
        }
    }
    s
}

fn dense_objective(weights: &[f64], m: usize, examples: &[Example], l2: f64) -> f64 {
    let kl: f64 = examples
        .iter()
        .map(|e| kl_divergence(&e.target, &softmax(&dense_scores(weights, m, &e.x))))
        .sum();
    kl / examples.len() as f64 + l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

impl SoftmaxRegressor {
    pub fn zeros(layout: FeatureLayout, num_classes: usize, config: SgdConfig) -> Self {
        Self {
            layout,
            num_classes,
            rows: Vec::new(),
            weights: Vec::new(),
            config,
        }
    }

    /// Builds a regressor from a dense feature-major matrix `w[f * M + k]`.
    pub fn from_weights(layout: FeatureLayout, num_classes: usize, weights: Vec<f64>, config: SgdConfig) -> Result<Self> {
        if weights.len() != layout.dim() * num_classes {
            return Err(Error::DimensionMismatch {
                expected: layout.dim() * num_classes,
                actual: weights.len(),
            });
        }
        let m = num_classes;
        let rows: Vec<u32> = (0..layout.dim())
            .filter(|&f| weights[f * m..(f + 1) * m].iter().any(|&w| w != 0.0))
            .map(|f| f as u32)
            .collect();
        let compact = rows
            .iter()
            .flat_map(|&f| weights[f as usize * m..(f as usize + 1) * m].iter().copied())
            .collect();
        Self::from_rows(layout, num_classes, rows, compact, config)
    }

    /// Builds a regressor from its stored rows.
    pub fn from_rows(
        layout: FeatureLayout,
        num_classes: usize,
        rows: Vec<u32>,
        weights: Vec<f64>,
        config: SgdConfig,
    ) -> Result<Self> {
        if weights.len() != rows.len() * num_classes {
            return Err(Error::DimensionMismatch {
                expected: rows.len() * num_classes,
                actual: weights.len(),
            });
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) || rows.last().is_some_and(|&r| r as usize >= layout.dim()) {
            return Err(Error::InvalidArgument("weight rows must be increasing and inside the layout".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("regressor weights must be finite".into()));
        }
        Ok(Self {
            layout,
            num_classes,
            rows,
            weights,
            config,
        })
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Features with stored weights, increasing.
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    /// Stored weights, `rows().len() x M`.
    pub fn row_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dense_weights(&self) -> Vec<f64> {
        let m = self.num_classes;
        let mut out = vec![0.0; self.layout.dim() * m];
        for (r, &f) in self.rows.iter().enumerate() {
            out[f as usize * m..(f as usize + 1) * m].copy_from_slice(&self.weights[r * m..(r + 1) * m]);
        }
        out
    }

    fn row(&self, f: usize) -> Option<&[f64]> {
        let m = self.num_classes;
        self.rows
            .binary_search(&(f as u32))
            .ok()
            .map(|r| &self.weights[r * m..(r + 1) * m])
    }

    pub fn scores(&self, x: &FeatureVector) -> Vec<f64> {
        let mut s = vec![0.0; self.num_classes];
        for (f, v) in x.iter() {
            if let Some(row) = self.row(f) {
                s.iter_mut().zip(row).for_each(|(acc, w)| *acc += v * w);
            }
        }
        s
    }

    pub fn predict(&self, x: &FeatureVector) -> TopicDistribution {
        TopicDistribution::from_weights(softmax(&self.scores(x)))
    }

    fn squared_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Per-example objective `KL(target || softmax(Wx)) + l2 * ||W||^2`.
    pub fn loss(&self, example: &Example, l2: f64) -> f64 {
        let p = softmax(&self.scores(&example.x));
        kl_divergence(&example.target, &p) + l2 * self.squared_norm()
    }

    /// Dense gradient of [`Self::loss`]: `x (p - y)^T + 2 l2 W`.
    pub fn gradient(&self, example: &Example, l2: f64) -> Vec<f64> {
        let m = self.num_classes;
        let p = softmax(&self.scores(&example.x));
        let mut g: Vec<f64> = self.dense_weights().iter().map(|w| 2.0 * l2 * w).collect();
        for (f, v) in example.x.iter() {
            for k in 0..m {
                g[f * m + k] += v * (p[k] - example.target[k]);
            }
        }
        g
    }

    /// Mean KL over examples plus the L2 penalty.
    pub fn objective(&self, examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let kl: f64 = examples
            .iter()
            .map(|e| kl_divergence(&e.target, &softmax(&self.scores(&e.x))))
            .sum();
        kl / examples.len() as f64 + self.config.l2 * self.squared_norm()
    }

    /// Trains by SGD from zero weights. Returns the model and the objective
    /// after each epoch.
    pub fn train(
        layout: FeatureLayout,
        num_classes: usize,
        examples: &[Example],
        config: SgdConfig,
    ) -> Result<(Self, Vec<f64>)> {
        if num_classes < 1 {
            return Err(Error::InvalidArgument("num_classes must be at least 1".into()));
        }
        if examples.is_empty() {
            return Err(Error::Empty("training examples".into()));
        }
        for e in examples {
            if e.target.len() != num_classes {
                return Err(Error::DimensionMismatch {
                    expected: num_classes,
                    actual: e.target.len(),
                });
            }
            if e.x.min_dim() > layout.dim() {
                return Err(Error::DimensionMismatch {
                    expected: layout.dim(),
                    actual: e.x.min_dim(),
                });
            }
        }
        let m = num_classes;
        let mut w = vec![0.0; layout.dim() * m];
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut history = Vec::with_capacity(config.epochs);
        // W = scale * V so the L2 shrink touches one scalar per step.
        let mut scale = 1.0f64;
        for epoch in 0..config.epochs {
            if config.shuffle {
                order.shuffle(&mut rng);
            }
            let eta = config.learning_rate / ((epoch + 1) as f64).sqrt();
            // Implicit L2 step: W <- (W - eta * g) / (1 + 2 eta l2). Same
            // fixed point as the explicit step, stable for any l2.
            let shrink = 1.0 / (1.0 + 2.0 * eta * config.l2);
            for &i in &order {
                let e = &examples[i];
                let mut s = dense_scores(&w, m, &e.x);
                s.iter_mut().for_each(|v| *v *= scale);
                let p = softmax(&s);
                let step = eta / scale;
                for (f, v) in e.x.iter() {
                    let row = &mut w[f * m..(f + 1) * m];
                    for k in 0..m {
                        row[k] -= step * v * (p[k] - e.target[k]);
                    }
                }
                scale *= shrink;
                if scale < 1e-6 {
                    w.iter_mut().for_each(|x| *x *= scale);
                    scale = 1.0;
                }
            }
            w.iter_mut().for_each(|x| *x *= scale);
            scale = 1.0;
            history.push(dense_objective(&w, m, examples, config.l2));
        }
        let model = Self::from_weights(layout, num_classes, w, config)?;
        Ok((model, history))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::features::BlockKind;
    use proptest::prelude::*;

    fn dense_layout(d: usize) -> FeatureLayout {
        FeatureLayout::new(&[(BlockKind::CustomerWords, d)])
    }

    #[test]
    fn shift_invariance() {
        let s = [0.3, -1.2, 2.0, 0.0];
        let shifted: Vec<f64> = s.iter().map(|v| v + 17.5).collect();
        let a = softmax(&s);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        let huge = softmax(&[1000.0, 1000.0]);
        assert_eq!(huge, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_weights_give_uniform_and_uniform_kl() {
        let model = SoftmaxRegressor::zeros(dense_layout(3), 4, SgdConfig::default());
        let x = FeatureVector::from_dense(&[0.5, 1.0, -2.0]);
        assert_eq!(model.predict(&x).probs(), &[0.25; 4]);
        let target = vec![0.1, 0.2, 0.3, 0.4];
        let expected: f64 = target.iter().map(|t: &f64| t * (t.ln() - 0.25f64.ln())).sum();
        let e = Example { x, target };
        assert_eq!(model.loss(&e, 0.0), expected);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = t.iter().sum();
            let e = Example {
                x: FeatureVector::from_dense(&x),
                target: t.iter().map(|v| v / z).collect(),
            };
            let w: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
            let model = SoftmaxRegressor::from_weights(dense_layout(5), 3, w, SgdConfig::default()).unwrap();
            let l2 = 0.05;
            let g = model.gradient(&e, l2);
            let h = 1e-5;
            let base = model.dense_weights();
            let loss_at = |i: usize, d: f64| {
                let mut w = base.clone();
                w[i] += d;
                SoftmaxRegressor::from_weights(dense_layout(5), 3, w, SgdConfig::default())
                    .unwrap()
                    .loss(&e, l2)
            };
            for i in 0..15 {
                let fd = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "component {i}: fd {fd} analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn repeated_example_converges_to_label() {
        let x = FeatureVector::from_dense(&[1.0, 0.5]);
        let target = vec![0.7, 0.2, 0.1];
        let examples = vec![Example { x: x.clone(), target: target.clone() }; 50];
        let config = SgdConfig {
            epochs: 40,
            l2: 1e-6,
            ..SgdConfig::default()
        };
        let (model, history) = SoftmaxRegressor::train(dense_layout(2), 3, &examples, config).unwrap();
        let p = model.predict(&x);
        assert!(kl_divergence(&target, p.probs()) < 1e-3, "{:?}", p);
        assert!(history.last().unwrap() < &1e-3);
    }

    #[test]
    fn strong_regularization_gives_uniform() {
        let x = FeatureVector::from_dense(&[1.0, 1.0]);
        let examples = vec![Example::hard(x.clone(), 0, 3); 20];
        let config = SgdConfig {
            l2: 1e6,
            ..SgdConfig::default()
        };
        let (model, _) = SoftmaxRegressor::train(dense_layout(2), 3, &examples, config).unwrap();
        assert!(model.row_weights().iter().all(|w| w.abs() < 1e-6));
        for p in model.predict(&x).probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_is_monotone_with_small_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let examples: Vec<Example> = (0..40)
            .map(|i| {
                let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
                Example::hard(FeatureVector::from_dense(&x), i % 4, 4)
            })
            .collect();
        let config = SgdConfig {
            learning_rate: 0.01,
            epochs: 30,
            shuffle: false,
            ..SgdConfig::default()
        };
        let (_, history) = SoftmaxRegressor::train(dense_layout(6), 4, &examples, config).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{history:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_validates_dims() {
        let examples: Vec<Example> = (0..30)
            .map(|i| Example::hard(FeatureVector::from_dense(&[1.0, (i % 3) as f64]), i % 3, 3))
            .collect();
        let a = SoftmaxRegressor::train(dense_layout(2), 3, &examples, SgdConfig::default()).unwrap();
        let b = SoftmaxRegressor::train(dense_layout(2), 3, &examples, SgdConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(SoftmaxRegressor::train(dense_layout(1), 3, &examples, SgdConfig::default()).is_err());
        let bad = vec![Example::hard(FeatureVector::from_dense(&[1.0]), 0, 2)];
        assert!(SoftmaxRegressor::train(dense_layout(2), 3, &bad, SgdConfig::default()).is_err());
        assert!(SoftmaxRegressor::train(dense_layout(2), 3, &[], SgdConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn predictions_are_distributions(
            w in proptest::collection::vec(-50.0f64..50.0, 12),
            x in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let model = SoftmaxRegressor::from_weights(dense_layout(4), 3, w, SgdConfig::default()).unwrap();
            let p = model.predict(&FeatureVector::from_dense(&x));
            prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_shift(s in proptest::collection::vec(-30.0f64..30.0, 1..8), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            for (a, b) in softmax(&s).iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
