use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TopicDistribution, TopicModel};

/// Fold-in sweep counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub burn_in: usize,
    pub samples: usize,
}

pub const OFFLINE_INFERENCE: InferenceConfig = InferenceConfig {
    burn_in: 20,
    samples: 10,
};

pub const SERVING_INFERENCE: InferenceConfig = InferenceConfig {
    burn_in: 5,
    samples: 3,
};

impl Default for InferenceConfig {
    fn default() -> Self {
        OFFLINE_INFERENCE
    }
}

/// FNV-1a over the token ids, mixed with the model seed. Gives every
/// document its own sampler stream independent of call order.
pub(crate) fn document_seed(model_seed: u64, tokens: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ model_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl TopicModel {
    /// Topic proportions of a new document with the offline sweep counts.
    pub fn infer(&self, tokens: &[u32]) -> TopicDistribution {
        self.infer_with(tokens, &OFFLINE_INFERENCE)
    }

    pub fn infer_with(&self, tokens: &[u32], config: &InferenceConfig) -> TopicDistribution {
        self.infer_seeded(tokens, config, document_seed(self.seed, tokens))
    }

    /// Fold-in Gibbs sampling with the topic-word counts frozen.
    ///
    /// After `burn_in` sweeps, each of `samples` sweeps contributes
    /// `(E[n_dk] + alpha_k) / (N_d + sum(alpha))`, where `E[n_dk]` sums the
    /// per-token conditional probabilities seen during that sweep. Token ids
    /// outside the vocabulary are ignored; an empty document yields the
    /// normalized prior.
    pub fn infer_seeded(&self, tokens: &[u32], config: &InferenceConfig, seed: u64) -> TopicDistribution {
        let m = self.num_topics();
        let v = self.vocab_size();
        let tokens: Vec<u32> = tokens.iter().copied().filter(|&w| (w as usize) < v).collect();
        if tokens.is_empty() {
            return self.prior();
        }
        let alpha_sum: f64 = self.alpha.iter().sum();

        // phi[i * m + k] = P(w_i | k); counts are frozen so this is fixed per token.
        let mut phi = vec![0.0; tokens.len() * m];
        for (i, &w) in tokens.iter().enumerate() {
            for k in 0..m {
                phi[i * m + k] = self.phi(k, w);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut doc_topic = vec![0u32; m];
        let mut assignment = vec![0usize; tokens.len()];
        let mut weights = vec![0.0; m];
        let mut expected = vec![0.0; m];
        let mut estimate = vec![0.0; m];

        let mut step = |i: usize, doc_topic: &mut [u32], accumulate: Option<&mut [f64]>, first: bool| {
            if !first {
                doc_topic[assignment[i]] -= 1;
            }
            let mut total = 0.0;
            for k in 0..m {
                weights[k] = (doc_topic[k] as f64 + self.alpha[k]) * phi[i * m + k];
                total += weights[k];
            }
            if let Some(acc) = accumulate {
                for k in 0..m {
                    acc[k] += weights[k] / total;
                }
            }
            let mut u = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (k, &wk) in weights.iter().enumerate() {
                if u < wk {
                    chosen = k;
                    break;
                }
                u -= wk;
            }
            assignment[i] = chosen;
            doc_topic[chosen] += 1;
        };

        for i in 0..tokens.len() {
            step(i, &mut doc_topic, None, true);
        }
        for _ in 0..config.burn_in {
            for i in 0..tokens.len() {
                step(i, &mut doc_topic, None, false);
            }
        }
        let samples = config.samples.max(1);
        let denom = tokens.len() as f64 + alpha_sum;
        for _ in 0..samples {
            expected.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..tokens.len() {
                step(i, &mut doc_topic, Some(&mut expected), false);
            }
            for k in 0..m {
                estimate[k] += (expected[k] + self.alpha[k]) / denom;
            }
        }
        TopicDistribution::from_weights(estimate)
    }
}
