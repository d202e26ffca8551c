use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TopicModel, View, DEFAULT_ALPHA_SUM, DEFAULT_BETA, DEFAULT_NUM_TOPICS, DEFAULT_SWEEPS};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub num_topics: usize,
    /// Total prior concentration; each topic gets `alpha_sum / num_topics`.
    pub alpha_sum: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub seed: u64,
    /// Moment-match alpha to the mean training document-topic proportions
    /// once sampling finishes, keeping `alpha_sum` fixed.
    pub reestimate_alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_topics: DEFAULT_NUM_TOPICS,
            alpha_sum: DEFAULT_ALPHA_SUM,
            beta: DEFAULT_BETA,
            sweeps: DEFAULT_SWEEPS,
            seed: 0,
            reestimate_alpha: true,
        }
    }
}

impl TrainConfig {
    pub fn new(num_topics: usize, sweeps: usize, seed: u64) -> Self {
        Self {
            num_topics,
            sweeps,
            seed,
            ..Self::default()
        }
    }
}

/// Collapsed Gibbs sampler state. Word-topic counts are kept word-major so
/// the inner loop over topics is contiguous.
struct Sampler<'a> {
    docs: &'a [Vec<u32>],
    m: usize,
    alpha: Vec<f64>,
    beta: f64,
    vbeta: f64,
    word_topic: Vec<u32>,
    doc_topic: Vec<u32>,
    topic_totals: Vec<u64>,
    inv_denom: Vec<f64>,
    assignments: Vec<Vec<u16>>,
    cumulative: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(docs: &'a [Vec<u32>], v: usize, config: &TrainConfig) -> Self {
        let m = config.num_topics;
        let vbeta = v as f64 * config.beta;
        Self {
            docs,
            m,
            alpha: vec![config.alpha_sum / m as f64; m],
            beta: config.beta,
            vbeta,
            word_topic: vec![0; v * m],
            doc_topic: vec![0; docs.len() * m],
            topic_totals: vec![0; m],
            inv_denom: vec![1.0 / vbeta; m],
            assignments: docs.iter().map(|d| vec![0; d.len()]).collect(),
            cumulative: vec![0.0; m],
        }
    }

    fn add(&mut self, d: usize, w: usize, k: usize) {
        self.word_topic[w * self.m + k] += 1;
        self.doc_topic[d * self.m + k] += 1;
        self.topic_totals[k] += 1;
        self.inv_denom[k] = 1.0 / (self.topic_totals[k] as f64 + self.vbeta);
    }

    fn remove(&mut self, d: usize, w: usize, k: usize) {
        self.word_topic[w * self.m + k] -= 1;
        self.doc_topic[d * self.m + k] -= 1;
        self.topic_totals[k] -= 1;
        self.inv_denom[k] = 1.0 / (self.topic_totals[k] as f64 + self.vbeta);
    }

    fn draw(&mut self, d: usize, w: usize, rng: &mut ChaCha8Rng) -> usize {
        let m = self.m;
        let wt = &self.word_topic[w * m..(w + 1) * m];
        let dt = &self.doc_topic[d * m..(d + 1) * m];
        let mut total = 0.0;
        for k in 0..m {
            total += (dt[k] as f64 + self.alpha[k]) * (wt[k] as f64 + self.beta) * self.inv_denom[k];
            self.cumulative[k] = total;
        }
        let u = rng.random::<f64>() * total;
        self.cumulative.iter().position(|&c| u < c).unwrap_or(m - 1)
    }

    fn initialize(&mut self, rng: &mut ChaCha8Rng) {
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let k = self.draw(d, w, rng);
                self.assignments[d][i] = k as u16;
                self.add(d, w, k);
            }
        }
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng) {
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let old = self.assignments[d][i] as usize;
                self.remove(d, w, old);
                let k = self.draw(d, w, rng);
                self.assignments[d][i] = k as u16;
                self.add(d, w, k);
            }
        }
    }

    /// Mean of smoothed document-topic proportions over non-empty documents,
    /// rescaled to the current total concentration.
    fn moment_matched_alpha(&self) -> Vec<f64> {
        let alpha_sum: f64 = self.alpha.iter().sum();
        let mut mean = vec![0.0; self.m];
        let mut n_docs = 0usize;
        for (d, doc) in self.docs.iter().enumerate() {
            if doc.is_empty() {
                continue;
            }
            n_docs += 1;
            let denom = doc.len() as f64 + alpha_sum;
            for k in 0..self.m {
                mean[k] += (self.doc_topic[d * self.m + k] as f64 + self.alpha[k]) / denom;
            }
        }
        let total: f64 = mean.iter().sum();
        if n_docs == 0 || total <= 0.0 {
            return self.alpha.clone();
        }
        mean.iter().map(|x| alpha_sum * x / total).collect()
    }

    fn topic_major_counts(&self, v: usize) -> Vec<u32> {
        let mut counts = vec![0u32; self.m * v];
        for w in 0..v {
            for k in 0..self.m {
                counts[k * v + w] = self.word_topic[w * self.m + k];
            }
        }
        counts
    }
}

/// Trains an LDA model with collapsed Gibbs sampling. Identical inputs and
/// seed produce identical counts.
pub fn train(
    documents: &[Vec<u32>],
    vocabulary: Vocabulary,
    view: View,
    config: &TrainConfig,
) -> Result<TopicModel> {
    if config.num_topics < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 topics, got {}",
            config.num_topics
        )));
    }
    if config.num_topics > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many topics".into()));
    }
    if config.sweeps == 0 {
        return Err(Error::InvalidArgument("sweeps must be at least 1".into()));
    }
    if !(config.alpha_sum > 0.0 && config.beta > 0.0) {
        return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
    }
    if documents.iter().all(Vec::is_empty) {
        return Err(Error::Empty("no tokens to train a topic model on".into()));
    }
    let v = vocabulary.len();
    if let Some(&bad) = documents.iter().flatten().find(|&&w| w as usize >= v) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} outside vocabulary of size {v}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(documents, v, config);
    sampler.initialize(&mut rng);
    for sweep in 0..config.sweeps {
        sampler.sweep(&mut rng);
        if (sweep + 1) % 100 == 0 {
            log::debug!("{view} M={} sweep {}/{}", config.num_topics, sweep + 1, config.sweeps);
        }
    }
    let alpha = if config.reestimate_alpha {
        sampler.moment_matched_alpha()
    } else {
        sampler.alpha.clone()
    };

    let counts = sampler.topic_major_counts(v);
    let model = TopicModel::from_counts(view, alpha, config.beta, counts, vocabulary, config.seed, config.sweeps)?;
    debug_assert_eq!(model.topic_totals, sampler.topic_totals);
    Ok(model)
}
