//! LDA topic models over email views, trained by collapsed Gibbs sampling.

mod describe;
mod gibbs;
mod infer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedPair, Vocabulary};
use crate::error::{Error, Result};

pub use describe::{describe_topics, ScoredTerm, TopicDescriptor, DEFAULT_MIN_PHRASE_COUNT};
pub use gibbs::{train, TrainConfig};
pub use infer::{InferenceConfig, OFFLINE_INFERENCE, SERVING_INFERENCE};

pub const DEFAULT_NUM_TOPICS: usize = 50;
pub const DEFAULT_ALPHA_SUM: f64 = 5.0;
pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_SWEEPS: usize = 1000;

/// Which text unit forms one LDA document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    /// Customer emails.
    C,
    /// Agent emails.
    A,
    /// Customer and agent email concatenated per pair.
    CA,
    /// Individual agent sentences.
    S,
}

impl View {
    pub const ALL: [View; 4] = [View::C, View::A, View::CA, View::S];

    pub fn as_str(self) -> &'static str {
        match self {
            View::C => "C",
            View::A => "A",
            View::CA => "CA",
            View::S => "S",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C" => Ok(View::C),
            "A" => Ok(View::A),
            "CA" => Ok(View::CA),
            "S" => Ok(View::S),
            _ => Err(Error::InvalidArgument(format!("unknown view `{s}`"))),
        }
    }
}

/// Builds the LDA documents of a view from tokenized pairs.
pub fn build_documents(pairs: &[TokenizedPair], view: View) -> Vec<Vec<u32>> {
    match view {
        View::C => pairs.iter().map(|p| p.customer.clone()).collect(),
        View::A => pairs.iter().map(|p| p.agent.tokens.clone()).collect(),
        View::CA => pairs
            .iter()
            .map(|p| p.customer.iter().chain(&p.agent.tokens).copied().collect())
            .collect(),
        View::S => pairs
            .iter()
            .flat_map(|p| p.agent.sentences().map(<[u32]>::to_vec))
            .collect(),
    }
}

/// A probability vector over topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicDistribution(Vec<f64>);

impl TopicDistribution {
    pub const TOLERANCE: f64 = 1e-9;

    /// Validates non-negativity and unit sum.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("topic distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("distribution has negative or non-finite entries".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("distribution sums to {sum}")));
        }
        Ok(Self::normalized(probs))
    }

    /// Normalizes non-negative weights. Falls back to uniform when they sum to zero.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self::normalized(weights)
    }

    fn normalized(mut probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            probs.iter_mut().for_each(|p| *p /= sum);
        } else {
            let m = probs.len() as f64;
            probs.iter_mut().for_each(|p| *p = 1.0 / m);
        }
        Self(probs)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, k: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[k] = 1.0;
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Topic ids sorted by descending probability, ties to the lower id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.0.len()).collect();
        ids.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        ids
    }
}

/// Argmax of the distribution (ties to the lowest id) and whether it is
/// peaked: dominant mass above 0.5 and at least twice the runner-up.
pub fn dominant_topic(dist: &TopicDistribution) -> (usize, bool) {
    let probs = dist.probs();
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    let second = probs
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != best)
        .map(|(_, &p)| p)
        .fold(0.0_f64, f64::max);
    let max = probs[best];
    (best, max > 0.5 && max >= 2.0 * second)
}

/// Fraction of distributions classified peaked by [`dominant_topic`].
pub fn peakedness_rate(dists: &[TopicDistribution]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::Empty("peakedness rate of no distributions".into()));
    }
    let peaked = dists.iter().filter(|d| dominant_topic(d).1).count();
    Ok(peaked as f64 / dists.len() as f64)
}

/// A trained LDA model: topic-word counts plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub(crate) view: View,
    pub(crate) alpha: Vec<f64>,
    pub(crate) beta: f64,
    /// Row-major `num_topics x vocab_size`.
    pub(crate) topic_word_counts: Vec<u32>,
    pub(crate) topic_totals: Vec<u64>,
    pub(crate) vocabulary: Vocabulary,
    pub(crate) seed: u64,
    pub(crate) sweeps: usize,
    pub(crate) config_hash: Option<String>,
}

impl TopicModel {
    /// Assembles a model from raw counts, recomputing topic totals.
    pub fn from_counts(
        view: View,
        alpha: Vec<f64>,
        beta: f64,
        topic_word_counts: Vec<u32>,
        vocabulary: Vocabulary,
        seed: u64,
        sweeps: usize,
    ) -> Result<Self> {
        let m = alpha.len();
        let v = vocabulary.len();
        if m == 0 || v == 0 {
            return Err(Error::Empty("topic model needs topics and a vocabulary".into()));
        }
        if topic_word_counts.len() != m * v {
            return Err(Error::DimensionMismatch {
                expected: m * v,
                actual: topic_word_counts.len(),
            });
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
        }
        let topic_totals = topic_word_counts
            .chunks(v)
            .map(|row| row.iter().map(|&c| c as u64).sum())
            .collect();
        Ok(Self {
            view,
            alpha,
            beta,
            topic_word_counts,
            topic_totals,
            vocabulary,
            seed,
            sweeps,
            config_hash: None,
        })
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn topic_word_counts(&self) -> &[u32] {
        &self.topic_word_counts
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    pub fn count(&self, topic: usize, word: u32) -> u32 {
        self.topic_word_counts[topic * self.vocab_size() + word as usize]
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.config_hash = Some(hash.into());
    }

    /// Smoothed P(word | topic) = (n_kw + beta) / (n_k + V beta).
    pub fn phi(&self, topic: usize, word: u32) -> f64 {
        let v = self.vocab_size() as f64;
        (self.count(topic, word) as f64 + self.beta) / (self.topic_totals[topic] as f64 + v * self.beta)
    }

    pub fn topic_word_probs(&self, topic: usize) -> Vec<f64> {
        (0..self.vocab_size() as u32).map(|w| self.phi(topic, w)).collect()
    }

    /// The normalized Dirichlet prior, used as the distribution of empty documents.
    pub fn prior(&self) -> TopicDistribution {
        TopicDistribution::from_weights(self.alpha.clone())
    }

    /// True when every topic total equals its row sum.
    pub fn counts_consistent(&self) -> bool {
        let v = self.vocab_size();
        self.topic_word_counts
            .chunks(v)
            .zip(&self.topic_totals)
            .all(|(row, &total)| row.iter().map(|&c| c as u64).sum::<u64>() == total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenizedDoc, TokenizedPair};
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> TopicDistribution {
        TopicDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn dominant_and_peaked_rules() {
        assert_eq!(dominant_topic(&dist(&[0.6, 0.2, 0.1, 0.1])), (0, true));
        assert_eq!(dominant_topic(&dist(&[0.55, 0.35, 0.10])), (0, false));
        assert_eq!(dominant_topic(&dist(&[0.5, 0.5])), (0, false));
        assert_eq!(dominant_topic(&dist(&[0.2, 0.8])), (1, true));
    }

    #[test]
    fn peakedness_extremes() {
        let deltas: Vec<_> = (0..4).map(|k| TopicDistribution::one_hot(4, k)).collect();
        assert_eq!(peakedness_rate(&deltas).unwrap(), 1.0);
        let uniform = vec![TopicDistribution::uniform(3); 5];
        assert_eq!(peakedness_rate(&uniform).unwrap(), 0.0);
        assert!(peakedness_rate(&[]).is_err());
    }

    #[test]
    fn view_parsing() {
        assert_eq!("ca".parse::<View>().unwrap(), View::CA);
        assert!("X".parse::<View>().is_err());
    }

    #[test]
    fn documents_per_view() {
        let pair = TokenizedPair {
            id: "1".into(),
            customer: vec![0, 1],
            agent: TokenizedDoc {
                tokens: vec![2, 3, 4, 5],
                sentence_bounds: vec![(0, 1), (1, 3), (3, 4)],
            },
        };
        let pairs = vec![pair; 100];
        assert_eq!(build_documents(&pairs, View::C).len(), 100);
        assert_eq!(build_documents(&pairs[..1], View::S).len(), 3);
        assert_eq!(build_documents(&pairs[..1], View::CA)[0].len(), 6);
        assert_eq!(build_documents(&pairs[..1], View::A)[0], vec![2, 3, 4, 5]);
    }

    proptest! {
        #[test]
        fn dominant_invariant_under_scaling(weights in prop::collection::vec(0.0f64..10.0, 2..12), c in 0.01f64..100.0) {
            prop_assume!(weights.iter().sum::<f64>() > 0.0);
            let a = TopicDistribution::from_weights(weights.clone());
            let b = TopicDistribution::from_weights(weights.iter().map(|w| w * c).collect());
            prop_assert_eq!(dominant_topic(&a).0, dominant_topic(&b).0);
        }
    }
}
