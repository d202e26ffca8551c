//! Word-level perplexity of agent replies with and without the customer query
//! as context.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::topic_model::{InferenceConfig, TopicModel};

pub const ESTIMATOR: &str = "fold-in point estimate";

/// Approximate log-likelihood of a token sequence: topic proportions are
/// inferred by fold-in, then each token contributes `log sum_k theta_k phi_kw`.
/// Empty sequences have log-likelihood 0.
pub fn doc_log_likelihood(model: &TopicModel, tokens: &[u32], inference: &InferenceConfig) -> f64 {
    let v = model.vocab_size();
    let tokens: Vec<u32> = tokens.iter().copied().filter(|&w| (w as usize) < v).collect();
    if tokens.is_empty() {
        return 0.0;
    }
    let theta = model.infer_with(&tokens, inference);
    tokens
        .iter()
        .map(|&w| {
            theta
                .probs()
                .iter()
                .enumerate()
                .map(|(k, &t)| t * model.phi(k, w))
                .sum::<f64>()
                .ln()
        })
        .sum()
}

/// `exp(-sum log L / total tokens)`.
pub fn perplexity_from_log_likelihood(total_log_likelihood: f64, token_total: usize) -> Result<f64> {
    if token_total == 0 {
        return Err(Error::Empty("perplexity over zero tokens".into()));
    }
    Ok((-total_log_likelihood / token_total as f64).exp())
}

fn agent_tokens(pairs: &[TokenizedPair], v: usize) -> usize {
    pairs
        .iter()
        .map(|p| p.agent.tokens.iter().filter(|&&w| (w as usize) < v).count())
        .sum()
}

/// Perplexity of the agent replies under an agent-only model.
pub fn perplexity_unconditional(
    model_a: &TopicModel,
    test: &[TokenizedPair],
    inference: &InferenceConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("perplexity test set".into()));
    }
    let ll: f64 = test
        .iter()
        .map(|p| doc_log_likelihood(model_a, &p.agent.tokens, inference))
        .sum();
    perplexity_from_log_likelihood(ll, agent_tokens(test, model_a.vocab_size()))
}

/// Perplexity of the agent replies given the customer query, under a model of
/// concatenated pairs: `log L(C + A) - log L(C)` per pair, normalized by agent
/// tokens only.
pub fn perplexity_conditional(
    model_ca: &TopicModel,
    test: &[TokenizedPair],
    inference: &InferenceConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("perplexity test set".into()));
    }
    let ll: f64 = test
        .iter()
        .map(|p| {
            let joint: Vec<u32> = p.customer.iter().chain(&p.agent.tokens).copied().collect();
            doc_log_likelihood(model_ca, &joint, inference) - doc_log_likelihood(model_ca, &p.customer, inference)
        })
        .sum();
    perplexity_from_log_likelihood(ll, agent_tokens(test, model_ca.vocab_size()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub num_topics: usize,
    pub pp_unconditional: f64,
    pub pp_conditional: f64,
    pub token_total: usize,
    pub doc_count: usize,
    pub estimator: String,
}

pub fn perplexity_report(
    model_a: &TopicModel,
    model_ca: &TopicModel,
    test: &[TokenizedPair],
    inference: &InferenceConfig,
) -> Result<PerplexityReport> {
    Ok(PerplexityReport {
        num_topics: model_a.num_topics(),
        pp_unconditional: perplexity_unconditional(model_a, test, inference)?,
        pp_conditional: perplexity_conditional(model_ca, test, inference)?,
        token_total: agent_tokens(test, model_a.vocab_size()),
        doc_count: test.len(),
        estimator: ESTIMATOR.into(),
    })
}

/// Two-series CSV: `M,pp_unconditional,pp_conditional`.
pub fn reports_to_csv(reports: &[PerplexityReport]) -> String {
    let mut out = String::from("M,pp_unconditional,pp_conditional\n");
    for r in reports {
        out.push_str(&format!("{},{},{}\n", r.num_topics, r.pp_unconditional, r.pp_conditional));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenizedDoc, Vocabulary};
    use crate::topic_model::View;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_words((0..n).map(|i| format!("w{i}")).collect()).unwrap()
    }

    fn agent_only(tokens: Vec<u32>) -> TokenizedPair {
        let n = tokens.len();
        TokenizedPair {
            id: "x".into(),
            customer: vec![],
            agent: TokenizedDoc {
                tokens,
                sentence_bounds: vec![(0, n)],
            },
        }
    }

    /// Two identical topics with uniform word counts: every token has
    /// probability 1/V regardless of the inferred proportions.
    fn flat_model(v: usize) -> TopicModel {
        TopicModel::from_counts(View::A, vec![0.5, 0.5], 0.01, vec![7; 2 * v], vocab(v), 0, 1).unwrap()
    }

    #[test]
    fn single_topic_likelihood_is_exact() {
        let v = 4;
        let model = TopicModel::from_counts(View::A, vec![1.0], 0.5, vec![3, 1, 0, 6], vocab(v), 0, 1).unwrap();
        let tokens = [0u32, 3, 3, 1];
        let expected: f64 = tokens.iter().map(|&w| model.phi(0, w).ln()).sum();
        let got = doc_log_likelihood(&model, &tokens, &InferenceConfig::default());
        assert!((got - expected).abs() < 1e-12);
        assert_eq!(doc_log_likelihood(&model, &[], &InferenceConfig::default()), 0.0);
        assert!(got <= 0.0);
    }

    #[test]
    fn uniform_word_probability_gives_vocab_size() {
        let model = flat_model(100);
        let test = vec![agent_only(vec![1, 2, 3]), agent_only(vec![50; 7])];
        let pp = perplexity_unconditional(&model, &test, &InferenceConfig::default()).unwrap();
        assert!((pp - 100.0).abs() < 1e-9, "{pp}");
    }

    #[test]
    fn half_probability_token() {
        let model = flat_model(2);
        let pp = perplexity_unconditional(&model, &[agent_only(vec![0])], &InferenceConfig::default()).unwrap();
        assert!((pp - 2.0).abs() < 1e-9);
    }

    #[test]
    fn empty_customer_reduces_to_unconditional() {
        let model = TopicModel::from_counts(View::CA, vec![0.3, 0.7], 0.1, vec![9, 1, 2, 1, 8, 3], vocab(3), 5, 1).unwrap();
        let test = vec![agent_only(vec![0, 1, 1, 2]), agent_only(vec![2, 2])];
        let inf = InferenceConfig::default();
        let a = perplexity_unconditional(&model, &test, &inf).unwrap();
        let b = perplexity_conditional(&model, &test, &inf).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn conditional_with_fixed_ratio() {
        // Flat model over 10 words: L(C+A) / L(C) = (1/10)^{N_A}.
        let model = flat_model(10);
        let mut pair = agent_only(vec![1, 2, 3, 4]);
        pair.customer = vec![5, 6];
        let pp = perplexity_conditional(&model, &[pair], &InferenceConfig::default()).unwrap();
        assert!((pp - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_tokens_is_an_error() {
        let model = flat_model(3);
        assert!(perplexity_unconditional(&model, &[agent_only(vec![])], &InferenceConfig::default()).is_err());
        assert!(perplexity_unconditional(&model, &[], &InferenceConfig::default()).is_err());
    }

    #[test]
    fn pooled_normalization_ignores_order_and_splits() {
        let model = TopicModel::from_counts(View::A, vec![0.3, 0.7], 0.1, vec![9, 1, 2, 1, 8, 3], vocab(3), 5, 1).unwrap();
        let docs = vec![agent_only(vec![0, 1, 1]), agent_only(vec![2, 2, 0, 0]), agent_only(vec![1])];
        let inf = InferenceConfig::default();
        let whole = perplexity_unconditional(&model, &docs, &inf).unwrap();
        let mut rev = docs.clone();
        rev.reverse();
        assert!((whole - perplexity_unconditional(&model, &rev, &inf).unwrap()).abs() < 1e-12);
        let ll: f64 = docs.iter().map(|d| doc_log_likelihood(&model, &d.agent.tokens, &inf)).sum();
        assert!((whole - perplexity_from_log_likelihood(ll, 8).unwrap()).abs() < 1e-12);
    }
}
