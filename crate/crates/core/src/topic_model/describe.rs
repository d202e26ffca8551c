use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TopicModel;

/// Phrases must occur at least this often in the mined documents.
pub const DEFAULT_MIN_PHRASE_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTerm {
    pub term: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDescriptor {
    pub topic: usize,
    pub top_words: Vec<ScoredTerm>,
    pub top_phrases: Vec<ScoredTerm>,
}

/// Top words by P(w|k) and top bigram/trigram phrases scored by the product
/// of their member words' P(w|k). Only phrases seen at least
/// `min_phrase_count` times in `documents` are considered.
pub fn describe_topics(
    model: &TopicModel,
    top_n_words: usize,
    top_n_phrases: usize,
    documents: &[Vec<u32>],
    min_phrase_count: usize,
) -> Vec<TopicDescriptor> {
    let mut ngram_counts: HashMap<&[u32], usize> = HashMap::new();
    for doc in documents {
        for n in 2..=3 {
            for gram in doc.windows(n) {
                *ngram_counts.entry(gram).or_default() += 1;
            }
        }
    }
    let mut phrases: Vec<&[u32]> = ngram_counts
        .into_iter()
        .filter(|&(_, c)| c >= min_phrase_count.max(1))
        .map(|(g, _)| g)
        .collect();
    phrases.sort();

    let vocab = model.vocabulary();
    let render = |gram: &[u32]| {
        gram.iter()
            .map(|&w| vocab.word(w))
            .collect::<Vec<_>>()
            .join(" ")
    };

    (0..model.num_topics())
        .map(|k| {
            let probs = model.topic_word_probs(k);
            let top_words = top_scored(
                (0..probs.len()).map(|w| (vocab.word(w as u32).to_string(), probs[w])),
                top_n_words,
            );
            let top_phrases = top_scored(
                phrases.iter().map(|g| {
                    let score = g.iter().map(|&w| probs[w as usize]).product::<f64>();
                    (render(g), score)
                }),
                top_n_phrases,
            );
            TopicDescriptor {
                topic: k,
                top_words,
                top_phrases,
            }
        })
        .collect()
}

fn top_scored(items: impl Iterator<Item = (String, f64)>, n: usize) -> Vec<ScoredTerm> {
    if n == 0 {
        return Vec::new();
    }
    let mut scored: Vec<ScoredTerm> = items.map(|(term, score)| ScoredTerm { term, score }).collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
    scored.dedup_by(|a, b| a.term == b.term);
    scored.truncate(n);
    scored
}
