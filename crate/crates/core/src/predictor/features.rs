use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topic_model::TopicDistribution;

pub const POSITION_BUCKETS: usize = 7;

/// Bucket of a sentence index: 0, 1, 2, 3, 4, 5-7, 8+.
pub fn position_bucket(j: usize) -> usize {
    match j {
        0..=4 => j,
        5..=7 => 5,
        _ => 6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    CustomerWords,
    CustomerTopics,
    SentenceWords,
    SentenceTopics,
    Position,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous feature blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    blocks: Vec<Block>,
    dim: usize,
}

impl FeatureLayout {
    pub fn new(spec: &[(BlockKind, usize)]) -> Self {
        let mut offset = 0;
        let blocks = spec
            .iter()
            .map(|&(kind, len)| {
                let b = Block { kind, offset, len };
                offset += len;
                b
            })
            .collect();
        Self { blocks, dim: offset }
    }

    /// Customer bag-of-words and topic distribution.
    pub fn whole_reply(vocab_size: usize, num_topics: usize) -> Self {
        Self::new(&[
            (BlockKind::CustomerWords, vocab_size),
            (BlockKind::CustomerTopics, num_topics),
            (BlockKind::Bias, 1),
        ])
    }

    /// Customer-only inputs for predicting the first reply sentence.
    pub fn first_sentence(vocab_size: usize, num_topics: usize, set: FeatureSet) -> Self {
        let mut spec = Vec::new();
        if set.uses_words() {
            spec.push((BlockKind::CustomerWords, vocab_size));
        }
        if set.uses_topics() {
            spec.push((BlockKind::CustomerTopics, num_topics));
        }
        spec.push((BlockKind::Bias, 1));
        Self::new(&spec)
    }

    /// Inputs for predicting sentence j + 1 from sentence j. The current
    /// sentence topic block is included when the feature set uses topics or
    /// when `force_sentence_topic` is set (pooled fallback models).
    pub fn transition(vocab_size: usize, num_topics: usize, set: FeatureSet, force_sentence_topic: bool) -> Self {
        let mut spec = Vec::new();
        if set.uses_words() {
            spec.push((BlockKind::CustomerWords, vocab_size));
        }
        if set.uses_topics() {
            spec.push((BlockKind::CustomerTopics, num_topics));
        }
        if set.uses_words() {
            spec.push((BlockKind::SentenceWords, vocab_size));
        }
        if set.uses_topics() || force_sentence_topic {
            spec.push((BlockKind::SentenceTopics, num_topics));
        }
        if set.uses_position() {
            spec.push((BlockKind::Position, POSITION_BUCKETS));
        }
        spec.push((BlockKind::Bias, 1));
        Self::new(&spec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, kind: BlockKind) -> Option<&Block> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    pub fn has(&self, kind: BlockKind) -> bool {
        self.block(kind).is_some()
    }

    /// Encodes a context into this layout. Blocks the context cannot fill
    /// (e.g. sentence blocks for a first-sentence context) stay zero.
    pub fn encode(&self, ctx: &FeatureContext<'_>) -> FeatureVector {
        let mut entries: Vec<(u32, f64)> = Vec::new();
        for block in &self.blocks {
            let base = block.offset as u32;
            match block.kind {
                BlockKind::CustomerWords => push_words(&mut entries, base, block.len, ctx.customer_tokens),
                BlockKind::CustomerTopics => push_dense(&mut entries, base, ctx.customer_topics.probs()),
                BlockKind::SentenceWords => {
                    if let Some(s) = &ctx.sentence {
                        push_words(&mut entries, base, block.len, s.tokens);
                    }
                }
                BlockKind::SentenceTopics => {
                    if let Some(s) = &ctx.sentence {
                        match ctx.sentence_topic {
                            SentenceTopicFeature::Dominant => {
                                if s.dominant < block.len {
                                    entries.push((base + s.dominant as u32, 1.0));
                                }
                            }
                            SentenceTopicFeature::Distribution => push_dense(&mut entries, base, s.topics.probs()),
                        }
                    }
                }
                BlockKind::Position => {
                    if let Some(s) = &ctx.sentence {
                        entries.push((base + position_bucket(s.j) as u32, 1.0));
                    }
                }
                BlockKind::Bias => entries.push((base, 1.0)),
            }
        }
        FeatureVector::from_sorted(entries)
    }
}

fn push_words(entries: &mut Vec<(u32, f64)>, base: u32, len: usize, tokens: &[u32]) {
    let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
    for &t in tokens {
        if (t as usize) < len {
            *tf.entry(t).or_default() += 1;
        }
    }
    entries.extend(tf.into_iter().map(|(t, c)| (base + t, (1.0 + c as f64).ln())));
}

fn push_dense(entries: &mut Vec<(u32, f64)>, base: u32, values: &[f64]) {
    entries.extend(
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (base + k as u32, v)),
    );
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("feature indices must be strictly increasing".into()));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: last as usize + 1,
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self { indices, values })
    }

    pub(crate) fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        let (indices, values) = entries.into_iter().unzip();
        Self { indices, values }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .collect();
        Self::from_sorted(entries)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// One past the largest index, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }
}

/// Feature subsets of the next-sentence ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Words,
    WordsPosition,
    Topics,
    TopicsWords,
    TopicsWordsPosition,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [
        FeatureSet::Words,
        FeatureSet::WordsPosition,
        FeatureSet::Topics,
        FeatureSet::TopicsWords,
        FeatureSet::TopicsWordsPosition,
    ];

    pub fn uses_words(self) -> bool {
        !matches!(self, FeatureSet::Topics)
    }

    pub fn uses_topics(self) -> bool {
        matches!(
            self,
            FeatureSet::Topics | FeatureSet::TopicsWords | FeatureSet::TopicsWordsPosition
        )
    }

    pub fn uses_position(self) -> bool {
        matches!(self, FeatureSet::WordsPosition | FeatureSet::TopicsWordsPosition)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Words => "words",
            FeatureSet::WordsPosition => "words+position",
            FeatureSet::Topics => "topics",
            FeatureSet::TopicsWords => "topics+words",
            FeatureSet::TopicsWordsPosition => "topics+words+position",
        }
    }
}

/// How the current sentence's topic enters the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceTopicFeature {
    /// One-hot of the dominant topic.
    #[default]
    Dominant,
    /// The full sentence topic distribution.
    Distribution,
}

#[derive(Debug, Clone)]
pub struct SentenceContext<'a> {
    pub tokens: &'a [u32],
    pub topics: &'a TopicDistribution,
    pub dominant: usize,
    /// Index of this sentence within the reply.
    pub j: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureContext<'a> {
    pub customer_tokens: &'a [u32],
    pub customer_topics: &'a TopicDistribution,
    pub sentence: Option<SentenceContext<'a>>,
    pub sentence_topic: SentenceTopicFeature,
}
