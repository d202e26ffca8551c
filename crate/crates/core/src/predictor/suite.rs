use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureContext, FeatureLayout, FeatureSet, SentenceContext, SentenceTopicFeature};
use super::softmax::{Example, SgdConfig, SoftmaxRegressor};
use crate::container::{self, Reader};
use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::silver::{ExampleKind, SilverAnnotation, TransitionExample};
use crate::topic_model::TopicDistribution;

pub const DEFAULT_MIN_FAMILY_EXAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub feature_set: FeatureSet,
    pub sentence_topic: SentenceTopicFeature,
    pub min_family_examples: usize,
    pub sgd: SgdConfig,
    /// Extra next-sentence predictors trained per feature subset.
    pub ablations: Vec<FeatureSet>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            feature_set: FeatureSet::TopicsWordsPosition,
            sentence_topic: SentenceTopicFeature::Dominant,
            min_family_examples: DEFAULT_MIN_FAMILY_EXAMPLES,
            sgd: SgdConfig::default(),
            ablations: Vec::new(),
        }
    }
}

fn check_aligned(pairs: &[TokenizedPair], annotations: &[SilverAnnotation]) -> Result<()> {
    if pairs.len() != annotations.len() {
        return Err(Error::DimensionMismatch {
            expected: pairs.len(),
            actual: annotations.len(),
        });
    }
    for (p, a) in pairs.iter().zip(annotations) {
        if p.id != a.id {
            return Err(Error::InvalidArgument(format!(
                "annotation {} does not match pair {}",
                a.id, p.id
            )));
        }
    }
    Ok(())
}

/// Whole-reply features of one pair.
pub fn t1_features(layout: &FeatureLayout, customer_tokens: &[u32], customer_topics: &TopicDistribution) -> super::FeatureVector {
    layout.encode(&FeatureContext {
        customer_tokens,
        customer_topics,
        sentence: None,
        sentence_topic: SentenceTopicFeature::Dominant,
    })
}

/// Trains the whole-reply regressor against the silver agent distributions.
pub fn train_t1(
    pairs: &[TokenizedPair],
    annotations: &[SilverAnnotation],
    vocab_size: usize,
    sgd: SgdConfig,
) -> Result<SoftmaxRegressor> {
    check_aligned(pairs, annotations)?;
    let Some(first) = annotations.first() else {
        return Err(Error::Empty("T1 training annotations".into()));
    };
    let m = first.tau_ca_a.len();
    let layout = FeatureLayout::whole_reply(vocab_size, m);
    let examples: Vec<Example> = pairs
        .iter()
        .zip(annotations)
        .map(|(p, a)| {
            if a.tau_ca_c.len() != m || a.tau_ca_a.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: a.tau_ca_a.len().max(a.tau_ca_c.len()),
                });
            }
            Ok(Example::soft(t1_features(&layout, &p.customer, &a.tau_ca_c), &a.tau_ca_a))
        })
        .collect::<Result<_>>()?;
    let (model, history) = SoftmaxRegressor::train(layout, m, &examples, sgd)?;
    log::debug!("T1 objective by epoch: {history:?}");
    Ok(model)
}

pub fn predict_t1(model: &SoftmaxRegressor, customer_tokens: &[u32], customer_topics: &TopicDistribution) -> TopicDistribution {
    model.predict(&t1_features(model.layout(), customer_tokens, customer_topics))
}

/// Which regressor served a next-sentence prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model", content = "topic")]
pub enum Route {
    First,
    Family(usize),
    Fallback,
}

/// Next-sentence dominant-topic predictor: one regressor per current dominant
/// topic, a pooled fallback for sparse topics and a customer-only model for
/// the first sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct NextSentencePredictor {
    feature_set: FeatureSet,
    sentence_topic: SentenceTopicFeature,
    min_family_examples: usize,
    family: BTreeMap<usize, SoftmaxRegressor>,
    first: SoftmaxRegressor,
    fallback: SoftmaxRegressor,
}

impl NextSentencePredictor {
    pub fn feature_set(&self) -> FeatureSet {
        self.feature_set
    }

    pub fn sentence_topic(&self) -> SentenceTopicFeature {
        self.sentence_topic
    }

    pub fn min_family_examples(&self) -> usize {
        self.min_family_examples
    }

    pub fn family(&self) -> &BTreeMap<usize, SoftmaxRegressor> {
        &self.family
    }

    pub fn first(&self) -> &SoftmaxRegressor {
        &self.first
    }

    pub fn fallback(&self) -> &SoftmaxRegressor {
        &self.fallback
    }

    pub fn num_topics(&self) -> usize {
        self.first.num_classes()
    }

    /// Routing rule: no sentence yet goes to the first-sentence model; then the
    /// family member for the current dominant topic when one exists. Feature
    /// sets without topics have no family and always use the pooled model.
    pub fn route(&self, current_dominant: Option<usize>) -> Route {
        match current_dominant {
            None => Route::First,
            Some(d) if self.family.contains_key(&d) => Route::Family(d),
            Some(_) => Route::Fallback,
        }
    }

    pub fn regressor(&self, route: Route) -> &SoftmaxRegressor {
        match route {
            Route::First => &self.first,
            Route::Family(d) => &self.family[&d],
            Route::Fallback => &self.fallback,
        }
    }

    /// Distribution over the topic of the next sentence. `last` is the most
    /// recent composed sentence, `None` when nothing has been written.
    pub fn predict_next(
        &self,
        customer_tokens: &[u32],
        customer_topics: &TopicDistribution,
        last: Option<SentenceContext<'_>>,
    ) -> (TopicDistribution, Route) {
        let route = self.route(last.as_ref().map(|s| s.dominant));
        let model = self.regressor(route);
        let x = model.layout().encode(&FeatureContext {
            customer_tokens,
            customer_topics,
            sentence: last,
            sentence_topic: self.sentence_topic,
        });
        log::trace!("next-sentence prediction routed to {route:?}");
        (model.predict(&x), route)
    }
}

fn transition_context<'a>(pair: &'a TokenizedPair, ann: &'a SilverAnnotation, j: usize) -> SentenceContext<'a> {
    let rec = &ann.sentences[j];
    SentenceContext {
        tokens: pair.agent.sentence(j),
        topics: &rec.tau_s,
        dominant: rec.dom,
        j,
    }
}

fn member_seed(base: u64, salt: u64) -> u64 {
    base ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains the next-sentence predictor from silver transition examples.
#[allow(clippy::too_many_arguments)]
pub fn train_t2(
    pairs: &[TokenizedPair],
    annotations: &[SilverAnnotation],
    examples: &[TransitionExample],
    num_topics: usize,
    vocab_size: usize,
    feature_set: FeatureSet,
    config: &SuiteConfig,
) -> Result<NextSentencePredictor> {
    check_aligned(pairs, annotations)?;
    let transitions: Vec<&TransitionExample> = examples.iter().filter(|e| e.kind == ExampleKind::Transition).collect();
    if transitions.is_empty() {
        return Err(Error::Empty("next-sentence transitions".into()));
    }
    let firsts: Vec<&TransitionExample> = examples.iter().filter(|e| e.kind == ExampleKind::First).collect();
    if firsts.is_empty() {
        return Err(Error::Empty("first-sentence examples".into()));
    }
    for e in examples {
        if e.pair >= pairs.len() || e.next_dominant >= num_topics {
            return Err(Error::InvalidArgument(format!("example from {} is out of range", e.pair_id)));
        }
    }
    let sentence_topic = config.sentence_topic;
    let encode = |layout: &FeatureLayout, e: &TransitionExample| {
        let pair = &pairs[e.pair];
        let ann = &annotations[e.pair];
        let sentence = match e.kind {
            ExampleKind::First => None,
            ExampleKind::Transition => Some(transition_context(pair, ann, e.j)),
        };
        let x = layout.encode(&FeatureContext {
            customer_tokens: &pair.customer,
            customer_topics: &ann.tau_ca_c,
            sentence,
            sentence_topic,
        });
        Example::hard(x, e.next_dominant, num_topics)
    };

    let first_layout = FeatureLayout::first_sentence(vocab_size, num_topics, feature_set);
    let fallback_layout = FeatureLayout::transition(vocab_size, num_topics, feature_set, feature_set.uses_topics());
    let member_layout = FeatureLayout::transition(vocab_size, num_topics, feature_set, false);

    let mut partitions: BTreeMap<usize, Vec<&TransitionExample>> = BTreeMap::new();
    if feature_set.uses_topics() {
        for e in &transitions {
            partitions.entry(e.current_dominant.unwrap_or(0)).or_default().push(e);
        }
        partitions.retain(|_, v| v.len() >= config.min_family_examples);
    }

    enum Job<'a> {
        First,
        Fallback,
        Member(usize, &'a [&'a TransitionExample]),
    }
    let mut jobs = vec![Job::First, Job::Fallback];
    jobs.extend(partitions.iter().map(|(&k, v)| Job::Member(k, v.as_slice())));
    let trained: Vec<(Option<usize>, SoftmaxRegressor)> = jobs
        .par_iter()
        .map(|job| {
            let (key, layout, items, salt): (Option<usize>, &FeatureLayout, Vec<&TransitionExample>, u64) = match job {
                Job::First => (None, &first_layout, firsts.clone(), u64::MAX),
                Job::Fallback => (None, &fallback_layout, transitions.clone(), u64::MAX - 1),
                Job::Member(k, v) => (Some(*k), &member_layout, v.to_vec(), *k as u64),
            };
            let data: Vec<Example> = items.iter().map(|e| encode(layout, e)).collect();
            let sgd = SgdConfig {
                seed: member_seed(config.sgd.seed, salt),
                ..config.sgd
            };
            SoftmaxRegressor::train(layout.clone(), num_topics, &data, sgd).map(|(m, _)| (key, m))
        })
        .collect::<Result<_>>()?;
    let mut it = trained.into_iter();
    let first = it.next().expect("first-sentence job").1;
    let fallback = it.next().expect("fallback job").1;
    let family: BTreeMap<usize, SoftmaxRegressor> = it.map(|(k, m)| (k.expect("member key"), m)).collect();
    log::info!(
        "next-sentence predictor ({}): {} family members, {} transitions",
        feature_set.as_str(),
        family.len(),
        transitions.len()
    );
    Ok(NextSentencePredictor {
        feature_set,
        sentence_topic,
        min_family_examples: config.min_family_examples,
        family,
        first,
        fallback,
    })
}

/// Trained whole-reply and next-sentence predictors for one topic count.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSuite {
    pub num_topics: usize,
    pub vocab_size: usize,
    pub vocabulary_hash: String,
    pub t1: SoftmaxRegressor,
    pub t2: NextSentencePredictor,
    /// Next-sentence predictors for the feature ablation grid.
    pub ablations: Vec<NextSentencePredictor>,
    pub config_hash: Option<String>,
}

impl PredictorSuite {
    /// Trains T1, the configured T2 predictor and any ablation predictors.
    pub fn train(
        pairs: &[TokenizedPair],
        annotations: &[SilverAnnotation],
        examples: &[TransitionExample],
        vocab_size: usize,
        vocabulary_hash: impl Into<String>,
        config: &SuiteConfig,
    ) -> Result<Self> {
        let t1 = train_t1(pairs, annotations, vocab_size, config.sgd)?;
        let m = t1.num_classes();
        let t2 = train_t2(pairs, annotations, examples, m, vocab_size, config.feature_set, config)?;
        let ablations = config
            .ablations
            .iter()
            .map(|&set| train_t2(pairs, annotations, examples, m, vocab_size, set, config))
            .collect::<Result<_>>()?;
        Ok(Self {
            num_topics: m,
            vocab_size,
            vocabulary_hash: vocabulary_hash.into(),
            t1,
            t2,
            ablations,
            config_hash: None,
        })
    }

    pub fn predict_t1(&self, customer_tokens: &[u32], customer_topics: &TopicDistribution) -> TopicDistribution {
        predict_t1(&self.t1, customer_tokens, customer_topics)
    }

    pub fn predict_next(
        &self,
        customer_tokens: &[u32],
        customer_topics: &TopicDistribution,
        last: Option<SentenceContext<'_>>,
    ) -> (TopicDistribution, Route) {
        self.t2.predict_next(customer_tokens, customer_topics, last)
    }

    /// All next-sentence predictors: the configured one first, then ablations.
    pub fn next_predictors(&self) -> impl Iterator<Item = &NextSentencePredictor> {
        std::iter::once(&self.t2).chain(&self.ablations)
    }
}

const SUITE_KIND: &str = "predictor_suite";

#[derive(Serialize, Deserialize)]
struct SectionMeta {
    layout: FeatureLayout,
    num_classes: usize,
    config: SgdConfig,
}

impl SectionMeta {
    fn of(m: &SoftmaxRegressor) -> Self {
        Self {
            layout: m.layout().clone(),
            num_classes: m.num_classes(),
            config: *m.config(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NextMeta {
    feature_set: FeatureSet,
    sentence_topic: SentenceTopicFeature,
    min_family_examples: usize,
    first: SectionMeta,
    fallback: SectionMeta,
    family: Vec<(usize, SectionMeta)>,
}

#[derive(Serialize, Deserialize)]
struct SuiteMeta {
    kind: String,
    num_topics: usize,
    vocab_size: usize,
    vocabulary_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    t1: SectionMeta,
    next: Vec<NextMeta>,
}

/// Section payload: stored row count `u32`, the row feature ids as `u32`,
/// then the `rows x M` weights as `f64`.
fn push_weights(out: &mut Vec<u8>, m: &SoftmaxRegressor) {
    out.extend_from_slice(&(m.rows().len() as u32).to_le_bytes());
    for r in m.rows() {
        out.extend_from_slice(&r.to_le_bytes());
    }
    for w in m.row_weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn read_section(reader: &mut Reader<'_>, meta: SectionMeta) -> Result<SoftmaxRegressor> {
    let n_rows = reader.u32()? as usize;
    if n_rows > meta.layout.dim() {
        return Err(Error::Container(format!("{n_rows} weight rows exceed layout dimension")));
    }
    let rows = (0..n_rows).map(|_| reader.u32()).collect::<Result<Vec<_>>>()?;
    let weights = (0..n_rows * meta.num_classes)
        .map(|_| reader.f64())
        .collect::<Result<Vec<_>>>()?;
    SoftmaxRegressor::from_rows(meta.layout, meta.num_classes, rows, weights, meta.config)
        .map_err(|e| Error::Container(e.to_string()))
}

impl PredictorSuite {
    /// Serializes to a `TPAM` container: JSON metadata with one section per
    /// regressor, then each regressor's stored weight rows (little-endian) in
    /// section order: t1, then per predictor first, fallback, family by topic.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        push_weights(&mut payload, &self.t1);
        let mut next = Vec::new();
        for p in self.next_predictors() {
            push_weights(&mut payload, &p.first);
            push_weights(&mut payload, &p.fallback);
            for m in p.family.values() {
                push_weights(&mut payload, m);
            }
            next.push(NextMeta {
                feature_set: p.feature_set,
                sentence_topic: p.sentence_topic,
                min_family_examples: p.min_family_examples,
                first: SectionMeta::of(&p.first),
                fallback: SectionMeta::of(&p.fallback),
                family: p.family.iter().map(|(&k, m)| (k, SectionMeta::of(m))).collect(),
            });
        }
        let meta = SuiteMeta {
            kind: SUITE_KIND.into(),
            num_topics: self.num_topics,
            vocab_size: self.vocab_size,
            vocabulary_hash: self.vocabulary_hash.clone(),
            config_hash: self.config_hash.clone(),
            t1: SectionMeta::of(&self.t1),
            next,
        };
        Ok(container::encode(&serde_json::to_vec(&meta)?, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload) = container::decode(bytes)?;
        let meta: SuiteMeta = serde_json::from_slice(meta)?;
        if meta.kind != SUITE_KIND {
            return Err(Error::Container(format!("expected {SUITE_KIND}, found {}", meta.kind)));
        }
        let mut reader = Reader::new(payload);
        let t1 = read_section(&mut reader, meta.t1)?;
        let mut predictors = Vec::new();
        for n in meta.next {
            let first = read_section(&mut reader, n.first)?;
            let fallback = read_section(&mut reader, n.fallback)?;
            let mut family = BTreeMap::new();
            for (k, s) in n.family {
                if k >= meta.num_topics {
                    return Err(Error::Container(format!("family key {k} out of range")));
                }
                family.insert(k, read_section(&mut reader, s)?);
            }
            predictors.push(NextSentencePredictor {
                feature_set: n.feature_set,
                sentence_topic: n.sentence_topic,
                min_family_examples: n.min_family_examples,
                family,
                first,
                fallback,
            });
        }
        reader.finish()?;
        let mut it = predictors.into_iter();
        let t2 = it
            .next()
            .ok_or_else(|| Error::Container("suite has no next-sentence predictor".into()))?;
        Ok(Self {
            num_topics: meta.num_topics,
            vocab_size: meta.vocab_size,
            vocabulary_hash: meta.vocabulary_hash,
            t1,
            t2,
            ablations: it.collect(),
            config_hash: meta.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}
