//! Synthetic email corpora with known topic structure.
//!
//! Every generator returns the pairs together with an [`Oracle`] recording
//! the parameters and the latent topics it used, so tests can check learned
//! models against ground truth.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, EmailPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoupledParams {
    pub pairs: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    /// Share of each document's topic mass spread by Dirichlet noise.
    pub noise: f64,
    pub customer_sentences: (usize, usize),
    pub agent_sentences: (usize, usize),
    pub sentence_words: (usize, usize),
}

impl Default for CoupledParams {
    fn default() -> Self {
        Self {
            pairs: 5000,
            topics: 20,
            words_per_topic: 15,
            noise: 0.1,
            customer_sentences: (2, 3),
            agent_sentences: (3, 5),
            sentence_words: (6, 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub emails: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub sentences: usize,
    /// Probability of moving from topic k to k + 1.
    pub concentration: f64,
    /// The remaining mass is spread evenly over k + 2 ..= k + 1 + spread.
    pub spread: usize,
    /// Distribution of the offset between the customer topic and the agent's
    /// first-sentence topic.
    pub first_offsets: Vec<f64>,
    /// Customer topic k is drawn with weight `1 + skew * (1 - k / (M - 1))`.
    pub skew: f64,
    pub customer_sentences: usize,
    pub sentence_words: (usize, usize),
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            emails: 3000,
            topics: 20,
            words_per_topic: 15,
            sentences: 6,
            concentration: 0.9,
            spread: 3,
            first_offsets: vec![0.55, 0.25, 0.12, 0.08],
            skew: 0.5,
            customer_sentences: 2,
            sentence_words: (8, 12),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoVocabParams {
    pub pairs: usize,
    pub words_per_set: usize,
    pub doc_words: (usize, usize),
}

impl Default for TwoVocabParams {
    fn default() -> Self {
        Self {
            pairs: 400,
            words_per_set: 5,
            doc_words: (20, 30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Coupled(CoupledParams),
    Chain(ChainParams),
    TwoVocab(TwoVocabParams),
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Coupled(_) => "coupled",
            Profile::Chain(_) => "chain",
            Profile::TwoVocab(_) => "two_vocab",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "coupled" => Ok(Profile::Coupled(CoupledParams::default())),
            "chain" => Ok(Profile::Chain(ChainParams::default())),
            "two_vocab" => Ok(Profile::TwoVocab(TwoVocabParams::default())),
            _ => Err(Error::InvalidArgument(format!("unknown synthetic profile `{name}`"))),
        }
    }
}

/// Latent topics behind one generated pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTopics {
    pub id: String,
    pub customer_topic: usize,
    pub agent_topics: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub params: Profile,
    pub seed: u64,
    pub topic_words: Vec<Vec<String>>,
    /// Coupled profile: agent topic for each customer topic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    /// Chain profile: row-stochastic sentence topic transition matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    pub pairs: Vec<PairTopics>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub pairs: Vec<EmailPair>,
    pub oracle: Oracle,
}

impl SynthCorpus {
    /// Writes the corpus as JSONL and the oracle as `<path>.oracle.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_jsonl(path, &self.pairs)?;
        let oracle_path = oracle_path(path);
        let json = serde_json::to_string_pretty(&self.oracle)?;
        std::fs::write(&oracle_path, json).map_err(|e| Error::io(&oracle_path, e))
    }
}

pub fn oracle_path(corpus: &Path) -> std::path::PathBuf {
    let mut name = corpus.file_name().unwrap_or_default().to_os_string();
    name.push(".oracle.json");
    corpus.with_file_name(name)
}

pub fn generate(profile: &Profile, seed: u64) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match profile {
        Profile::Coupled(p) => coupled(p, profile, seed, &mut rng),
        Profile::Chain(p) => chain(p, profile, seed, &mut rng),
        Profile::TwoVocab(p) => two_vocab(p, profile, seed, &mut rng),
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize)) -> Result<()> {
    if lo == 0 || lo > hi {
        return Err(Error::InvalidArgument(format!("{name} range ({lo}, {hi}) is invalid")));
    }
    Ok(())
}

/// Word `i` of topic `k`; letters only, so no tokenizer rule touches it.
fn topic_word(k: usize, i: usize) -> String {
    const SYLLABLES: [&str; 16] = [
        "ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze", "bo", "da", "fi", "gu", "ho", "je",
    ];
    let mut s = String::from("q");
    for digit in [k / 16, k % 16, i / 16, i % 16] {
        s.push_str(SYLLABLES[digit % 16]);
    }
    s
}

fn topic_vocab(topics: usize, words: usize) -> Vec<Vec<String>> {
    (0..topics).map(|k| (0..words).map(|i| topic_word(k, i)).collect()).collect()
}

fn sentence_from(words: Vec<&str>) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

/// Samples `n` words from a topic mixture.
fn mixture_words<'a>(vocab: &'a [Vec<String>], theta: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    (0..n)
        .map(|_| {
            let k = sample_index(theta, rng);
            vocab[k].choose(rng).expect("non-empty topic").as_str()
        })
        .collect()
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

fn noisy_theta(topic: usize, m: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Flat Dirichlet draw as normalized unit exponentials.
    let mut spread: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = spread.iter().sum();
    spread.iter_mut().for_each(|x| *x /= total);
    (0..m)
        .map(|k| noise * spread[k] + if k == topic { 1.0 - noise } else { 0.0 })
        .collect()
}

fn coupled(p: &CoupledParams, profile: &Profile, seed: u64, rng: &mut ChaCha8Rng) -> Result<SynthCorpus> {
    if p.topics < 2 || p.words_per_topic == 0 || p.pairs == 0 || !(0.0..1.0).contains(&p.noise) {
        return Err(Error::InvalidArgument(format!("invalid coupled parameters {p:?}")));
    }
    check_range("customer_sentences", p.customer_sentences)?;
    check_range("agent_sentences", p.agent_sentences)?;
    check_range("sentence_words", p.sentence_words)?;
    let vocab = topic_vocab(p.topics, p.words_per_topic);
    // A derangement, so the agent never simply repeats the customer's topic.
    let mut permutation: Vec<usize> = (0..p.topics).collect();
    loop {
        permutation.shuffle(rng);
        if permutation.iter().enumerate().all(|(k, &pk)| k != pk) {
            break;
        }
    }

    let mut pairs = Vec::with_capacity(p.pairs);
    let mut latent = Vec::with_capacity(p.pairs);
    for i in 0..p.pairs {
        let t = rng.random_range(0..p.topics);
        let agent_topic = permutation[t];
        let theta_c = noisy_theta(t, p.topics, p.noise, rng);
        let theta_a = noisy_theta(agent_topic, p.topics, p.noise, rng);
        let render = |theta: &[f64], sentences: (usize, usize), rng: &mut ChaCha8Rng| -> String {
            let n = rng.random_range(sentences.0..=sentences.1);
            (0..n)
                .map(|_| {
                    let len = rng.random_range(p.sentence_words.0..=p.sentence_words.1);
                    sentence_from(mixture_words(&vocab, theta, len, rng))
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let customer = render(&theta_c, p.customer_sentences, rng);
        let agent = render(&theta_a, p.agent_sentences, rng);
        let id = format!("c{i:06}");
        pairs.push(EmailPair::new(id.clone(), customer, agent));
        latent.push(PairTopics {
            id,
            customer_topic: t,
            agent_topics: vec![agent_topic],
        });
    }
    Ok(SynthCorpus {
        pairs,
        oracle: Oracle {
            params: profile.clone(),
            seed,
            topic_words: vocab,
            permutation: Some(permutation),
            transition: None,
            pairs: latent,
        },
    })
}

/// Transition matrix with `concentration` on k -> k + 1 and the rest spread
/// evenly over the following `spread` topics.
pub fn chain_transition_matrix(topics: usize, concentration: f64, spread: usize) -> Vec<Vec<f64>> {
    let spread = spread.min(topics.saturating_sub(2));
    (0..topics)
        .map(|k| {
            let mut row = vec![0.0; topics];
            if spread == 0 {
                row[(k + 1) % topics] = 1.0;
            } else {
                row[(k + 1) % topics] = concentration;
                for s in 0..spread {
                    row[(k + 2 + s) % topics] += (1.0 - concentration) / spread as f64;
                }
            }
            row
        })
        .collect()
}

fn chain(p: &ChainParams, profile: &Profile, seed: u64, rng: &mut ChaCha8Rng) -> Result<SynthCorpus> {
    if p.topics < 2
        || p.words_per_topic == 0
        || p.emails == 0
        || p.sentences == 0
        || p.customer_sentences == 0
        || !(0.0..=1.0).contains(&p.concentration)
        || p.first_offsets.is_empty()
        || p.first_offsets.iter().any(|&w| !(w >= 0.0))
        || p.first_offsets.iter().sum::<f64>() <= 0.0
        || p.skew < 0.0
    {
        return Err(Error::InvalidArgument(format!("invalid chain parameters {p:?}")));
    }
    check_range("sentence_words", p.sentence_words)?;
    let vocab = topic_vocab(p.topics, p.words_per_topic);
    let transition = chain_transition_matrix(p.topics, p.concentration, p.spread);
    let m = p.topics as f64;
    let customer_weights: Vec<f64> = (0..p.topics)
        .map(|k| 1.0 + p.skew * (1.0 - k as f64 / (m - 1.0)))
        .collect();

    let pure_sentence = |k: usize, rng: &mut ChaCha8Rng| {
        let len = rng.random_range(p.sentence_words.0..=p.sentence_words.1);
        sentence_from((0..len).map(|_| vocab[k].choose(rng).unwrap().as_str()).collect())
    };

    let mut pairs = Vec::with_capacity(p.emails);
    let mut latent = Vec::with_capacity(p.emails);
    for i in 0..p.emails {
        let t = sample_index(&customer_weights, rng);
        let customer = (0..p.customer_sentences)
            .map(|_| pure_sentence(t, rng))
            .collect::<Vec<_>>()
            .join(" ");
        let mut topics = Vec::with_capacity(p.sentences);
        let mut k = (t + sample_index(&p.first_offsets, rng)) % p.topics;
        for _ in 0..p.sentences {
            topics.push(k);
            k = sample_index(&transition[k], rng);
        }
        let agent = topics.iter().map(|&k| pure_sentence(k, rng)).collect::<Vec<_>>().join(" ");
        let id = format!("e{i:06}");
        pairs.push(EmailPair::new(id.clone(), customer, agent));
        latent.push(PairTopics {
            id,
            customer_topic: t,
            agent_topics: topics,
        });
    }
    Ok(SynthCorpus {
        pairs,
        oracle: Oracle {
            params: profile.clone(),
            seed,
            topic_words: vocab,
            permutation: None,
            transition: Some(transition),
            pairs: latent,
        },
    })
}

fn two_vocab(p: &TwoVocabParams, profile: &Profile, seed: u64, rng: &mut ChaCha8Rng) -> Result<SynthCorpus> {
    if p.pairs == 0 || p.words_per_set == 0 {
        return Err(Error::InvalidArgument(format!("invalid two_vocab parameters {p:?}")));
    }
    check_range("doc_words", p.doc_words)?;
    let vocab: Vec<Vec<String>> = ["a", "b"]
        .iter()
        .map(|prefix| (1..=p.words_per_set).map(|i| format!("{prefix}{i}")).collect())
        .collect();
    let mut pairs = Vec::with_capacity(p.pairs);
    let mut latent = Vec::with_capacity(p.pairs);
    for i in 0..p.pairs {
        let set = i % 2;
        let doc = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(p.doc_words.0..=p.doc_words.1);
            sentence_from((0..n).map(|_| vocab[set].choose(rng).unwrap().as_str()).collect())
        };
        let customer = doc(rng);
        let agent = doc(rng);
        let id = format!("v{i:06}");
        pairs.push(EmailPair::new(id.clone(), customer, agent));
        latent.push(PairTopics {
            id,
            customer_topic: set,
            agent_topics: vec![set],
        });
    }
    Ok(SynthCorpus {
        pairs,
        oracle: Oracle {
            params: profile.clone(),
            seed,
            topic_words: vocab,
            permutation: None,
            transition: None,
            pairs: latent,
        },
    })
}
