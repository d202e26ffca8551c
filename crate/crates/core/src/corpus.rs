//! Email-pair ingestion, filtering, vocabulary construction and train/test splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{segment_sentences, tokenize};

pub const DEFAULT_MIN_CUSTOMER_TOKENS: usize = 10;
pub const DEFAULT_MIN_AGENT_TOKENS: usize = 20;
pub const DEFAULT_MIN_DOC_FREQ: u32 = 5;
pub const DEFAULT_MAX_VOCAB: usize = 20_000;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// One customer query and the agent reply to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailPair {
    pub id: String,
    #[serde(rename = "customer")]
    pub customer_text: String,
    #[serde(rename = "agent")]
    pub agent_text: String,
}

impl EmailPair {
    pub fn new(id: impl Into<String>, customer: impl Into<String>, agent: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            customer_text: customer.into(),
            agent_text: agent.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    customer: String,
    agent: String,
}

/// Reads email pairs in file order. Blank lines are skipped.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Vec<EmailPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => read_jsonl(BufReader::new(file)),
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<EmailPair>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(Error::MalformedRecord {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if raw.customer.trim().is_empty() || raw.agent.trim().is_empty() {
            return Err(Error::MalformedRecord {
                line: line_no,
                message: format!("pair `{}` has an empty customer or agent text", raw.id),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        pairs.push(EmailPair::new(raw.id, raw.customer, raw.agent));
    }
    Ok(pairs)
}

pub fn write_jsonl(path: &Path, pairs: &[EmailPair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair)?);
        out.push('\n');
    }
    crate::container::write_file(path, out.as_bytes())
}

/// Keeps pairs whose customer and agent texts have at least the given number
/// of tokens. Order is preserved.
pub fn filter_pairs(pairs: &[EmailPair], min_customer: usize, min_agent: usize) -> Vec<EmailPair> {
    pairs
        .iter()
        .filter(|p| {
            tokenize(&p.customer_text).len() >= min_customer
                && tokenize(&p.agent_text).len() >= min_agent
        })
        .cloned()
        .collect()
}

/// Token to dense id mapping with frequency statistics.
///
/// Ids are ordered by descending corpus frequency, ties broken alphabetically,
/// so the same training text always yields the same ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    corpus_freq: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    word: String,
    df: u32,
    cf: u64,
}

impl Vocabulary {
    /// Builds a vocabulary over tokenized documents, keeping words with
    /// document frequency `>= min_doc_freq` and at most `max_size` of them.
    pub fn build<'a, I>(documents: I, min_doc_freq: u32, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut df: HashMap<&'a str, u32> = HashMap::new();
        let mut cf: HashMap<&'a str, u64> = HashMap::new();
        for doc in documents {
            let mut seen = HashSet::new();
            for tok in doc {
                *cf.entry(tok.as_str()).or_default() += 1;
                if seen.insert(tok.as_str()) {
                    *df.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, u32, u64)> = df
            .into_iter()
            .filter(|&(_, d)| d >= min_doc_freq.max(1))
            .map(|(w, d)| (w, d, cf[w]))
            .collect();
        kept.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
        kept.truncate(max_size);

        let mut vocab = Self::empty();
        for (w, d, c) in kept {
            vocab.push(w.to_string(), d, c);
        }
        vocab
    }

    /// Rebuilds a vocabulary from an ordered word list. Frequencies are set to 1.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut vocab = Self::empty();
        for w in words {
            if vocab.index.contains_key(&w) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word `{w}`")));
            }
            vocab.push(w, 1, 1);
        }
        Ok(vocab)
    }

    fn empty() -> Self {
        Self {
            words: Vec::new(),
            index: HashMap::new(),
            doc_freq: Vec::new(),
            corpus_freq: Vec::new(),
        }
    }

    fn push(&mut self, word: String, df: u32, cf: u64) {
        self.index.insert(word.clone(), self.words.len() as u32);
        self.words.push(word);
        self.doc_freq.push(df);
        self.corpus_freq.push(cf);
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn doc_freq(&self, id: u32) -> u32 {
        self.doc_freq[id as usize]
    }

    pub fn corpus_freq(&self, id: u32) -> u64 {
        self.corpus_freq[id as usize]
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }

    /// Tokenizes and encodes text in one step (lookup mode).
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        self.encode(&tokenize(text))
    }

    /// Hex SHA-256 over the newline-joined word list.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<VocabEntry> = (0..self.len())
            .map(|i| VocabEntry {
                word: self.words[i].clone(),
                df: self.doc_freq[i],
                cf: self.corpus_freq[i],
            })
            .collect();
        Ok(serde_json::to_string(&entries)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let entries: Vec<VocabEntry> = serde_json::from_str(json)?;
        let mut vocab = Self::empty();
        for e in entries {
            if vocab.index.contains_key(&e.word) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word `{}`", e.word)));
            }
            vocab.push(e.word, e.df.max(1), e.cf.max(1));
        }
        Ok(vocab)
    }
}

/// Token ids of a document plus half-open sentence ranges over them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedDoc {
    pub tokens: Vec<u32>,
    pub sentence_bounds: Vec<(usize, usize)>,
}

impl TokenizedDoc {
    /// Segments `text` into sentences and encodes each against `vocab`.
    /// Sentences with no in-vocabulary tokens keep an empty range.
    pub fn from_text(text: &str, vocab: &Vocabulary) -> Self {
        let mut doc = TokenizedDoc::default();
        for sentence in segment_sentences(text) {
            let start = doc.tokens.len();
            doc.tokens.extend(vocab.encode_text(&sentence));
            doc.sentence_bounds.push((start, doc.tokens.len()));
        }
        doc
    }

    pub fn sentence(&self, j: usize) -> &[u32] {
        let (s, e) = self.sentence_bounds[j];
        &self.tokens[s..e]
    }

    pub fn sentences(&self) -> impl Iterator<Item = &[u32]> {
        self.sentence_bounds.iter().map(|&(s, e)| &self.tokens[s..e])
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_bounds.len()
    }
}

/// An email pair encoded against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPair {
    pub id: String,
    pub customer: Vec<u32>,
    pub agent: TokenizedDoc,
}

impl TokenizedPair {
    pub fn new(pair: &EmailPair, vocab: &Vocabulary) -> Self {
        Self {
            id: pair.id.clone(),
            customer: vocab.encode_text(&pair.customer_text),
            agent: TokenizedDoc::from_text(&pair.agent_text, vocab),
        }
    }
}

pub fn tokenize_pairs(pairs: &[EmailPair], vocab: &Vocabulary) -> Vec<TokenizedPair> {
    pairs.iter().map(|p| TokenizedPair::new(p, vocab)).collect()
}

/// Builds the vocabulary from the customer and agent texts of `pairs`, each
/// text counting as one document for document frequency.
pub fn build_vocabulary(pairs: &[EmailPair], min_doc_freq: u32, max_size: usize) -> Vocabulary {
    let docs: Vec<Vec<String>> = pairs
        .iter()
        .flat_map(|p| [tokenize(&p.customer_text), tokenize(&p.agent_text)])
        .collect();
    Vocabulary::build(docs.iter().map(Vec::as_slice), min_doc_freq, max_size)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl CorpusSplit {
    /// Selects the pairs of each side, in split order.
    pub fn partition(&self, pairs: &[EmailPair]) -> (Vec<EmailPair>, Vec<EmailPair>) {
        let by_id: HashMap<&str, &EmailPair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
        let pick = |ids: &[String]| -> Vec<EmailPair> {
            ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|p| (*p).clone())).collect()
        };
        (pick(&self.train), pick(&self.test))
    }
}

/// Seeded shuffle followed by a prefix/suffix cut at `ratio`.
pub fn split_corpus(pairs: &[EmailPair], ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} not in (0, 1)")));
    }
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    let mut ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((pairs.len() as f64 * ratio).round() as usize).clamp(1, pairs.len() - 1);
    let test = ids.split_off(n_train);
    Ok(CorpusSplit { train: ids, test, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleStats {
    pub docs: usize,
    pub avg_tokens: f64,
    pub avg_sentences: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub customer: RoleStats,
    pub agent: RoleStats,
}

/// Document count, mean token count and mean sentence count per role.
pub fn corpus_stats(pairs: &[EmailPair]) -> Result<CorpusStats> {
    if pairs.is_empty() {
        return Err(Error::Empty("corpus statistics need at least one pair".into()));
    }
    let role = |texts: Vec<&str>| {
        let n = texts.len() as f64;
        let tokens: usize = texts.iter().map(|t| tokenize(t).len()).sum();
        let sentences: usize = texts.iter().map(|t| segment_sentences(t).len()).sum();
        RoleStats {
            docs: texts.len(),
            avg_tokens: tokens as f64 / n,
            avg_sentences: sentences as f64 / n,
        }
    };
    Ok(CorpusStats {
        customer: role(pairs.iter().map(|p| p.customer_text.as_str()).collect()),
        agent: role(pairs.iter().map(|p| p.agent_text.as_str()).collect()),
    })
}

/// Named rows (e.g. "train", "test") rendered as an aligned table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<(String, CorpusStats)>,
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:<9} {:>8} {:>8} {:>8}", "split", "role", "D", "avg T", "avg S")?;
        for (name, stats) in &self.rows {
            for (role, r) in [("customer", &stats.customer), ("agent", &stats.agent)] {
                writeln!(
                    f,
                    "{:<8} {:<9} {:>8} {:>8.1} {:>8.2}",
                    name, role, r.docs, r.avg_tokens, r.avg_sentences
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize, prefix: &str) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn ingest_parses_records_in_order() {
        let data = r#"{"id":"1","customer":"My phone broke.","agent":"Sorry to hear that. Please reset it."}

{"id":"2","customer":"x y","agent":"z w"}
"#;
        let pairs = read_jsonl(data.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0], EmailPair::new("1", "My phone broke.", "Sorry to hear that. Please reset it."));
        assert_eq!(pairs[1].id, "2");
        assert!(read_jsonl("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn ingest_reports_line_of_bad_record() {
        let data = "{\"id\":\"1\",\"customer\":\"a\",\"agent\":\"b\"}\n{\"id\":\"2\",\"customer\":\"a\"}\n";
        match read_jsonl(data.as_bytes()) {
            Err(Error::MalformedRecord { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("agent"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_duplicate_ids() {
        let data = "{\"id\":\"7\",\"customer\":\"a\",\"agent\":\"b\"}\n{\"id\":\"7\",\"customer\":\"c\",\"agent\":\"d\"}\n";
        match read_jsonl(data.as_bytes()) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn filter_thresholds_are_inclusive() {
        let short = EmailPair::new("a", words(9, "c"), words(25, "g"));
        let edge = EmailPair::new("b", words(10, "c"), words(20, "g"));
        let kept = filter_pairs(&[short, edge.clone()], 10, 20);
        assert_eq!(kept, vec![edge]);
        assert!(filter_pairs(&[], 10, 20).is_empty());
    }

    #[test]
    fn lookup_drops_unknown_tokens() {
        let docs = vec![vec!["phone".to_string(), "screen".to_string()]];
        let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1, 10);
        assert_eq!(vocab.encode_text("phone broken screen").len(), 2);
        assert!(vocab.encode_text("keyboard").is_empty());
    }

    #[test]
    fn vocabulary_prunes_by_doc_freq_and_size() {
        let docs: Vec<Vec<String>> = vec![
            vec!["aa".into(), "aa".into(), "bb".into()],
            vec!["aa".into(), "cc".into()],
            vec!["bb".into()],
        ];
        let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 2, 10);
        assert_eq!(vocab.words(), &["aa".to_string(), "bb".to_string()]);
        assert_eq!(vocab.doc_freq(0), 2);
        assert_eq!(vocab.corpus_freq(0), 3);
        let capped = Vocabulary::build(docs.iter().map(Vec::as_slice), 1, 1);
        assert_eq!(capped.words(), &["aa".to_string()]);
    }

    #[test]
    fn tokenized_doc_bounds_partition_tokens() {
        let docs = vec![vec!["reset".to_string(), "phone".to_string(), "reply".to_string()]];
        let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1, 10);
        let doc = TokenizedDoc::from_text("Please reset the phone. Xyzzy! Then reply.", &vocab);
        assert_eq!(doc.sentence_bounds, vec![(0, 2), (2, 2), (2, 3)]);
        assert_eq!(doc.sentence(2), &[vocab.id("reply").unwrap()]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let pairs: Vec<EmailPair> = (0..10).map(|i| EmailPair::new(i.to_string(), "c", "a")).collect();
        let a = split_corpus(&pairs, 0.8, 42).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (8, 2));
        assert_eq!(a, split_corpus(&pairs, 0.8, 42).unwrap());
        assert!(split_corpus(&pairs[..1], 0.8, 42).is_err());
        assert!(split_corpus(&pairs, 1.0, 42).is_err());
    }

    #[test]
    fn stats_averages() {
        let pairs = vec![
            EmailPair::new("1", words(4, "c"), words(10, "g")),
            EmailPair::new("2", words(6, "c"), words(20, "g")),
        ];
        let stats = corpus_stats(&pairs).unwrap();
        assert_eq!(stats.agent.avg_tokens, 15.0);
        assert_eq!(stats.customer.docs, 2);
        let one = vec![EmailPair::new("1", "Hi there.", "One here. Two here. Three here.")];
        assert_eq!(corpus_stats(&one).unwrap().agent.avg_sentences, 3.0);
        assert!(corpus_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(lens in prop::collection::vec((0usize..15, 0usize..30), 0..20)) {
            let pairs: Vec<EmailPair> = lens.iter().enumerate()
                .map(|(i, &(c, a))| EmailPair::new(i.to_string(), words(c, "c"), words(a, "g")))
                .collect();
            let once = filter_pairs(&pairs, 10, 20);
            prop_assert_eq!(filter_pairs(&once, 10, 20), once);
        }

        #[test]
        fn lookup_output_within_vocabulary(text in "\\PC{0,100}") {
            let docs = vec![tokenize("phone screen warranty repair centre"), tokenize(&text)];
            let vocab = Vocabulary::build(docs[..1].iter().map(Vec::as_slice), 1, 100);
            for id in vocab.encode_text(&text) {
                prop_assert!((id as usize) < vocab.len());
            }
        }

        #[test]
        fn split_is_pure(n in 2usize..40, seed in any::<u64>()) {
            let pairs: Vec<EmailPair> = (0..n).map(|i| EmailPair::new(format!("p{i}"), "c", "a")).collect();
            let a = split_corpus(&pairs, 0.8, seed).unwrap();
            let b = split_corpus(&pairs, 0.8, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let train: HashSet<_> = a.train.iter().collect();
            prop_assert!(a.test.iter().all(|id| !train.contains(id)));
            prop_assert_eq!(a.train.len() + a.test.len(), n);
        }
    }
}
