//! Silver-standard topic annotations of email pairs and the next-sentence
//! training examples derived from them.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::topic_model::{dominant_topic, InferenceConfig, TopicDistribution, TopicModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub j: usize,
    pub tau_s: TopicDistribution,
    pub dom: usize,
    pub peaked: bool,
    /// The sentence had no in-vocabulary tokens; `tau_s` is the model prior.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oov: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilverAnnotation {
    pub id: String,
    pub tau_ca_c: TopicDistribution,
    pub tau_ca_a: TopicDistribution,
    pub sentences: Vec<SentenceRecord>,
}

/// Infers customer and agent distributions under the pair model and one
/// distribution per agent sentence under the sentence model. Output order
/// matches input order.
pub fn annotate(
    pairs: &[TokenizedPair],
    model_ca: &TopicModel,
    model_s: &TopicModel,
    inference: &InferenceConfig,
) -> Result<Vec<SilverAnnotation>> {
    if model_ca.vocabulary().fingerprint() != model_s.vocabulary().fingerprint() {
        return Err(Error::InvalidArgument(
            "pair and sentence models were trained on different vocabularies".into(),
        ));
    }
    Ok(pairs
        .par_iter()
        .map(|pair| annotate_pair(pair, model_ca, model_s, inference))
        .collect())
}

fn annotate_pair(
    pair: &TokenizedPair,
    model_ca: &TopicModel,
    model_s: &TopicModel,
    inference: &InferenceConfig,
) -> SilverAnnotation {
    let sentences = pair
        .agent
        .sentences()
        .enumerate()
        .map(|(j, tokens)| {
            let tau_s = model_s.infer_with(tokens, inference);
            let (dom, peaked) = dominant_topic(&tau_s);
            SentenceRecord {
                j,
                tau_s,
                dom,
                peaked,
                oov: tokens.is_empty(),
            }
        })
        .collect();
    SilverAnnotation {
        id: pair.id.clone(),
        tau_ca_c: model_ca.infer_with(&pair.customer, inference),
        tau_ca_a: model_ca.infer_with(&pair.agent.tokens, inference),
        sentences,
    }
}

pub fn write_silver(path: &Path, annotations: &[SilverAnnotation]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for a in annotations {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_silver(path: &Path) -> Result<Vec<SilverAnnotation>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExampleKind {
    /// Predict sentence 0 from the customer query alone.
    First,
    /// Predict sentence `j + 1` from sentence `j`.
    Transition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionExample {
    /// Index of the annotation (and tokenized pair) this example came from.
    pub pair: usize,
    pub pair_id: String,
    /// Current sentence index; 0 for first-sentence examples.
    pub j: usize,
    /// Dominant topic of the current sentence (transition examples only).
    pub current_dominant: Option<usize>,
    pub next_dominant: usize,
    pub kind: ExampleKind,
}

impl TransitionExample {
    /// Index of the sentence whose topic is predicted.
    pub fn target_sentence(&self) -> usize {
        match self.kind {
            ExampleKind::First => 0,
            ExampleKind::Transition => self.j + 1,
        }
    }
}

/// One first-sentence example per pair with at least one agent sentence, plus
/// one example per consecutive sentence pair.
pub fn transition_pairs(annotations: &[SilverAnnotation]) -> Vec<TransitionExample> {
    let mut out = Vec::new();
    for (idx, ann) in annotations.iter().enumerate() {
        let Some(first) = ann.sentences.first() else {
            continue;
        };
        out.push(TransitionExample {
            pair: idx,
            pair_id: ann.id.clone(),
            j: 0,
            current_dominant: None,
            next_dominant: first.dom,
            kind: ExampleKind::First,
        });
        for (cur, next) in ann.sentences.iter().zip(ann.sentences.iter().skip(1)) {
            out.push(TransitionExample {
                pair: idx,
                pair_id: ann.id.clone(),
                j: cur.j,
                current_dominant: Some(cur.dom),
                next_dominant: next.dom,
                kind: ExampleKind::Transition,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenizedDoc, Vocabulary};
    use crate::topic_model::View;

    fn models() -> (TopicModel, TopicModel) {
        let vocab = Vocabulary::from_words(["a1", "a2", "b1", "b2"].map(String::from).to_vec()).unwrap();
        let counts = vec![50, 50, 0, 0, 0, 0, 50, 50];
        let ca = TopicModel::from_counts(View::CA, vec![0.5, 0.5], 0.01, counts.clone(), vocab.clone(), 1, 1).unwrap();
        let s = TopicModel::from_counts(View::S, vec![0.5, 0.5], 0.01, counts, vocab, 2, 1).unwrap();
        (ca, s)
    }

    fn pair(id: &str, sentences: &[&[u32]]) -> TokenizedPair {
        let mut agent = TokenizedDoc::default();
        for s in sentences {
            let start = agent.tokens.len();
            agent.tokens.extend_from_slice(s);
            agent.sentence_bounds.push((start, agent.tokens.len()));
        }
        TokenizedPair {
            id: id.into(),
            customer: vec![0, 1, 0],
            agent,
        }
    }

    fn annotation(id: &str, doms: &[usize]) -> SilverAnnotation {
        SilverAnnotation {
            id: id.into(),
            tau_ca_c: TopicDistribution::uniform(3),
            tau_ca_a: TopicDistribution::uniform(3),
            sentences: doms
                .iter()
                .enumerate()
                .map(|(j, &d)| SentenceRecord {
                    j,
                    tau_s: TopicDistribution::one_hot(3, d),
                    dom: d,
                    peaked: true,
                    oov: false,
                })
                .collect(),
        }
    }

    #[test]
    fn annotates_each_sentence() {
        let (ca, s) = models();
        let pairs = vec![pair("p", &[&[0, 1, 0, 1], &[2, 3, 2, 3], &[], &[0, 0, 0, 0]])];
        let ann = annotate(&pairs, &ca, &s, &InferenceConfig::default()).unwrap();
        let recs = &ann[0].sentences;
        assert_eq!(recs.iter().map(|r| r.j).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(recs[0].dom, 0);
        assert_eq!(recs[1].dom, 1);
        assert!(recs[2].oov);
        assert_eq!(recs[2].tau_s, s.prior());
        for r in recs {
            assert_eq!(r.dom, dominant_topic(&r.tau_s).0);
        }
        assert!(ann[0].tau_ca_c.probs()[0] > 0.5);
        assert_eq!(ann, annotate(&pairs, &ca, &s, &InferenceConfig::default()).unwrap());
    }

    #[test]
    fn transition_counts() {
        let four = transition_pairs(&[annotation("a", &[0, 1, 2, 0])]);
        assert_eq!(four.iter().filter(|e| e.kind == ExampleKind::Transition).count(), 3);
        assert_eq!(four.iter().filter(|e| e.kind == ExampleKind::First).count(), 1);
        assert_eq!(four[1].current_dominant, Some(0));
        assert_eq!(four[1].next_dominant, 1);
        assert_eq!(four[3].target_sentence(), 3);

        let one = transition_pairs(&[annotation("b", &[2])]);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].next_dominant, 2);

        let two = transition_pairs(&[annotation("c", &[0, 1, 2]), annotation("d", &[2, 1, 0]), annotation("e", &[])]);
        assert_eq!(two.iter().filter(|e| e.kind == ExampleKind::Transition).count(), 4);
    }

    #[test]
    fn silver_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silver.jsonl");
        let anns = vec![annotation("a", &[0, 1]), annotation("b", &[])];
        write_silver(&path, &anns).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"id\":\"a\",\"tau_ca_c\":["));
        assert!(text.contains("\"sentences\":[{\"j\":0,\"tau_s\":"));
        assert_eq!(read_silver(&path).unwrap(), anns);
    }
}
