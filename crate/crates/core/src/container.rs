//! The `TPAM` binary container shared by topic models and predictor suites.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TPAM" | version: u32 | meta_len: u64 | meta: JSON (meta_len bytes) | payload
//! ```
//!
//! A topic model payload is the `M x V` count matrix as row-major `u32`,
//! followed by `V` vocabulary words, each a `u32` byte length and UTF-8 bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::topic_model::{TopicModel, View};

pub const MAGIC: &[u8; 4] = b"TPAM";
pub const VERSION: u32 = 1;

pub fn encode(meta: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + meta.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta);
    out.extend_from_slice(payload);
    out
}

/// Splits a container into its JSON metadata and payload.
pub fn decode(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Container("missing TPAM magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let rest = &bytes[16..];
    if rest.len() < meta_len {
        return Err(Error::Container("truncated metadata".into()));
    }
    Ok(rest.split_at(meta_len))
}

/// Hex SHA-256 of a byte buffer.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint(&bytes))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    view: View,
    num_topics: usize,
    vocab_size: usize,
    alpha: Vec<f64>,
    beta: f64,
    seed: u64,
    sweeps: usize,
    vocabulary_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

const MODEL_KIND: &str = "topic_model";

/// Byte cursor over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Container("truncated payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Container(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

impl TopicModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = ModelMeta {
            kind: MODEL_KIND.into(),
            view: self.view,
            num_topics: self.num_topics(),
            vocab_size: self.vocab_size(),
            alpha: self.alpha.clone(),
            beta: self.beta,
            seed: self.seed,
            sweeps: self.sweeps,
            vocabulary_hash: self.vocabulary.fingerprint(),
            config_hash: self.config_hash.clone(),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut payload = Vec::with_capacity(self.topic_word_counts.len() * 4);
        for c in &self.topic_word_counts {
            payload.extend_from_slice(&c.to_le_bytes());
        }
        for w in self.vocabulary.words() {
            payload.extend_from_slice(&(w.len() as u32).to_le_bytes());
            payload.extend_from_slice(w.as_bytes());
        }
        Ok(encode(&meta, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload) = decode(bytes)?;
        let meta: ModelMeta = serde_json::from_slice(meta)?;
        if meta.kind != MODEL_KIND {
            return Err(Error::Container(format!("expected a topic model, found `{}`", meta.kind)));
        }
        if meta.alpha.len() != meta.num_topics {
            return Err(Error::Container("alpha length does not match topic count".into()));
        }
        let mut reader = Reader::new(payload);
        let mut counts = Vec::with_capacity(meta.num_topics * meta.vocab_size);
        for _ in 0..meta.num_topics * meta.vocab_size {
            counts.push(reader.u32()?);
        }
        let mut words = Vec::with_capacity(meta.vocab_size);
        for _ in 0..meta.vocab_size {
            let len = reader.u32()? as usize;
            let raw = reader.take(len)?;
            let word = std::str::from_utf8(raw).map_err(|e| Error::Container(e.to_string()))?;
            words.push(word.to_string());
        }
        reader.finish()?;
        let vocabulary = Vocabulary::from_words(words)?;
        if vocabulary.fingerprint() != meta.vocabulary_hash {
            return Err(Error::Container("vocabulary hash mismatch".into()));
        }
        let mut model = TopicModel::from_counts(
            meta.view,
            meta.alpha,
            meta.beta,
            counts,
            vocabulary,
            meta.seed,
            meta.sweeps,
        )?;
        model.config_hash = meta.config_hash;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TopicModel {
        let vocab = Vocabulary::from_words(vec!["écran".into(), "phone".into(), "x1".into()]).unwrap();
        let mut m = TopicModel::from_counts(
            View::S,
            vec![0.1 + 0.2, 1.0 / 3.0],
            0.01,
            vec![1, 2, 3, 4, 5, 6],
            vocab,
            7,
            100,
        )
        .unwrap();
        m.set_config_hash("abc");
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"TPAM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = TopicModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn counts_are_row_major_after_metadata() {
        let bytes = sample().to_bytes().unwrap();
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload = &bytes[16 + meta_len..];
        let first: Vec<u32> = payload[..24]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(first, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(u32::from_le_bytes(payload[24..28].try_into().unwrap()), "écran".len() as u32);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        assert!(TopicModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(TopicModel::from_bytes(&bytes).is_err());
    }
}
