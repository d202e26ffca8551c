#![allow(dead_code)]

use std::path::{Path, PathBuf};

use replytopic::pipeline::{Pipeline, PipelineConfig, Stage};
use replytopic::synth::{generate, Profile, SynthCorpus};
use replytopic::topic_model::{dominant_topic, TopicModel};

/// Writes a synthetic corpus to `dir/corpus.jsonl` and returns it.
pub fn write_corpus(dir: &Path, profile: &Profile, seed: u64) -> (PathBuf, SynthCorpus) {
    let corpus = generate(profile, seed).expect("generate");
    let path = dir.join("corpus.jsonl");
    corpus.write(&path).expect("write corpus");
    (path, corpus)
}

/// A small pipeline config over one topic count.
pub fn small_config(corpus: &Path, out: &Path, m: usize, sweeps: usize) -> PipelineConfig {
    let mut config = PipelineConfig {
        corpus: corpus.to_path_buf(),
        output_dir: out.to_path_buf(),
        topics: vec![m],
        primary_topics: m,
        seed: 7,
        ..PipelineConfig::default()
    };
    config.lda.sweeps = sweeps;
    config.corpus_options.min_doc_freq = 2;
    config.predictor.ablations.clear();
    config
}

pub fn run_stages(config: PipelineConfig, stages: &[Stage]) -> Pipeline {
    let pipeline = Pipeline::new(config).expect("pipeline");
    for &stage in stages {
        pipeline.run(stage).unwrap_or_else(|e| panic!("stage {stage} failed: {e}"));
    }
    pipeline
}

/// Text made only of the given generator topic's words.
pub fn topic_text(corpus: &SynthCorpus, topic: usize, sentences: usize) -> String {
    let words = &corpus.oracle.topic_words[topic];
    (0..sentences)
        .map(|s| {
            let sentence: Vec<&str> = (0..8).map(|i| words[(s * 8 + i) % words.len()].as_str()).collect();
            let mut text = sentence.join(" ");
            text[..1].make_ascii_uppercase();
            text.push('.');
            text
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Learned topic that a pure generator-topic text lands on.
pub fn learned_topic(model: &TopicModel, corpus: &SynthCorpus, topic: usize) -> usize {
    let tokens = model.vocabulary().encode_text(&topic_text(corpus, topic, 3));
    dominant_topic(&model.infer(&tokens)).0
}
