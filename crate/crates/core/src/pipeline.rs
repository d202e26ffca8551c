//! Staged orchestration over an output directory. Every stage records the
//! hashes of its inputs and outputs plus the config hash in a manifest, so a
//! rerun with unchanged inputs is a no-op.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{self, file_fingerprint};
use crate::corpus::{
    self, build_vocabulary, corpus_stats, filter_pairs, split_corpus, tokenize_pairs, CorpusFormat, EmailPair,
    StatsTable, TokenizedPair, Vocabulary,
};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalReport, DEFAULT_DTA_KS, DEFAULT_RANKING_KS};
use crate::perplexity::{perplexity_report, reports_to_csv, PerplexityReport};
use crate::predictor::{baseline_average_from_model, FeatureSet, PredictorSuite, SgdConfig, SuiteConfig};
use crate::silver::{annotate, read_silver, transition_pairs, write_silver, SilverAnnotation};
use crate::topic_model::{
    self, build_documents, describe_topics, InferenceConfig, TopicModel, TrainConfig, View, OFFLINE_INFERENCE,
};

pub const CONFIG_FILE: &str = "config.json";
pub const DEFAULT_TOPIC_GRID: [usize; 7] = [10, 20, 30, 40, 50, 75, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusOptions {
    pub min_customer_tokens: usize,
    pub min_agent_tokens: usize,
    pub min_doc_freq: u32,
    pub max_vocab: usize,
    pub train_ratio: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            min_customer_tokens: corpus::DEFAULT_MIN_CUSTOMER_TOKENS,
            min_agent_tokens: corpus::DEFAULT_MIN_AGENT_TOKENS,
            min_doc_freq: corpus::DEFAULT_MIN_DOC_FREQ,
            max_vocab: corpus::DEFAULT_MAX_VOCAB,
            train_ratio: corpus::DEFAULT_TRAIN_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaOptions {
    pub alpha_sum: f64,
    pub beta: f64,
    pub sweeps: usize,
    /// Fold-in schedule for annotation and perplexity.
    pub inference: InferenceConfig,
}

impl Default for LdaOptions {
    fn default() -> Self {
        Self {
            alpha_sum: topic_model::DEFAULT_ALPHA_SUM,
            beta: topic_model::DEFAULT_BETA,
            sweeps: topic_model::DEFAULT_SWEEPS,
            inference: OFFLINE_INFERENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub ranking_ks: Vec<usize>,
    pub dta_ks: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ranking_ks: DEFAULT_RANKING_KS.to_vec(),
            dta_ks: DEFAULT_DTA_KS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescribeOptions {
    pub top_words: usize,
    pub top_phrases: usize,
    pub min_phrase_count: usize,
    /// Test emails listed with their top topics per role.
    pub example_emails: usize,
}

impl Default for DescribeOptions {
    fn default() -> Self {
        Self {
            top_words: 10,
            top_phrases: 5,
            min_phrase_count: topic_model::DEFAULT_MIN_PHRASE_COUNT,
            example_emails: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    /// Topic counts trained and evaluated for the whole-reply and perplexity
    /// series.
    pub topics: Vec<usize>,
    /// Topic count used for next-sentence evaluation, descriptors and serving.
    pub primary_topics: usize,
    pub seed: u64,
    pub corpus_options: CorpusOptions,
    pub lda: LdaOptions,
    /// Predictor settings. `ablations` apply to the primary topic count only.
    pub predictor: SuiteConfig,
    pub eval: EvalOptions,
    pub describe: DescribeOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let predictor = SuiteConfig {
            ablations: FeatureSet::ALL
                .into_iter()
                .filter(|&s| s != SuiteConfig::default().feature_set)
                .collect(),
            ..SuiteConfig::default()
        };
        Self {
            corpus: PathBuf::new(),
            output_dir: PathBuf::new(),
            topics: DEFAULT_TOPIC_GRID.to_vec(),
            primary_topics: topic_model::DEFAULT_NUM_TOPICS,
            seed: 42,
            corpus_options: CorpusOptions::default(),
            lda: LdaOptions::default(),
            predictor,
            eval: EvalOptions::default(),
            describe: DescribeOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics.is_empty() {
            return Err(Error::InvalidArgument("topic grid is empty".into()));
        }
        if let Some(m) = self.topics.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidArgument(format!("topic count {m} is below 2")));
        }
        if !self.topics.contains(&self.primary_topics) {
            return Err(Error::InvalidArgument(format!(
                "primary topic count {} is not in the grid {:?}",
                self.primary_topics, self.topics
            )));
        }
        if self.lda.sweeps == 0 {
            return Err(Error::InvalidArgument("sweeps must be at least 1".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("output directory not set".into()));
        }
        Ok(())
    }

    /// SHA-256 of the config with file locations blanked, so moving the
    /// corpus or output directory does not change it.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.corpus = PathBuf::new();
        c.output_dir = PathBuf::new();
        Ok(container::fingerprint(&serde_json::to_vec(&c)?))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    TrainLda,
    Annotate,
    TrainPredictors,
    Evaluate,
    Perplexity,
    DescribeTopics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::TrainLda,
        Stage::Annotate,
        Stage::TrainPredictors,
        Stage::Evaluate,
        Stage::Perplexity,
        Stage::DescribeTopics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::TrainLda => "train-lda",
            Stage::Annotate => "annotate",
            Stage::TrainPredictors => "train-predictors",
            Stage::Evaluate => "evaluate",
            Stage::Perplexity => "perplexity",
            Stage::DescribeTopics => "describe-topics",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Relative artifact path (or `corpus`) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Top topics of one email under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMention {
    pub topic: usize,
    pub probability: f64,
    pub top_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmailTopics {
    pub id: String,
    pub customer: Vec<TopicMention>,
    pub agent: Vec<TopicMention>,
}

/// Everything the evaluate stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub t1: Vec<EvalReport>,
    pub t2: EvalReport,
}

fn derive_seed(base: u64, tag: &str, m: usize) -> u64 {
    let digest = Sha256::digest(format!("{base}/{tag}/{m}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    container::write_file(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    container::write_file(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = container::read_file(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Tokenized train and test splits with their vocabulary.
pub struct SplitData {
    pub vocabulary: Vocabulary,
    pub train_pairs: Vec<EmailPair>,
    pub test_pairs: Vec<EmailPair>,
    pub train: Vec<TokenizedPair>,
    pub test: Vec<TokenizedPair>,
}

pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
}

impl Pipeline {
    pub fn new(mut config: PipelineConfig) -> Result<Self> {
        config.topics.sort_unstable();
        config.topics.dedup();
        config.validate()?;
        let hash = config.hash()?;
        Ok(Self { config, hash })
    }

    /// Reopens a pipeline from the config saved in an output directory.
    pub fn open(output_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig = read_json(&output_dir.join(CONFIG_FILE))?;
        config.output_dir = output_dir.to_path_buf();
        Self::new(config)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    pub fn train_path(&self) -> PathBuf {
        self.out("ingest/train.jsonl")
    }

    pub fn test_path(&self) -> PathBuf {
        self.out("ingest/test.jsonl")
    }

    pub fn vocabulary_path(&self) -> PathBuf {
        self.out("ingest/vocabulary.json")
    }

    pub fn model_path(&self, m: usize, view: View) -> PathBuf {
        self.out(format!("models/M{m}/{}.tpam", view.as_str()))
    }

    pub fn silver_path(&self, m: usize, split: &str) -> PathBuf {
        self.out(format!("silver/M{m}/{split}.jsonl"))
    }

    pub fn suite_path(&self, m: usize) -> PathBuf {
        self.out(format!("predictors/M{m}/suite.tpam"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out("eval")
    }

    pub fn eval_summary_path(&self) -> PathBuf {
        self.out("eval/summary.json")
    }

    pub fn perplexity_dir(&self) -> PathBuf {
        self.out("perplexity")
    }

    pub fn topics_dir(&self, m: usize) -> PathBuf {
        self.out(format!("topics/M{m}"))
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.out(format!("manifests/{stage}.json"))
    }

    fn rel(&self, path: &Path) -> String {
        if path == self.config.corpus {
            return "corpus".into();
        }
        path.strip_prefix(&self.config.output_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn hash_files(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for p in paths {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.clone()));
            }
            out.insert(self.rel(p), file_fingerprint(p)?);
        }
        Ok(out)
    }

    fn up_to_date(&self, stage: Stage, inputs: &BTreeMap<String, String>) -> bool {
        let Ok(manifest) = read_json::<Manifest>(&self.manifest_path(stage)) else {
            return false;
        };
        manifest.config_hash == self.hash
            && &manifest.inputs == inputs
            && manifest.outputs.iter().all(|(rel, hash)| {
                let p = self.out(rel);
                file_fingerprint(&p).map(|h| &h == hash).unwrap_or(false)
            })
    }

    fn run_stage(
        &self,
        stage: Stage,
        inputs: &[PathBuf],
        body: impl FnOnce() -> Result<Vec<PathBuf>>,
    ) -> Result<StageOutcome> {
        let input_hashes = self.hash_files(inputs)?;
        if self.up_to_date(stage, &input_hashes) {
            log::info!("{stage}: up to date");
            return Ok(StageOutcome::UpToDate);
        }
        log::info!("{stage}: running");
        let mut saved = self.config.clone();
        saved.output_dir = PathBuf::new();
        write_json(&self.out(CONFIG_FILE), &saved)?;
        let outputs = body()?;
        let manifest = Manifest {
            stage: stage.as_str().into(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            inputs: input_hashes,
            outputs: self.hash_files(&outputs)?,
        };
        write_json(&self.manifest_path(stage), &manifest)?;
        Ok(StageOutcome::Ran)
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::TrainLda => self.train_lda(),
            Stage::Annotate => self.annotate(),
            Stage::TrainPredictors => self.train_predictors(),
            Stage::Evaluate => self.evaluate(),
            Stage::Perplexity => self.perplexity(),
            Stage::DescribeTopics => self.describe_topics(),
        }
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageOutcome)>> {
        Stage::ALL.into_iter().map(|s| self.run(s).map(|o| (s, o))).collect()
    }

    fn split_inputs(&self) -> Vec<PathBuf> {
        vec![self.train_path(), self.test_path(), self.vocabulary_path()]
    }

    /// Loads both splits and tokenizes them with the stored vocabulary.
    pub fn load_split(&self) -> Result<SplitData> {
        let vocab_json = String::from_utf8_lossy(&container::read_file(&self.vocabulary_path())?).into_owned();
        let vocabulary = Vocabulary::from_json(&vocab_json)?;
        let train_pairs = corpus::ingest(&self.train_path(), CorpusFormat::Jsonl)?;
        let test_pairs = corpus::ingest(&self.test_path(), CorpusFormat::Jsonl)?;
        let train = tokenize_pairs(&train_pairs, &vocabulary);
        let test = tokenize_pairs(&test_pairs, &vocabulary);
        Ok(SplitData {
            vocabulary,
            train_pairs,
            test_pairs,
            train,
            test,
        })
    }

    /// Loads a topic model and checks it was produced by this config.
    pub fn load_model(&self, m: usize, view: View) -> Result<TopicModel> {
        let path = self.model_path(m, view);
        let model = TopicModel::load(&path)?;
        self.check_hash(&path, model.config_hash())?;
        Ok(model)
    }

    pub fn load_suite(&self, m: usize) -> Result<PredictorSuite> {
        let path = self.suite_path(m);
        let suite = PredictorSuite::load(&path)?;
        self.check_hash(&path, suite.config_hash.as_deref())?;
        Ok(suite)
    }

    fn check_hash(&self, path: &Path, found: Option<&str>) -> Result<()> {
        if found != Some(self.hash.as_str()) {
            return Err(Error::ConfigMismatch {
                path: path.to_path_buf(),
                expected: self.hash.clone(),
                found: found.unwrap_or("none").into(),
            });
        }
        Ok(())
    }

    pub fn load_silver(&self, m: usize, split: &str) -> Result<Vec<SilverAnnotation>> {
        read_silver(&self.silver_path(m, split))
    }

    /// Filters the corpus, splits it, builds the vocabulary on the training
    /// side and writes both splits plus statistics.
    pub fn ingest(&self) -> Result<StageOutcome> {
        let corpus_path = self.config.corpus.clone();
        self.run_stage(Stage::Ingest, std::slice::from_ref(&corpus_path), || {
            let o = &self.config.corpus_options;
            let raw = corpus::ingest(&corpus_path, CorpusFormat::Jsonl)?;
            let pairs = filter_pairs(&raw, o.min_customer_tokens, o.min_agent_tokens);
            log::info!("kept {} of {} pairs after length filtering", pairs.len(), raw.len());
            let split = split_corpus(&pairs, o.train_ratio, self.config.seed)?;
            let (train, test) = split.partition(&pairs);
            let vocabulary = build_vocabulary(&train, o.min_doc_freq, o.max_vocab);
            if vocabulary.is_empty() {
                return Err(Error::Empty("vocabulary after pruning".into()));
            }
            let stats = StatsTable {
                rows: vec![("train".into(), corpus_stats(&train)?), ("test".into(), corpus_stats(&test)?)],
            };
            log::info!("corpus statistics\n{stats}");
            corpus::write_jsonl(&self.train_path(), &train)?;
            corpus::write_jsonl(&self.test_path(), &test)?;
            write_text(&self.vocabulary_path(), &vocabulary.to_json()?)?;
            let split_path = self.out("ingest/split.json");
            write_json(&split_path, &split)?;
            let stats_json = self.out("ingest/stats.json");
            write_json(&stats_json, &stats)?;
            let stats_txt = self.out("ingest/stats.txt");
            write_text(&stats_txt, &stats.to_string())?;
            Ok(vec![
                self.train_path(),
                self.test_path(),
                self.vocabulary_path(),
                split_path,
                stats_json,
                stats_txt,
            ])
        })
    }

    /// Trains the four model views for every topic count in the grid.
    pub fn train_lda(&self) -> Result<StageOutcome> {
        self.run_stage(Stage::TrainLda, &self.split_inputs(), || {
            let data = self.load_split()?;
            let jobs: Vec<(usize, View)> = self
                .config
                .topics
                .iter()
                .flat_map(|&m| View::ALL.into_iter().map(move |v| (m, v)))
                .collect();
            let lda = &self.config.lda;
            jobs.par_iter()
                .map(|&(m, view)| {
                    let docs = build_documents(&data.train, view);
                    let cfg = TrainConfig {
                        num_topics: m,
                        alpha_sum: lda.alpha_sum,
                        beta: lda.beta,
                        sweeps: lda.sweeps,
                        seed: derive_seed(self.config.seed, view.as_str(), m),
                        reestimate_alpha: true,
                    };
                    let mut model = topic_model::train(&docs, data.vocabulary.clone(), view, &cfg)?;
                    model.set_config_hash(self.hash.clone());
                    let path = self.model_path(m, view);
                    model.save(&path)?;
                    log::info!("trained {} model with M={m}", view.as_str());
                    Ok(path)
                })
                .collect()
        })
    }

    fn model_inputs(&self, views: &[View], grid: &[usize]) -> Vec<PathBuf> {
        grid.iter()
            .flat_map(|&m| views.iter().map(move |&v| self.model_path(m, v)))
            .collect()
    }

    /// Silver annotations of both splits under the pair and sentence models.
    pub fn annotate(&self) -> Result<StageOutcome> {
        let mut inputs = self.split_inputs();
        inputs.extend(self.model_inputs(&[View::CA, View::S], &self.config.topics));
        self.run_stage(Stage::Annotate, &inputs, || {
            let data = self.load_split()?;
            let mut outputs = Vec::new();
            for &m in &self.config.topics {
                let ca = self.load_model(m, View::CA)?;
                let s = self.load_model(m, View::S)?;
                for (split, pairs) in [("train", &data.train), ("test", &data.test)] {
                    let anns = annotate(pairs, &ca, &s, &self.config.lda.inference)?;
                    let path = self.silver_path(m, split);
                    write_silver(&path, &anns)?;
                    outputs.push(path);
                }
            }
            Ok(outputs)
        })
    }

    fn silver_inputs(&self, splits: &[&str]) -> Vec<PathBuf> {
        self.config
            .topics
            .iter()
            .flat_map(|&m| splits.iter().map(move |s| self.silver_path(m, s)))
            .collect()
    }

    /// Trains one predictor suite per topic count; ablation predictors only
    /// for the primary count.
    pub fn train_predictors(&self) -> Result<StageOutcome> {
        let mut inputs = self.split_inputs();
        inputs.extend(self.silver_inputs(&["train"]));
        self.run_stage(Stage::TrainPredictors, &inputs, || {
            let data = self.load_split()?;
            let mut outputs = Vec::new();
            for &m in &self.config.topics {
                let anns = self.load_silver(m, "train")?;
                let examples = transition_pairs(&anns);
                let config = SuiteConfig {
                    ablations: if m == self.config.primary_topics {
                        self.config.predictor.ablations.clone()
                    } else {
                        Vec::new()
                    },
                    sgd: SgdConfig {
                        seed: derive_seed(self.config.seed, "predictor", m),
                        ..self.config.predictor.sgd
                    },
                    ..self.config.predictor.clone()
                };
                let mut suite = PredictorSuite::train(
                    &data.train,
                    &anns,
                    &examples,
                    data.vocabulary.len(),
                    data.vocabulary.fingerprint(),
                    &config,
                )?;
                suite.config_hash = Some(self.hash.clone());
                let path = self.suite_path(m);
                suite.save(&path)?;
                outputs.push(path);
            }
            Ok(outputs)
        })
    }

    /// Whole-reply reports for every topic count and the next-sentence table
    /// for the primary count.
    pub fn evaluate(&self) -> Result<StageOutcome> {
        let mut inputs = self.split_inputs();
        inputs.extend(self.silver_inputs(&["train", "test"]));
        inputs.extend(self.config.topics.iter().map(|&m| self.suite_path(m)));
        inputs.push(self.model_path(self.config.primary_topics, View::S));
        self.run_stage(Stage::Evaluate, &inputs, || {
            let summary = self.compute_eval()?;
            let dir = self.eval_dir();
            let mut outputs = Vec::new();
            for r in &summary.t1 {
                let p = dir.join(format!("t1_M{}.json", r.num_topics));
                write_json(&p, r)?;
                outputs.push(p);
            }
            let p = dir.join("t1_series.csv");
            write_text(&p, &evaluation::t1_series_csv(&summary.t1))?;
            outputs.push(p);
            let p = dir.join(format!("t2_M{}.json", summary.t2.num_topics));
            write_json(&p, &summary.t2)?;
            outputs.push(p);
            let p = dir.join("t2_table.csv");
            write_text(&p, &evaluation::t2_table_csv(&summary.t2))?;
            outputs.push(p);
            let mut text = String::new();
            for r in summary.t1.iter().chain(std::iter::once(&summary.t2)) {
                text.push_str(&r.to_string());
                text.push('\n');
            }
            let p = dir.join("report.txt");
            write_text(&p, &text)?;
            outputs.push(p);
            let p = self.eval_summary_path();
            write_json(&p, &summary)?;
            outputs.push(p);
            Ok(outputs)
        })
    }

    /// Computes the evaluation reports without writing them.
    pub fn compute_eval(&self) -> Result<EvalSummary> {
        let data = self.load_split()?;
        let mut t1 = Vec::new();
        for &m in &self.config.topics {
            let suite = self.load_suite(m)?;
            let train = self.load_silver(m, "train")?;
            let test = self.load_silver(m, "test")?;
            t1.push(evaluation::evaluate_t1(
                &suite,
                &data.test,
                &test,
                &train,
                &self.config.eval.ranking_ks,
                derive_seed(self.config.seed, "ranking", m),
            )?);
        }
        let m = self.config.primary_topics;
        let suite = self.load_suite(m)?;
        let model_s = self.load_model(m, View::S)?;
        let test = self.load_silver(m, "test")?;
        let t2 = evaluation::evaluate_t2(
            &suite,
            &baseline_average_from_model(&model_s),
            &data.test,
            &test,
            &self.config.eval.dta_ks,
        )?;
        Ok(EvalSummary {
            config_hash: self.hash.clone(),
            t1,
            t2,
        })
    }

    /// Conditional and unconditional perplexity of the test replies for every
    /// topic count.
    pub fn perplexity(&self) -> Result<StageOutcome> {
        let mut inputs = self.split_inputs();
        inputs.extend(self.model_inputs(&[View::A, View::CA], &self.config.topics));
        self.run_stage(Stage::Perplexity, &inputs, || {
            let data = self.load_split()?;
            let mut reports = Vec::new();
            let mut outputs = Vec::new();
            for &m in &self.config.topics {
                let a = self.load_model(m, View::A)?;
                let ca = self.load_model(m, View::CA)?;
                let r = perplexity_report(&a, &ca, &data.test, &self.config.lda.inference)?;
                log::info!(
                    "M={m}: perplexity unconditional {:.2}, conditional {:.2}",
                    r.pp_unconditional,
                    r.pp_conditional
                );
                let p = self.perplexity_dir().join(format!("M{m}.json"));
                write_json(&p, &r)?;
                outputs.push(p);
                reports.push(r);
            }
            let p = self.perplexity_dir().join("perplexity.csv");
            write_text(&p, &reports_to_csv(&reports))?;
            outputs.push(p);
            Ok(outputs)
        })
    }

    pub fn load_perplexity(&self) -> Result<Vec<PerplexityReport>> {
        self.config
            .topics
            .iter()
            .map(|&m| read_json(&self.perplexity_dir().join(format!("M{m}.json"))))
            .collect()
    }

    /// Topic descriptors of all four views at the primary topic count, plus
    /// the top topics of a few test emails per role.
    pub fn describe_topics(&self) -> Result<StageOutcome> {
        let m = self.config.primary_topics;
        let mut inputs = self.split_inputs();
        inputs.extend(self.model_inputs(&View::ALL, &[m]));
        self.run_stage(Stage::DescribeTopics, &inputs, || {
            let data = self.load_split()?;
            let d = &self.config.describe;
            let dir = self.topics_dir(m);
            let mut outputs = Vec::new();
            let mut models = BTreeMap::new();
            for view in View::ALL {
                let model = self.load_model(m, view)?;
                let docs = build_documents(&data.train, view);
                let descriptors = describe_topics(&model, d.top_words, d.top_phrases, &docs, d.min_phrase_count);
                let p = dir.join(format!("{}.json", view.as_str()));
                write_json(&p, &descriptors)?;
                outputs.push(p);
                models.insert(view.as_str(), model);
            }
            let mention = |model: &TopicModel, tokens: &[u32]| -> Vec<TopicMention> {
                let tau = model.infer_with(tokens, &self.config.lda.inference);
                tau.ranked()
                    .into_iter()
                    .take(3)
                    .map(|k| {
                        let probs = model.topic_word_probs(k);
                        let mut ids: Vec<usize> = (0..probs.len()).collect();
                        ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
                        TopicMention {
                            topic: k,
                            probability: tau.probs()[k],
                            top_words: ids
                                .into_iter()
                                .take(5)
                                .map(|w| model.vocabulary().word(w as u32).to_string())
                                .collect(),
                        }
                    })
                    .collect()
            };
            let mut lines = String::new();
            for pair in data.test.iter().take(d.example_emails) {
                let e = EmailTopics {
                    id: pair.id.clone(),
                    customer: mention(&models["C"], &pair.customer),
                    agent: mention(&models["A"], &pair.agent.tokens),
                };
                lines.push_str(&serde_json::to_string(&e)?);
                lines.push('\n');
            }
            let p = dir.join("emails.jsonl");
            write_text(&p, &lines)?;
            outputs.push(p);
            Ok(outputs)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_ignores_locations() {
        let a = PipelineConfig {
            corpus: "a.jsonl".into(),
            output_dir: "x".into(),
            ..PipelineConfig::default()
        };
        let b = PipelineConfig {
            corpus: "b.jsonl".into(),
            output_dir: "y".into(),
            ..PipelineConfig::default()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = PipelineConfig { seed: 7, ..a.clone() };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn config_validation() {
        let base = PipelineConfig {
            output_dir: "out".into(),
            ..PipelineConfig::default()
        };
        assert!(base.validate().is_ok());
        assert!(PipelineConfig { topics: vec![], ..base.clone() }.validate().is_err());
        assert!(PipelineConfig { topics: vec![1, 50], ..base.clone() }.validate().is_err());
        assert!(PipelineConfig { primary_topics: 12, ..base.clone() }.validate().is_err());
        assert_eq!(base.predictor.ablations.len(), 4);
    }

    #[test]
    fn partial_config_json_uses_defaults() {
        let c = PipelineConfig::from_json(r#"{"topics":[5,10],"primary_topics":5,"lda":{"sweeps":30}}"#).unwrap();
        assert_eq!(c.topics, vec![5, 10]);
        assert_eq!(c.lda.sweeps, 30);
        assert_eq!(c.lda.beta, topic_model::DEFAULT_BETA);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }
}
