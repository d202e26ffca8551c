//! Python bindings: pipeline stages, topic models, metrics and the suggestion
//! service's request handlers. Structured results come back as plain Python
//! dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use replytopic::pipeline::{Pipeline as CorePipeline, PipelineConfig, Stage, StageOutcome};
use replytopic::service::{Artifacts, NextRequest, ReplyRequest, ServeOptions};
use replytopic::topic_model::{InferenceConfig, TopicDistribution, TopicModel as CoreModel};
use replytopic::{evaluation, synth, text, topic_model, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact(p) => PyFileNotFoundError::new_err(format!("missing artifact: {}", p.display())),
        Error::InvalidArgument(m) => PyValueError::new_err(m),
        e @ (Error::DimensionMismatch { .. } | Error::Empty(_) | Error::MalformedRecord { .. }) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (json,))
}

fn distribution(probs: Vec<f64>) -> PyResult<TopicDistribution> {
    TopicDistribution::new(probs).map_err(to_py)
}

/// Lowercased, stopword-free tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    text::tokenize(text)
}

#[pyfunction]
fn segment_sentences(text: &str) -> Vec<String> {
    text::segment_sentences(text)
}

/// Writes a synthetic corpus (and its oracle record) to `out`; returns the
/// number of pairs.
#[pyfunction]
#[pyo3(signature = (profile, out, seed=0, params=None))]
fn synthesize(profile: &str, out: PathBuf, seed: u64, params: Option<&str>) -> PyResult<usize> {
    let mut p = synth::Profile::from_name(profile).map_err(to_py)?;
    if let Some(params) = params {
        let mut value = serde_json::to_value(&p).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let patch: serde_json::Value = serde_json::from_str(params).map_err(|e| PyValueError::new_err(e.to_string()))?;
        if let (Some(base), serde_json::Value::Object(patch)) = (value.as_object_mut(), patch) {
            base.extend(patch);
        }
        p = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    let corpus = synth::generate(&p, seed).map_err(to_py)?;
    corpus.write(&out).map_err(to_py)?;
    Ok(corpus.pairs.len())
}

#[pyfunction]
fn bhattacharyya(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    evaluation::bhattacharyya(&distribution(p)?, &distribution(q)?).map_err(to_py)
}

/// `(topic, peaked)` for a distribution.
#[pyfunction]
fn dominant_topic(p: Vec<f64>) -> PyResult<(usize, bool)> {
    Ok(topic_model::dominant_topic(&distribution(p)?))
}

#[pyclass(frozen, module = "_replytopic")]
struct TopicModel {
    inner: CoreModel,
}

#[pymethods]
impl TopicModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn num_topics(&self) -> usize {
        self.inner.num_topics()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn view(&self) -> &'static str {
        self.inner.view().as_str()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }

    /// Topic distribution of a text by fold-in Gibbs sampling.
    #[pyo3(signature = (text, burn_in=None, samples=None))]
    fn infer(&self, text: &str, burn_in: Option<usize>, samples: Option<usize>) -> Vec<f64> {
        let tokens = self.inner.vocabulary().encode_text(text);
        let mut config = topic_model::OFFLINE_INFERENCE;
        config.burn_in = burn_in.unwrap_or(config.burn_in);
        config.samples = samples.unwrap_or(config.samples).max(1);
        self.inner.infer_with(&tokens, &config).into_vec()
    }

    /// The `n` most probable words of `topic` with their probabilities.
    #[pyo3(signature = (topic, n=10))]
    fn top_words(&self, topic: usize, n: usize) -> PyResult<Vec<(String, f64)>> {
        if topic >= self.inner.num_topics() {
            return Err(PyValueError::new_err(format!("topic {topic} out of range")));
        }
        let probs = self.inner.topic_word_probs(topic);
        let mut ids: Vec<usize> = (0..probs.len()).collect();
        ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        Ok(ids
            .into_iter()
            .take(n)
            .map(|w| (self.inner.vocabulary().word(w as u32).to_string(), probs[w]))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "TopicModel(view={}, num_topics={}, vocab_size={})",
            self.inner.view().as_str(),
            self.inner.num_topics(),
            self.inner.vocab_size()
        )
    }
}

#[pyclass(frozen, module = "_replytopic")]
struct Pipeline {
    inner: CorePipeline,
}

#[pymethods]
impl Pipeline {
    /// Builds a pipeline from defaults, then `config` (a JSON object string),
    /// then the keyword arguments.
    #[new]
    #[pyo3(signature = (output_dir, corpus=None, topics=None, primary_topics=None, seed=None, sweeps=None, config=None))]
    fn new(
        output_dir: PathBuf,
        corpus: Option<PathBuf>,
        topics: Option<Vec<usize>>,
        primary_topics: Option<usize>,
        seed: Option<u64>,
        sweeps: Option<usize>,
        config: Option<&str>,
    ) -> PyResult<Self> {
        let mut c = match config {
            Some(json) => PipelineConfig::from_json(json).map_err(to_py)?,
            None => PipelineConfig::default(),
        };
        c.output_dir = output_dir;
        if let Some(corpus) = corpus {
            c.corpus = corpus;
        }
        if let Some(t) = topics {
            if primary_topics.is_none() && !t.contains(&c.primary_topics) {
                c.primary_topics = t.iter().copied().max().unwrap_or(c.primary_topics);
            }
            c.topics = t;
        }
        if let Some(p) = primary_topics {
            c.primary_topics = p;
        }
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(s) = sweeps {
            c.lda.sweeps = s;
        }
        Ok(Self {
            inner: CorePipeline::new(c).map_err(to_py)?,
        })
    }

    /// Reopens the pipeline saved in an output directory.
    #[staticmethod]
    fn open(output_dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CorePipeline::open(&output_dir).map_err(to_py)?,
        })
    }

    #[getter]
    fn config_hash(&self) -> &str {
        self.inner.config_hash()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, self.inner.config())
    }

    /// Runs one stage; returns "ran" or "up_to_date".
    fn run(&self, stage: &str) -> PyResult<&'static str> {
        let stage: Stage = stage.parse().map_err(to_py)?;
        Ok(outcome_name(self.inner.run(stage).map_err(to_py)?))
    }

    fn run_all(&self) -> PyResult<Vec<(String, &'static str)>> {
        Ok(self
            .inner
            .run_all()
            .map_err(to_py)?
            .into_iter()
            .map(|(s, o)| (s.as_str().to_string(), outcome_name(o)))
            .collect())
    }

    fn model_path(&self, num_topics: usize, view: &str) -> PyResult<PathBuf> {
        Ok(self.inner.model_path(num_topics, view.parse().map_err(to_py)?))
    }

    /// The evaluation summary written by the evaluate stage.
    fn eval_summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let path = self.inner.eval_summary_path();
        let text = std::fs::read_to_string(&path).map_err(|_| to_py(Error::MissingArtifact(path)))?;
        py.import("json")?.call_method1("loads", (text,))
    }

    fn perplexity<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.inner.load_perplexity().map_err(to_py)?)
    }
}

fn outcome_name(o: StageOutcome) -> &'static str {
    match o {
        StageOutcome::Ran => "ran",
        StageOutcome::UpToDate => "up_to_date",
    }
}

/// In-process counterpart of the HTTP service.
#[pyclass(frozen, module = "_replytopic")]
struct Suggester {
    inner: Artifacts,
}

#[pymethods]
impl Suggester {
    #[staticmethod]
    #[pyo3(signature = (models_dir, burn_in=None, samples=None))]
    fn load(models_dir: PathBuf, burn_in: Option<usize>, samples: Option<usize>) -> PyResult<Self> {
        let mut options = ServeOptions::default();
        options.inference = InferenceConfig {
            burn_in: burn_in.unwrap_or(options.inference.burn_in),
            samples: samples.unwrap_or(options.inference.samples).max(1),
        };
        Ok(Self {
            inner: Artifacts::load(&models_dir, &options).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_topics(&self) -> usize {
        self.inner.num_topics()
    }

    fn health<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.inner.health())
    }

    #[pyo3(signature = (customer, k=5))]
    fn suggest_reply<'py>(&self, py: Python<'py>, customer: String, k: usize) -> PyResult<Bound<'py, PyAny>> {
        let resp = self
            .inner
            .suggest_reply(&ReplyRequest { customer, k })
            .map_err(|e| PyValueError::new_err(e.message))?;
        to_object(py, &resp)
    }

    #[pyo3(signature = (customer, sentences=Vec::new(), k=5))]
    fn suggest_next<'py>(
        &self,
        py: Python<'py>,
        customer: String,
        sentences: Vec<String>,
        k: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let resp = self
            .inner
            .suggest_next(&NextRequest { customer, sentences, k })
            .map_err(|e| PyValueError::new_err(e.message))?;
        to_object(py, &resp)
    }

    #[pyo3(signature = (view="S"))]
    fn topics<'py>(&self, py: Python<'py>, view: &str) -> PyResult<Bound<'py, PyAny>> {
        let list = self.inner.topics(view).map_err(|e| PyValueError::new_err(e.message))?;
        to_object(py, &list)
    }
}

#[pymodule]
fn _replytopic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(segment_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(bhattacharyya, m)?)?;
    m.add_function(wrap_pyfunction!(dominant_topic, m)?)?;
    m.add_class::<TopicModel>()?;
    m.add_class::<Pipeline>()?;
    m.add_class::<Suggester>()?;
    m.add("STAGES", Stage::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
