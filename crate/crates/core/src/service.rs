//! HTTP JSON service for interactive reply composition.
//!
//! Artifacts are loaded once and shared read-only; every request is answered
//! from its body alone.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use crate::container::file_fingerprint;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::predictor::{PredictorSuite, Route, SentenceContext};
use crate::silver::SilverAnnotation;
use crate::text::segment_sentences;
use crate::topic_model::{
    build_documents, describe_topics, dominant_topic, InferenceConfig, TopicDescriptor, TopicDistribution,
    TopicModel, View, SERVING_INFERENCE,
};

pub const EXEMPLARS_PER_SUGGESTION: usize = 3;
pub const DEFAULT_EXEMPLAR_CAP: usize = 200;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub inference: InferenceConfig,
    pub exemplar_cap: usize,
    /// Allowed browser origin; any origin when `None`.
    pub cors_origin: Option<String>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            inference: SERVING_INFERENCE,
            exemplar_cap: DEFAULT_EXEMPLAR_CAP,
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub topic: usize,
    pub probability: f64,
    pub top_words: Vec<String>,
    pub top_phrases: Vec<String>,
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyRequest {
    pub customer: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextRequest {
    pub customer: String,
    #[serde(default)]
    pub sentences: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyResponse {
    pub topics: Vec<Suggestion>,
    pub tau: Vec<f64>,
    pub inference: InferenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub topics: Vec<Suggestion>,
    pub position: usize,
    pub route: Route,
    pub inference: InferenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub num_topics: usize,
    /// SHA-256 of each loaded container file.
    pub fingerprints: BTreeMap<String, String>,
}

/// A request the service refuses, with its HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Exemplar {
    text: String,
    probability: f64,
}

/// Exemplar texts per topic, best first, at most `cap` each.
fn exemplar_index(
    num_topics: usize,
    cap: usize,
    items: impl Iterator<Item = (TopicDistribution, String)>,
) -> Vec<Vec<Exemplar>> {
    let mut index: Vec<Vec<Exemplar>> = vec![Vec::new(); num_topics];
    for (tau, text) in items {
        let (dom, peaked) = dominant_topic(&tau);
        if peaked && dom < num_topics {
            index[dom].push(Exemplar {
                text,
                probability: tau.probs()[dom],
            });
        }
    }
    for list in &mut index {
        // Stable sort keeps corpus order among equal probabilities.
        list.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        list.truncate(cap);
    }
    index
}

/// Everything needed to answer requests, immutable once built.
pub struct Artifacts {
    vocabulary: Vocabulary,
    model_ca: TopicModel,
    model_s: TopicModel,
    suite: PredictorSuite,
    descriptors: BTreeMap<String, Vec<TopicDescriptor>>,
    /// Sentence-model topics: training sentences.
    sentence_exemplars: Vec<Vec<Exemplar>>,
    /// Pair-model topics: training replies.
    reply_exemplars: Vec<Vec<Exemplar>>,
    fingerprints: BTreeMap<String, String>,
    inference: InferenceConfig,
}

impl Artifacts {
    /// Loads the primary-topic-count artifacts written by the pipeline.
    pub fn load(models_dir: &Path, options: &ServeOptions) -> Result<Self> {
        let pipeline = Pipeline::open(models_dir)?;
        let m = pipeline.config().primary_topics;
        let data = pipeline.load_split()?;
        let silver = pipeline.load_silver(m, "train")?;
        let describe = &pipeline.config().describe;
        let mut fingerprints = BTreeMap::new();
        let mut descriptors = BTreeMap::new();
        let mut models = BTreeMap::new();
        for view in View::ALL {
            let model = pipeline.load_model(m, view)?;
            fingerprints.insert(view.as_str().to_string(), file_fingerprint(&pipeline.model_path(m, view))?);
            let docs = build_documents(&data.train, view);
            descriptors.insert(
                view.as_str().to_string(),
                describe_topics(&model, describe.top_words, describe.top_phrases, &docs, describe.min_phrase_count),
            );
            models.insert(view, model);
        }
        let suite = pipeline.load_suite(m)?;
        fingerprints.insert("suite".into(), file_fingerprint(&pipeline.suite_path(m))?);
        if suite.vocabulary_hash != data.vocabulary.fingerprint() {
            return Err(Error::InvalidArgument("predictor suite was trained on another vocabulary".into()));
        }
        let agent_texts: Vec<&str> = data.train_pairs.iter().map(|p| p.agent_text.as_str()).collect();
        let model_ca = models.remove(&View::CA).expect("CA model");
        let model_s = models.remove(&View::S).expect("S model");
        Self::from_parts(
            data.vocabulary,
            model_ca,
            model_s,
            suite,
            descriptors,
            &silver,
            &agent_texts,
            fingerprints,
            options,
        )
    }

    /// Assembles artifacts from loaded parts. `silver` and `agent_texts`
    /// describe the same training pairs in the same order.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        vocabulary: Vocabulary,
        model_ca: TopicModel,
        model_s: TopicModel,
        suite: PredictorSuite,
        descriptors: BTreeMap<String, Vec<TopicDescriptor>>,
        silver: &[SilverAnnotation],
        agent_texts: &[&str],
        fingerprints: BTreeMap<String, String>,
        options: &ServeOptions,
    ) -> Result<Self> {
        if silver.len() != agent_texts.len() {
            return Err(Error::DimensionMismatch {
                expected: silver.len(),
                actual: agent_texts.len(),
            });
        }
        let m = suite.num_topics;
        if model_ca.num_topics() != m || model_s.num_topics() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: model_s.num_topics(),
            });
        }
        let sentence_exemplars = exemplar_index(
            m,
            options.exemplar_cap,
            silver.iter().zip(agent_texts).flat_map(|(ann, text)| {
                let sentences = segment_sentences(text);
                ann.sentences
                    .iter()
                    .filter_map(move |r| sentences.get(r.j).map(|s| (r.tau_s.clone(), s.clone())))
                    .collect::<Vec<_>>()
            }),
        );
        let reply_exemplars = exemplar_index(
            m,
            options.exemplar_cap,
            silver
                .iter()
                .zip(agent_texts)
                .map(|(ann, text)| (ann.tau_ca_a.clone(), text.to_string())),
        );
        Ok(Self {
            vocabulary,
            model_ca,
            model_s,
            suite,
            descriptors,
            sentence_exemplars,
            reply_exemplars,
            fingerprints,
            inference: options.inference,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.suite.num_topics
    }

    pub fn health(&self) -> HealthResponse {
        HealthResponse {
            status: "ok".into(),
            num_topics: self.num_topics(),
            fingerprints: self.fingerprints.clone(),
        }
    }

    fn check(&self, customer: &str, k: usize) -> std::result::Result<(), ApiError> {
        if customer.trim().is_empty() {
            return Err(ApiError::bad_request("customer text is empty"));
        }
        let m = self.num_topics();
        if k < 1 || k > m {
            return Err(ApiError::bad_request(format!("k must be between 1 and {m}")));
        }
        Ok(())
    }

    fn suggestions(&self, dist: &TopicDistribution, k: usize, view: View, exemplars: &[Vec<Exemplar>]) -> Vec<Suggestion> {
        let descriptors = self.descriptors.get(view.as_str());
        dist.ranked()
            .into_iter()
            .take(k)
            .map(|topic| {
                let d = descriptors.and_then(|d| d.get(topic));
                Suggestion {
                    topic,
                    probability: dist.probs()[topic],
                    top_words: d.map(|d| d.top_words.iter().map(|t| t.term.clone()).collect()).unwrap_or_default(),
                    top_phrases: d
                        .map(|d| d.top_phrases.iter().map(|t| t.term.clone()).collect())
                        .unwrap_or_default(),
                    exemplars: exemplars
                        .get(topic)
                        .map(|e| e.iter().take(EXEMPLARS_PER_SUGGESTION).map(|e| e.text.clone()).collect())
                        .unwrap_or_default(),
                }
            })
            .collect()
    }

    /// Whole-reply topic preview for a customer query.
    pub fn suggest_reply(&self, req: &ReplyRequest) -> std::result::Result<ReplyResponse, ApiError> {
        self.check(&req.customer, req.k)?;
        let tokens = self.vocabulary.encode_text(&req.customer);
        let tau_c = self.model_ca.infer_with(&tokens, &self.inference);
        let tau = self.suite.predict_t1(&tokens, &tau_c);
        Ok(ReplyResponse {
            topics: self.suggestions(&tau, req.k, View::CA, &self.reply_exemplars),
            tau: tau.into_vec(),
            inference: self.inference,
        })
    }

    /// Topics for the next sentence given the sentences composed so far.
    pub fn suggest_next(&self, req: &NextRequest) -> std::result::Result<NextResponse, ApiError> {
        self.check(&req.customer, req.k)?;
        let tokens = self.vocabulary.encode_text(&req.customer);
        let tau_c = self.model_ca.infer_with(&tokens, &self.inference);
        let j = req.sentences.len();
        let last_tokens = req.sentences.last().map(|s| self.vocabulary.encode_text(s));
        let last_tau = last_tokens.as_ref().map(|t| self.model_s.infer_with(t, &self.inference));
        let last = match (&last_tokens, &last_tau) {
            (Some(t), Some(tau)) => Some(SentenceContext {
                tokens: t,
                topics: tau,
                dominant: dominant_topic(tau).0,
                j: j - 1,
            }),
            _ => None,
        };
        let (dist, route) = self.suite.predict_next(&tokens, &tau_c, last);
        log::debug!("suggest/next position {j} served by {route:?}");
        Ok(NextResponse {
            topics: self.suggestions(&dist, req.k, View::S, &self.sentence_exemplars),
            position: j,
            route,
            inference: self.inference,
        })
    }

    pub fn topics(&self, view: &str) -> std::result::Result<Vec<TopicDescriptor>, ApiError> {
        let view: View = view.parse().map_err(|e: Error| ApiError::bad_request(e.to_string()))?;
        Ok(self.descriptors.get(view.as_str()).cloned().unwrap_or_default())
    }
}

enum LoadState {
    Loading,
    Ready(Arc<Artifacts>),
    Failed(String),
}

/// Shared handle the router reads artifacts from.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<RwLock<LoadState>>,
}

impl Default for AppState {
    fn default() -> Self {
        Self::loading()
    }
}

impl AppState {
    pub fn loading() -> Self {
        Self {
            inner: Arc::new(RwLock::new(LoadState::Loading)),
        }
    }

    pub fn ready(artifacts: Artifacts) -> Self {
        let s = Self::loading();
        s.set_ready(artifacts);
        s
    }

    pub fn set_ready(&self, artifacts: Artifacts) {
        *self.inner.write().expect("state lock") = LoadState::Ready(Arc::new(artifacts));
    }

    pub fn set_failed(&self, message: impl Into<String>) {
        *self.inner.write().expect("state lock") = LoadState::Failed(message.into());
    }

    fn artifacts(&self) -> std::result::Result<Arc<Artifacts>, ApiError> {
        match &*self.inner.read().expect("state lock") {
            LoadState::Ready(a) => Ok(Arc::clone(a)),
            LoadState::Loading => Err(ApiError {
                status: StatusCode::SERVICE_UNAVAILABLE,
                message: "artifacts are loading".into(),
            }),
            LoadState::Failed(m) => Err(ApiError {
                status: StatusCode::SERVICE_UNAVAILABLE,
                message: format!("artifact load failed: {m}"),
            }),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn health(State(state): State<AppState>) -> Response {
    match state.artifacts() {
        Ok(a) => Json(a.health()).into_response(),
        Err(e) => (
            e.status,
            Json(serde_json::json!({ "status": "unavailable", "error": e.message })),
        )
            .into_response(),
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static,
) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

async fn suggest_reply(State(state): State<AppState>, body: Bytes) -> std::result::Result<Json<ReplyResponse>, ApiError> {
    let a = state.artifacts()?;
    let req: ReplyRequest = parse_body(&body)?;
    blocking(move || a.suggest_reply(&req)).await.map(Json)
}

async fn suggest_next(State(state): State<AppState>, body: Bytes) -> std::result::Result<Json<NextResponse>, ApiError> {
    let a = state.artifacts()?;
    let req: NextRequest = parse_body(&body)?;
    blocking(move || a.suggest_next(&req)).await.map(Json)
}

#[derive(Deserialize)]
struct TopicsQuery {
    view: Option<String>,
}

async fn topics(
    State(state): State<AppState>,
    Query(q): Query<TopicsQuery>,
) -> std::result::Result<Json<Vec<TopicDescriptor>>, ApiError> {
    let a = state.artifacts()?;
    a.topics(q.view.as_deref().unwrap_or("S")).map(Json)
}

pub fn cors_layer(origin: Option<&str>) -> Result<CorsLayer> {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    Ok(match origin {
        None | Some("*") => layer.allow_origin(Any),
        Some(o) => layer.allow_origin(
            HeaderValue::from_str(o).map_err(|e| Error::InvalidArgument(format!("bad CORS origin: {e}")))?,
        ),
    })
}

pub fn router(state: AppState, options: &ServeOptions) -> Result<Router> {
    Ok(Router::new()
        .route("/health", get(health))
        .route("/suggest/reply", post(suggest_reply))
        .route("/suggest/next", post(suggest_next))
        .route("/topics", get(topics))
        .layer(cors_layer(options.cors_origin.as_deref())?)
        .with_state(state))
}

/// Binds `addr`, answers 503 while artifacts load in the background, then
/// serves until the process stops. Returns early if loading fails.
pub async fn serve(models_dir: &Path, addr: SocketAddr, options: ServeOptions) -> Result<()> {
    let state = AppState::loading();
    let app = router(state.clone(), &options)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(models_dir, e))?;
    log::info!("listening on {addr}");
    let dir = models_dir.to_path_buf();
    let loader_state = state.clone();
    let loader = async move {
        let loaded = tokio::task::spawn_blocking(move || Artifacts::load(&dir, &options))
            .await
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        match loaded {
            Ok(a) => {
                log::info!("artifacts loaded, M={}", a.num_topics());
                loader_state.set_ready(a);
                std::future::pending::<Result<()>>().await
            }
            Err(e) => {
                loader_state.set_failed(e.to_string());
                Err(e)
            }
        }
    };
    let server = async move {
        axum::serve(listener, app)
            .await
            .map_err(|e| Error::io("server", e))
    };
    tokio::select! {
        r = server => r,
        r = loader => r,
    }
}
