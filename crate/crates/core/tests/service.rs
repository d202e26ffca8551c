mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replytopic::container::file_fingerprint;
use replytopic::corpus::{tokenize_pairs, EmailPair, Vocabulary};
use replytopic::pipeline::{Pipeline, Stage};
use replytopic::predictor::{PredictorSuite, SuiteConfig};
use replytopic::service::{router, AppState, Artifacts, ServeOptions};
use replytopic::silver::{annotate, transition_pairs};
use replytopic::synth::{ChainParams, CoupledParams, Profile, SynthCorpus};
use replytopic::topic_model::{build_documents, describe_topics, TopicModel, View, SERVING_INFERENCE};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

use common::{learned_topic, run_stages, small_config, topic_text, write_corpus};

const SERVE_STAGES: [Stage; 5] = [
    Stage::Ingest,
    Stage::TrainLda,
    Stage::Annotate,
    Stage::TrainPredictors,
    Stage::DescribeTopics,
];

struct Served {
    _dir: TempDir,
    pipeline: Pipeline,
    corpus: SynthCorpus,
    app: Router,
}

fn serve_profile(profile: Profile, m: usize) -> Served {
    let dir = TempDir::new().unwrap();
    let (path, corpus) = write_corpus(dir.path(), &profile, 3);
    let out = dir.path().join("out");
    let pipeline = run_stages(small_config(&path, &out, m, 150), &SERVE_STAGES);
    let artifacts = Artifacts::load(&out, &ServeOptions::default()).expect("load artifacts");
    let app = router(AppState::ready(artifacts), &ServeOptions::default()).unwrap();
    Served {
        _dir: dir,
        pipeline,
        corpus,
        app,
    }
}

fn chain() -> &'static Served {
    static CELL: OnceLock<Served> = OnceLock::new();
    CELL.get_or_init(|| {
        let params = ChainParams {
            emails: 800,
            topics: 10,
            ..ChainParams::default()
        };
        serve_profile(Profile::Chain(params), 10)
    })
}

fn coupled() -> &'static Served {
    static CELL: OnceLock<Served> = OnceLock::new();
    CELL.get_or_init(|| {
        let params = CoupledParams {
            pairs: 1500,
            topics: 10,
            ..CoupledParams::default()
        };
        serve_profile(Profile::Coupled(params), 10)
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty);
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn topic_ids(resp: &Value) -> Vec<usize> {
    resp["topics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["topic"].as_u64().unwrap() as usize)
        .collect()
}

fn assert_sorted(resp: &Value) {
    let probs: Vec<f64> = resp["topics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["probability"].as_f64().unwrap())
        .collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]), "{probs:?}");
}

#[tokio::test]
async fn health_reports_container_fingerprints() {
    let s = chain();
    let (status, body) = call(&s.app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["num_topics"], 10);
    let expected = file_fingerprint(&s.pipeline.model_path(10, View::S)).unwrap();
    assert_eq!(body["fingerprints"]["S"], expected.as_str());
    let suite = file_fingerprint(&s.pipeline.suite_path(10)).unwrap();
    assert_eq!(body["fingerprints"]["suite"], suite.as_str());
}

#[tokio::test]
async fn health_is_unavailable_while_loading() {
    let app = router(AppState::loading(), &ServeOptions::default()).unwrap();
    let (status, _) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(&app, "POST", "/suggest/reply", Some(json!({"customer": "hi", "k": 1}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let failed = AppState::loading();
    failed.set_failed("boom");
    let app = router(failed, &ServeOptions::default()).unwrap();
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("boom"));
}

#[tokio::test]
async fn reply_with_k_equal_m_returns_the_full_distribution() {
    let s = coupled();
    let customer = topic_text(&s.corpus, 0, 2);
    let (status, body) = call(&s.app, "POST", "/suggest/reply", Some(json!({"customer": customer, "k": 10}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(topic_ids(&body).len(), 10);
    let total: f64 = body["topics"].as_array().unwrap().iter().map(|s| s["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let tau: f64 = body["tau"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((tau - 1.0).abs() < 1e-9);
    assert_eq!(body["inference"]["burn_in"], SERVING_INFERENCE.burn_in);
    assert_sorted(&body);
}

#[tokio::test]
async fn reply_top_suggestion_follows_the_coupling() {
    let s = coupled();
    let model_ca = s.pipeline.load_model(10, View::CA).unwrap();
    let permutation = s.corpus.oracle.permutation.clone().unwrap();
    for t in 0..10 {
        let customer = topic_text(&s.corpus, t, 2);
        let (status, body) = call(&s.app, "POST", "/suggest/reply", Some(json!({"customer": customer, "k": 3}))).await;
        assert_eq!(status, StatusCode::OK);
        let expected = learned_topic(&model_ca, &s.corpus, permutation[t]);
        assert_eq!(topic_ids(&body)[0], expected, "customer topic {t}");
        let first = &body["topics"][0];
        assert!(!first["top_words"].as_array().unwrap().is_empty());
        assert!(first["exemplars"].as_array().unwrap().len() <= 3);
    }
}

#[tokio::test]
async fn next_routes_the_chain() {
    let s = chain();
    let model_s = s.pipeline.load_model(10, View::S).unwrap();
    let customer = topic_text(&s.corpus, 0, 2);
    let mut hits = 0;
    for k in 0..10 {
        let sentence = topic_text(&s.corpus, k, 1);
        let body = json!({"customer": customer, "sentences": ["Thanks for writing.", sentence], "k": 5});
        let (status, resp) = call(&s.app, "POST", "/suggest/next", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(resp["position"], 2);
        assert_eq!(topic_ids(&resp).len(), 5);
        assert_sorted(&resp);
        let expected = learned_topic(&model_s, &s.corpus, (k + 1) % 10);
        hits += usize::from(topic_ids(&resp)[0] == expected);
    }
    assert_eq!(hits, 10, "top suggestion was k+1 for {hits}/10 topics");
}

#[tokio::test]
async fn next_without_sentences_uses_the_first_sentence_model() {
    let s = chain();
    let customer = topic_text(&s.corpus, 2, 2);
    let (status, resp) = call(&s.app, "POST", "/suggest/next", Some(json!({"customer": customer, "k": 5}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["position"], 0);
    assert_eq!(resp["route"]["model"], "first");
    let exemplars = resp["topics"][0]["exemplars"].as_array().unwrap();
    assert!(!exemplars.is_empty() && exemplars.len() <= 3);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let s = chain();
    let cases = [
        ("POST", "/suggest/reply", Some(json!({"customer": "", "k": 3}))),
        ("POST", "/suggest/reply", Some(json!({"customer": "   ", "k": 3}))),
        ("POST", "/suggest/reply", Some(json!({"customer": "hello there", "k": 0}))),
        ("POST", "/suggest/reply", Some(json!({"customer": "hello there", "k": 11}))),
        ("POST", "/suggest/reply", Some(json!({"k": 3}))),
        ("POST", "/suggest/next", Some(json!({"customer": "hello", "sentences": "nope"}))),
        ("POST", "/suggest/next", Some(json!({"customer": "hello", "k": -1}))),
        ("POST", "/suggest/next", None),
        ("GET", "/topics?view=X", None),
    ];
    for (method, uri, body) in cases {
        let (status, resp) = call(&s.app, method, uri, body.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri} {body:?}");
        assert!(resp["error"].is_string());
    }
}

#[tokio::test]
async fn topics_lists_descriptors_per_view() {
    let s = chain();
    for (uri, view) in [("/topics", "S"), ("/topics?view=S", "S"), ("/topics?view=ca", "CA")] {
        let (status, body) = call(&s.app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::OK, "{view}");
        let list = body.as_array().unwrap();
        assert_eq!(list.len(), 10);
        assert!(list.iter().all(|d| !d["top_words"].as_array().unwrap().is_empty()));
    }
}

#[tokio::test]
async fn cors_headers_are_sent() {
    let s = chain();
    let req = Request::builder()
        .uri("/health")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = s.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");

    let options = ServeOptions {
        cors_origin: Some("http://ui.example".into()),
        ..ServeOptions::default()
    };
    let app = router(AppState::loading(), &options).unwrap();
    let req = Request::builder()
        .uri("/health")
        .header("origin", "http://ui.example")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://ui.example");
}

/// Random word of lowercase letters, unique per index.
fn word(i: usize) -> String {
    let mut s = String::from("zq");
    let mut n = i;
    for _ in 0..4 {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
    }
    s
}

/// M = 50 models over a 20k vocabulary with a small trained suite.
fn desk_scale() -> &'static Router {
    static CELL: OnceLock<Router> = OnceLock::new();
    CELL.get_or_init(|| {
        const M: usize = 50;
        const V: usize = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vocab = Vocabulary::from_words((0..V).map(word).collect()).unwrap();
        let words_of = |k: usize| (k * (V / M))..((k + 1) * (V / M));
        let mut counts = vec![0u32; M * V];
        for k in 0..M {
            for w in words_of(k) {
                counts[k * V + w] = rng.random_range(1..50);
            }
        }
        let model = |view| {
            TopicModel::from_counts(view, vec![0.1; M], 0.01, counts.clone(), vocab.clone(), 1, 100).unwrap()
        };
        let (model_ca, model_s) = (model(View::CA), model(View::S));

        let sentence = |k: usize, rng: &mut ChaCha8Rng| {
            let r = words_of(k);
            let words: Vec<String> = (0..10).map(|_| word(rng.random_range(r.clone()))).collect();
            let mut text = words.join(" ");
            text[..1].make_ascii_uppercase();
            text.push('.');
            text
        };
        let pairs: Vec<EmailPair> = (0..400)
            .map(|i| {
                let k = rng.random_range(0..M);
                let customer = format!("{} {}", sentence(k, &mut rng), sentence(k, &mut rng));
                let agent: Vec<String> = (0..4).map(|j| sentence((k + j) % M, &mut rng)).collect();
                EmailPair::new(format!("p{i}"), customer, agent.join(" "))
            })
            .collect();
        let tokenized = tokenize_pairs(&pairs, &vocab);
        let anns = annotate(&tokenized, &model_ca, &model_s, &SERVING_INFERENCE).unwrap();
        let examples = transition_pairs(&anns);
        let mut config = SuiteConfig {
            min_family_examples: 5,
            ..SuiteConfig::default()
        };
        config.sgd.epochs = 3;
        let suite = PredictorSuite::train(&tokenized, &anns, &examples, V, vocab.fingerprint(), &config).unwrap();
        let mut descriptors = BTreeMap::new();
        for (view, m) in [(View::CA, &model_ca), (View::S, &model_s)] {
            let docs = build_documents(&tokenized, view);
            descriptors.insert(view.as_str().to_string(), describe_topics(m, 10, 5, &docs, 5));
        }
        let agent_texts: Vec<&str> = pairs.iter().map(|p| p.agent_text.as_str()).collect();
        let artifacts = Artifacts::from_parts(
            vocab,
            model_ca,
            model_s,
            suite,
            descriptors,
            &anns,
            &agent_texts,
            BTreeMap::new(),
            &ServeOptions::default(),
        )
        .unwrap();
        router(AppState::ready(artifacts), &ServeOptions::default()).unwrap()
    })
}

fn next_body() -> Value {
    json!({
        "customer": format!("{} {} {}.", word(5), word(17), word(900)),
        "sentences": [format!("{} {} {}.", word(400), word(401), word(9000)), format!("{} {}.", word(1200), word(1300))],
        "k": 5,
    })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn parallel_identical_requests_return_identical_bodies() {
    let app = desk_scale();
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/suggest/next", Some(next_body())).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(body);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(topic_ids(&bodies[0]).len(), 5);
    assert_eq!(bodies[0]["position"], 2);
}

#[tokio::test]
async fn next_latency_p95_within_budget() {
    let app = desk_scale();
    // Warm up.
    call(app, "POST", "/suggest/next", Some(next_body())).await;
    let mut latencies: Vec<Duration> = Vec::new();
    for i in 0..200 {
        let mut body = next_body();
        body["customer"] = json!(format!("{} {} {}.", word(i * 37), word(i * 91 + 5), word(i * 13 + 700)));
        let start = Instant::now();
        let (status, _) = call(app, "POST", "/suggest/next", Some(body)).await;
        latencies.push(start.elapsed());
        assert_eq!(status, StatusCode::OK);
    }
    latencies.sort();
    let p95 = latencies[latencies.len() * 95 / 100];
    println!("suggest/next p95 = {p95:?}");
    assert!(p95 < Duration::from_millis(100), "p95 {p95:?}");
}
