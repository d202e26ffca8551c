//! Metrics and reports: Bhattacharyya coefficient, text-ranking Recall@1 and
//! top-K dominant topic accuracy.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::predictor::{
    baseline_copy_customer, baseline_uniform, kl_divergence, NextSentencePredictor, PredictorSuite, SentenceContext,
};
use crate::silver::{transition_pairs, ExampleKind, SilverAnnotation};
use crate::topic_model::TopicDistribution;

pub const DEFAULT_RANKING_KS: [usize; 4] = [2, 5, 10, 20];
pub const DEFAULT_DTA_KS: [usize; 4] = [1, 2, 5, 10];

fn same_len(p: &TopicDistribution, q: &TopicDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

/// `sum_k sqrt(p_k q_k)`, clamped to [0, 1].
pub fn bhattacharyya(p: &TopicDistribution, q: &TopicDistribution) -> Result<f64> {
    same_len(p, q)?;
    let bc: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(bc.clamp(0.0, 1.0))
}

pub fn mean_bc(predictions: &[TopicDistribution], targets: &[TopicDistribution]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("mean Bhattacharyya of no predictions".into()));
    }
    let mut sum = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        sum += bhattacharyya(p, t)?;
    }
    Ok(sum / predictions.len() as f64)
}

/// Mean `KL(target || prediction)`. Diagnostic only.
pub fn mean_kl(predictions: &[TopicDistribution], targets: &[TopicDistribution]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: targets.len(),
        });
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| kl_divergence(t.probs(), p.probs()))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// A candidate reply for ranking: its id and silver topic distribution.
pub type Candidate<'a> = (&'a str, &'a TopicDistribution);

/// Fraction of test items whose true reply strictly outranks `k - 1`
/// distractors drawn from `pool` (never the item's own id), by Bhattacharyya
/// similarity to the prediction. Distractors for item `i` depend only on
/// `(seed, i)`.
pub fn text_ranking_recall1(
    predictions: &[TopicDistribution],
    truths: &[Candidate<'_>],
    pool: &[Candidate<'_>],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("ranking needs k >= 1".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("ranking test set".into()));
    }
    if pool.len() < k - 1 {
        return Err(Error::InvalidArgument(format!(
            "ranking with k = {k} needs at least {} distractors, found {}",
            k - 1,
            pool.len()
        )));
    }
    let wins: Vec<Result<bool>> = predictions
        .par_iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (pred, (id, truth)))| {
            let true_score = bhattacharyya(pred, truth)?;
            if k == 1 {
                return Ok(true);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            let draws = index::sample(&mut rng, pool.len(), k.min(pool.len()));
            let distractors: Vec<usize> = draws.iter().filter(|&j| pool[j].0 != *id).take(k - 1).collect();
            if distractors.len() < k - 1 {
                return Err(Error::InvalidArgument(format!("not enough distractors for {id}")));
            }
            let mut best = f64::NEG_INFINITY;
            for j in distractors {
                best = best.max(bhattacharyya(pred, pool[j].1)?);
            }
            Ok(true_score > best)
        })
        .collect();
    let mut n = 0usize;
    for w in wins {
        n += usize::from(w?);
    }
    Ok(n as f64 / predictions.len() as f64)
}

/// Fraction of examples whose silver dominant topic is among the `k` most
/// probable predicted topics (ties to the lower id).
pub fn dominant_topic_accuracy(predictions: &[TopicDistribution], silver: &[usize], k: usize) -> Result<f64> {
    if predictions.len() != silver.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: silver.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("dominant topic accuracy of no predictions".into()));
    }
    let mut hits = 0usize;
    for (p, &d) in predictions.iter().zip(silver) {
        if k < 1 || k > p.len() {
            return Err(Error::InvalidArgument(format!("K = {k} outside [1, {}]", p.len())));
        }
        hits += usize::from(p.ranked()[..k].contains(&d));
    }
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    T1,
    T2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_set: Option<String>,
    pub mean_bc: f64,
    /// Dominant topic accuracy keyed by K.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dta: BTreeMap<usize, f64>,
    /// Text-ranking Recall@1 keyed by candidate count k.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall1: BTreeMap<usize, f64>,
}

impl EvalRow {
    fn new(system: &str, feature_set: Option<&str>, mean_bc: f64) -> Self {
        Self {
            system: system.into(),
            feature_set: feature_set.map(String::from),
            mean_bc,
            dta: BTreeMap::new(),
            recall1: BTreeMap::new(),
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.mean_bc)
            .chain(self.dta.values().copied())
            .chain(self.recall1.values().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub num_topics: usize,
    pub test_size: usize,
    pub rows: Vec<EvalRow>,
    /// Mean KL(silver || prediction) per system label. Logged, not a metric.
    #[serde(default)]
    pub mean_kl: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn row(&self, system: &str, feature_set: Option<&str>) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.feature_set.as_deref() == feature_set)
    }

    /// Metric values lie in [0, 1] and rows are unique per (system, features).
    pub fn is_valid(&self) -> bool {
        let in_range = self.rows.iter().flat_map(|r| r.values()).all(|v| (0.0..=1.0).contains(&v));
        let mut keys: Vec<_> = self.rows.iter().map(|r| (&r.system, &r.feature_set)).collect();
        keys.sort();
        keys.dedup();
        in_range && keys.len() == self.rows.len()
    }
}

fn row_label(r: &EvalRow) -> String {
    match &r.feature_set {
        Some(f) => format!("{} [{}]", r.system, f),
        None => r.system.clone(),
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dta_ks: Vec<usize> = self.rows.iter().flat_map(|r| r.dta.keys().copied()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let rk: Vec<usize> = self.rows.iter().flat_map(|r| r.recall1.keys().copied()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let width = self.rows.iter().map(|r| row_label(r).len()).max().unwrap_or(6).max(6);
        writeln!(f, "{:?}  M={}  test={}", self.task, self.num_topics, self.test_size)?;
        write!(f, "{:<width$}  {:>7}", "system", "BC")?;
        for k in &dta_ks {
            write!(f, "  {:>7}", format!("DTA@{k}"))?;
        }
        for k in &rk {
            write!(f, "  {:>7}", format!("R@1 k={k}"))?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "{:<width$}  {:>7.4}", row_label(r), r.mean_bc)?;
            for k in &dta_ks {
                match r.dta.get(k) {
                    Some(v) => write!(f, "  {v:>7.4}")?,
                    None => write!(f, "  {:>7}", "-")?,
                }
            }
            for k in &rk {
                match r.recall1.get(k) {
                    Some(v) => write!(f, "  {v:>7.4}")?,
                    None => write!(f, "  {:>7}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn check_aligned(pairs: &[TokenizedPair], annotations: &[SilverAnnotation]) -> Result<()> {
    if pairs.len() != annotations.len() {
        return Err(Error::DimensionMismatch {
            expected: pairs.len(),
            actual: annotations.len(),
        });
    }
    if annotations.is_empty() {
        return Err(Error::Empty("evaluation test set".into()));
    }
    Ok(())
}

/// Whole-reply evaluation: the trained regressor and the copy-customer
/// baseline, scored by mean BC against silver agent distributions and by
/// Recall@1 against distractors from the training annotations.
pub fn evaluate_t1(
    suite: &PredictorSuite,
    test_pairs: &[TokenizedPair],
    test: &[SilverAnnotation],
    train: &[SilverAnnotation],
    ranking_ks: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    check_aligned(test_pairs, test)?;
    let proposed: Vec<TopicDistribution> = test_pairs
        .par_iter()
        .zip(test)
        .map(|(p, a)| suite.predict_t1(&p.customer, &a.tau_ca_c))
        .collect();
    let copy: Vec<TopicDistribution> = test.iter().map(|a| baseline_copy_customer(&a.tau_ca_c)).collect();
    let targets: Vec<TopicDistribution> = test.iter().map(|a| a.tau_ca_a.clone()).collect();
    let truths: Vec<Candidate<'_>> = test.iter().map(|a| (a.id.as_str(), &a.tau_ca_a)).collect();
    let pool: Vec<Candidate<'_>> = train.iter().map(|a| (a.id.as_str(), &a.tau_ca_a)).collect();

    let mut rows = Vec::new();
    let mut kl = BTreeMap::new();
    for (name, preds) in [("proposed", &proposed), ("copy_customer", &copy)] {
        let mut row = EvalRow::new(name, None, mean_bc(preds, &targets)?);
        for &k in ranking_ks {
            if k <= pool.len() + 1 {
                row.recall1.insert(k, text_ranking_recall1(preds, &truths, &pool, k, seed)?);
            }
        }
        kl.insert(name.to_string(), mean_kl(preds, &targets)?);
        rows.push(row);
    }
    log::info!("T1 mean KL: {kl:?}");
    Ok(EvalReport {
        task: Task::T1,
        num_topics: suite.num_topics,
        test_size: test.len(),
        rows,
        mean_kl: kl,
    })
}

/// Next-sentence predictions of one predictor for every sentence of every
/// test reply, with the silver dominant topic and distribution of the target.
fn next_predictions(
    predictor: &NextSentencePredictor,
    test_pairs: &[TokenizedPair],
    test: &[SilverAnnotation],
) -> Vec<TopicDistribution> {
    let examples = transition_pairs(test);
    examples
        .par_iter()
        .map(|e| {
            let pair = &test_pairs[e.pair];
            let ann = &test[e.pair];
            let last = match e.kind {
                ExampleKind::First => None,
                ExampleKind::Transition => {
                    let rec = &ann.sentences[e.j];
                    Some(SentenceContext {
                        tokens: pair.agent.sentence(e.j),
                        topics: &rec.tau_s,
                        dominant: rec.dom,
                        j: e.j,
                    })
                }
            };
            predictor.predict_next(&pair.customer, &ann.tau_ca_c, last).0
        })
        .collect()
}

/// Next-sentence evaluation over every agent sentence of the test set:
/// Uniform, Average and each trained predictor (one row per feature subset).
pub fn evaluate_t2(
    suite: &PredictorSuite,
    average: &TopicDistribution,
    test_pairs: &[TokenizedPair],
    test: &[SilverAnnotation],
    dta_ks: &[usize],
) -> Result<EvalReport> {
    check_aligned(test_pairs, test)?;
    let m = suite.num_topics;
    if average.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: average.len(),
        });
    }
    let examples = transition_pairs(test);
    if examples.is_empty() {
        return Err(Error::Empty("test sentences".into()));
    }
    let silver_dom: Vec<usize> = examples.iter().map(|e| e.next_dominant).collect();
    let silver_tau: Vec<TopicDistribution> = examples
        .iter()
        .map(|e| test[e.pair].sentences[e.target_sentence()].tau_s.clone())
        .collect();
    let n = examples.len();
    let mut systems: Vec<(String, Option<String>, Vec<TopicDistribution>)> = vec![
        ("uniform".into(), None, vec![baseline_uniform(m)?; n]),
        ("average".into(), None, vec![average.clone(); n]),
    ];
    for p in suite.next_predictors() {
        systems.push((
            "proposed".into(),
            Some(p.feature_set().as_str().into()),
            next_predictions(p, test_pairs, test),
        ));
    }
    let mut rows = Vec::new();
    let mut kl = BTreeMap::new();
    for (name, features, preds) in systems {
        if rows
            .iter()
            .any(|r: &EvalRow| r.system == name && r.feature_set == features)
        {
            continue;
        }
        let mut row = EvalRow::new(&name, features.as_deref(), mean_bc(&preds, &silver_tau)?);
        for &k in dta_ks.iter().filter(|&&k| k <= m) {
            row.dta.insert(k, dominant_topic_accuracy(&preds, &silver_dom, k)?);
        }
        kl.insert(row_label(&row), mean_kl(&preds, &silver_tau)?);
        rows.push(row);
    }
    log::info!("T2 mean KL: {kl:?}");
    Ok(EvalReport {
        task: Task::T2,
        num_topics: m,
        test_size: n,
        rows,
        mean_kl: kl,
    })
}

/// Whole-reply series over the topic-count grid:
/// `M,system,mean_bc,recall1_k<k>...`.
pub fn t1_series_csv(reports: &[EvalReport]) -> String {
    let ks: std::collections::BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.rows.iter().flat_map(|row| row.recall1.keys().copied()))
        .collect();
    let mut out = String::from("M,system,mean_bc");
    for k in &ks {
        out.push_str(&format!(",recall1_k{k}"));
    }
    out.push('\n');
    for r in reports {
        for row in &r.rows {
            out.push_str(&format!("{},{},{}", r.num_topics, row.system, row.mean_bc));
            for k in &ks {
                out.push(',');
                if let Some(v) = row.recall1.get(k) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Next-sentence table: `system,feature_set,mean_bc,dta_k<K>...`.
pub fn t2_table_csv(report: &EvalReport) -> String {
    let ks: std::collections::BTreeSet<usize> = report.rows.iter().flat_map(|r| r.dta.keys().copied()).collect();
    let mut out = String::from("system,feature_set,mean_bc");
    for k in &ks {
        out.push_str(&format!(",dta_k{k}"));
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{}",
            row.system,
            row.feature_set.as_deref().unwrap_or(""),
            row.mean_bc
        ));
        for k in &ks {
            out.push(',');
            if let Some(v) = row.dta.get(k) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}
