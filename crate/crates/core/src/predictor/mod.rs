//! Topic predictors: the whole-reply soft-label regressor (T1), the
//! next-sentence dominant-topic family (T2) and the evaluation baselines.

mod baselines;
mod features;
mod softmax;
mod suite;

pub use baselines::{
    baseline_average, baseline_average_from_model, baseline_copy_customer, baseline_uniform,
    mean_sentence_distribution,
};
pub use features::{
    position_bucket, Block, BlockKind, FeatureContext, FeatureLayout, FeatureSet, FeatureVector, SentenceContext,
    SentenceTopicFeature, POSITION_BUCKETS,
};
pub use softmax::{kl_divergence, softmax, Example, SgdConfig, SoftmaxRegressor};
pub use suite::{
    predict_t1, t1_features, train_t1, train_t2, NextSentencePredictor, PredictorSuite, Route, SuiteConfig,
    DEFAULT_MIN_FAMILY_EXAMPLES,
};
