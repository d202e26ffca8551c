use crate::error::{Error, Result};
use crate::silver::SilverAnnotation;
use crate::topic_model::{TopicDistribution, TopicModel};

pub fn baseline_uniform(num_topics: usize) -> Result<TopicDistribution> {
    if num_topics < 1 {
        return Err(Error::InvalidArgument("uniform baseline needs at least one topic".into()));
    }
    Ok(TopicDistribution::uniform(num_topics))
}

/// Normalized Dirichlet prior, `alpha_k / sum(alpha)`.
pub fn baseline_average(alpha: &[f64]) -> Result<TopicDistribution> {
    if alpha.is_empty() || alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(Error::InvalidArgument("alpha must be non-empty and positive".into()));
    }
    Ok(TopicDistribution::from_weights(alpha.to_vec()))
}

/// Average baseline from a trained sentence model's re-estimated prior.
pub fn baseline_average_from_model(model_s: &TopicModel) -> TopicDistribution {
    model_s.prior()
}

/// Mean silver sentence distribution over training annotations.
pub fn mean_sentence_distribution(annotations: &[SilverAnnotation]) -> Result<TopicDistribution> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for rec in annotations.iter().flat_map(|a| &a.sentences) {
        let acc = sum.get_or_insert_with(|| vec![0.0; rec.tau_s.len()]);
        if acc.len() != rec.tau_s.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                actual: rec.tau_s.len(),
            });
        }
        acc.iter_mut().zip(rec.tau_s.probs()).for_each(|(a, p)| *a += p);
        n += 1;
    }
    let sum = sum.ok_or_else(|| Error::Empty("silver sentences".into()))?;
    Ok(TopicDistribution::from_weights(sum.into_iter().map(|s| s / n as f64).collect()))
}

/// Predicts the agent reply has the customer query's topic mix.
pub fn baseline_copy_customer(customer_topics: &TopicDistribution) -> TopicDistribution {
    customer_topics.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topic_model::dominant_topic;

    #[test]
    fn uniform() {
        assert!(baseline_uniform(50).unwrap().probs().iter().all(|&p| p == 0.02));
        assert_eq!(baseline_uniform(2).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(dominant_topic(&baseline_uniform(7).unwrap()).0, 0);
        assert!(baseline_uniform(0).is_err());
    }

    #[test]
    fn average() {
        assert_eq!(baseline_average(&[2.0, 1.0, 1.0]).unwrap().probs(), &[0.5, 0.25, 0.25]);
        assert_eq!(baseline_average(&[0.1; 4]).unwrap().probs(), &[0.25; 4]);
        assert!(baseline_average(&[]).is_err());
        assert!(baseline_average(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn copy_customer_is_identity() {
        let t = TopicDistribution::new(vec![0.7, 0.3]).unwrap();
        assert_eq!(baseline_copy_customer(&t), t);
        assert_eq!(baseline_copy_customer(&baseline_copy_customer(&t)), t);
    }
}
