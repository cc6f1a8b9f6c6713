//! Similarity between action and entity score vectors, with the analytic
//! gradients the end-to-end training phase needs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dot, TokenScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Dot,
    L2,
    WeightedCosine,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(SimilarityMetric::Dot),
            "l2" => Ok(SimilarityMetric::L2),
            "weighted_cosine" | "weighted-cosine" => Ok(SimilarityMetric::WeightedCosine),
            other => Err(format!("unknown similarity metric {other:?}")),
        }
    }
}

/// How module outputs are normalized and compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub metric: SimilarityMetric,
    pub normalize_entity: bool,
    pub normalize_action: bool,
    /// Per-position weights for [`SimilarityMetric::WeightedCosine`];
    /// required by [`similarity`] when that metric is selected. The trained
    /// model keeps learnable weights in its parameters instead.
    pub weighted_cosine_weights: Option<Vec<f64>>,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            metric: SimilarityMetric::Dot,
            normalize_entity: true,
            normalize_action: true,
            weighted_cosine_weights: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("score vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("weighted cosine requires weights")]
    MissingWeights,
    #[error("{got} weights supplied for {needed} tokens")]
    WeightsTooShort { needed: usize, got: usize },
}

/// Divide by the sum; a (near-)zero sum yields the uniform vector.
pub fn l1_normalize(scores: &TokenScoreVector) -> TokenScoreVector {
    TokenScoreVector { scores: l1_normalize_raw(&scores.scores) }
}

pub(crate) fn l1_normalize_raw(scores: &[f64]) -> Vec<f64> {
    debug_assert!(scores.iter().all(|&s| s >= 0.0));
    let sum: f64 = scores.iter().sum();
    if sum < 1e-12 {
        let n = scores.len().max(1);
        return vec![1.0 / n as f64; scores.len()];
    }
    scores.iter().map(|s| s / sum).collect()
}

/// Similarity of an action output `a` and an entity output `e` under the
/// configured normalizations and metric. Dot after L1 normalization of
/// non-negative vectors lands in [0, 1]; L2 maps through exp(-dist) to
/// (0, 1]; weighted cosine of non-negative vectors is clamped to [0, 1].
pub fn similarity(
    a: &TokenScoreVector,
    e: &TokenScoreVector,
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    if a.len() != e.len() {
        return Err(SimilarityError::LengthMismatch(a.len(), e.len()));
    }
    let weights = match cfg.metric {
        SimilarityMetric::WeightedCosine => {
            let w = cfg
                .weighted_cosine_weights
                .as_deref()
                .ok_or(SimilarityError::MissingWeights)?;
            if w.len() < a.len() {
                return Err(SimilarityError::WeightsTooShort { needed: a.len(), got: w.len() });
            }
            Some(&w[..a.len()])
        }
        _ => None,
    };
    let (score, _, _, _) = similarity_grad(&a.scores, &e.scores, cfg, weights);
    Ok(score)
}

/// Similarity plus gradients with respect to the raw (pre-normalization)
/// vectors, and to the weights under weighted cosine.
///
/// Returns `(score, d_score/d_a, d_score/d_e, d_score/d_weights)`.
pub(crate) fn similarity_grad(
    a: &[f64],
    e: &[f64],
    cfg: &SimilarityConfig,
    weights: Option<&[f64]>,
) -> (f64, Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let n = a.len();
    let sum_a: f64 = a.iter().sum();
    let sum_e: f64 = e.iter().sum();
    let a_hat = if cfg.normalize_action { l1_normalize_raw(a) } else { a.to_vec() };
    let e_hat = if cfg.normalize_entity { l1_normalize_raw(e) } else { e.to_vec() };

    // metric-level score and gradients on the normalized vectors
    let (score, d_a_hat, d_e_hat, d_w) = match cfg.metric {
        SimilarityMetric::Dot => {
            let s = dot(&a_hat, &e_hat);
            (s, e_hat.clone(), a_hat.clone(), None)
        }
        SimilarityMetric::L2 => {
            let dist_sq: f64 = a_hat.iter().zip(&e_hat).map(|(x, y)| (x - y) * (x - y)).sum();
            let dist = dist_sq.sqrt();
            let s = (-dist).exp();
            if dist < 1e-12 {
                (s, vec![0.0; n], vec![0.0; n], None)
            } else {
                let mut da = vec![0.0; n];
                let mut de = vec![0.0; n];
                for k in 0..n {
                    let g = -s * (a_hat[k] - e_hat[k]) / dist;
                    da[k] = g;
                    de[k] = -g;
                }
                (s, da, de, None)
            }
        }
        SimilarityMetric::WeightedCosine => {
            let w = weights.expect("weights checked by caller");
            let u: f64 = (0..n).map(|k| w[k] * a_hat[k] * e_hat[k]).sum();
            let na = (0..n).map(|k| w[k] * a_hat[k] * a_hat[k]).sum::<f64>().sqrt();
            let ne = (0..n).map(|k| w[k] * e_hat[k] * e_hat[k]).sum::<f64>().sqrt();
            if na * ne < 1e-12 {
                (0.0, vec![0.0; n], vec![0.0; n], Some(vec![0.0; n]))
            } else {
                let s = (u / (na * ne)).clamp(0.0, 1.0);
                let mut da = vec![0.0; n];
                let mut de = vec![0.0; n];
                let mut dw = vec![0.0; n];
                for k in 0..n {
                    da[k] = w[k] * e_hat[k] / (na * ne) - s * w[k] * a_hat[k] / (na * na);
                    de[k] = w[k] * a_hat[k] / (na * ne) - s * w[k] * e_hat[k] / (ne * ne);
                    dw[k] = a_hat[k] * e_hat[k] / (na * ne)
                        - s * (a_hat[k] * a_hat[k] / (2.0 * na * na)
                            + e_hat[k] * e_hat[k] / (2.0 * ne * ne));
                }
                (s, da, de, Some(dw))
            }
        }
    };

    // chain through the L1 normalization
    let da = chain_l1(&d_a_hat, &a_hat, cfg.normalize_action, sum_a);
    let de = chain_l1(&d_e_hat, &e_hat, cfg.normalize_entity, sum_e);
    (score, da, de, d_w)
}

/// Given dL/d(normalized) and the normalized vector, produce dL/d(raw).
fn chain_l1(grad_hat: &[f64], hat: &[f64], normalized: bool, raw_sum: f64) -> Vec<f64> {
    if !normalized {
        return grad_hat.to_vec();
    }
    if raw_sum < 1e-12 {
        // the degenerate uniform branch is constant in the input
        return vec![0.0; grad_hat.len()];
    }
    let inner = dot(grad_hat, hat);
    grad_hat.iter().map(|&g| (g - inner) / raw_sum).collect()
}
