//! Composed loss graphs for the three training phases: per-token BCE for
//! entity pretraining, soft-target BCE against frozen entity outputs for
//! action pretraining, and BCE on the conjunction of similarity scores for
//! end-to-end training. Each returns the loss and a full gradient set; the
//! trainer decides which parameter groups an update may touch.

use super::backward::{action_backward, encode_backward, entity_backward};
use super::forward::{action_forward_cached, encode_code, entity_forward_cached};
use super::linalg::{sigmoid, Mat};
use super::{ModelError, ModelGrads, ModelParams};
use crate::corpus::CodeSnippet;
use crate::layout::{ActionEvaluation, ModuleLayout};
use crate::scorer::{similarity_grad, SimilarityConfig, SimilarityMetric};

/// Numerically stable softplus, ln(1 + e^z).
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy from logits; returns (loss, dL/dlogits).
fn bce_from_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; logits.len()];
    for (k, (&z, &y)) in logits.iter().zip(targets).enumerate() {
        loss += softplus(z) - y * z;
        dlogits[k] = (sigmoid(z) - y) / n;
    }
    (loss / n, dlogits)
}

/// Entity-pretraining loss: BCE between the entity module's token scores
/// and weak supervision targets.
pub fn entity_loss(
    phrase: &str,
    snippet: &CodeSnippet,
    targets: &[f64],
    params: &ModelParams,
) -> Result<(f64, ModelGrads), ModelError> {
    let encode = encode_code(snippet, params)?;
    let cache = entity_forward_cached(phrase, &encode, params);
    let (loss, dlogits) = bce_from_logits(&cache.logits, targets);

    let mut grads = params.zero_grads();
    let mut dy = Mat::zeros(encode.rows().rows, encode.rows().cols);
    entity_backward(&cache, params, &dlogits, &mut grads, &mut dy);
    encode_backward(&encode, params, &dy, &mut grads);
    ensure_finite(loss, &grads, "entity loss")?;
    Ok((loss, grads))
}

/// Action-pretraining loss: soft-target BCE regressing the action module
/// onto the frozen entity module's scores for the masked argument. The
/// gradients of shared tensors (embeddings, encoder, entity head) are not
/// populated; the phase only updates the action variants.
pub fn action_pretrain_loss(
    eval: &ActionEvaluation,
    snippet: &CodeSnippet,
    params: &ModelParams,
) -> Result<(f64, ModelGrads), ModelError> {
    let encode = encode_code(snippet, params)?;
    let seen_scores: Vec<Vec<f64>> = eval
        .seen_args
        .iter()
        .map(|(_, phrase)| entity_forward_cached(phrase, &encode, params).scores)
        .collect();
    let targets = entity_forward_cached(&eval.masked_arg.1, &encode, params).scores;

    let cache = action_forward_cached(eval, &seen_scores, &encode, params)?;
    let (loss, dlogits) = bce_from_logits(&cache.logits, &targets);

    let mut grads = params.zero_grads();
    let mut dy = Mat::zeros(encode.rows().rows, encode.rows().cols);
    let _dseen = action_backward(&cache, params, &dlogits, &mut grads, &mut dy);
    // dy and dseen flow into frozen parameters; drop them. The joint
    // embedder's input gradients land in grads.embeddings and are masked
    // out by the phase's update filter.
    ensure_finite(loss, &grads, "action pretraining loss")?;
    Ok((loss, grads))
}

/// Outcome of one end-to-end example.
pub struct EndToEndLoss {
    pub loss: f64,
    pub grads: ModelGrads,
    /// The model's match probability for the pair.
    pub score: f64,
}

const PROB_EPS: f64 = 1e-12;

/// End-to-end loss: BCE between the layout's match probability (product of
/// per-action similarity scores) and the binary pair label. Every parameter
/// receives gradients, including the encoder and embeddings.
pub fn end_to_end_loss(
    layout: &ModuleLayout,
    snippet: &CodeSnippet,
    label: f64,
    params: &ModelParams,
    cfg: &SimilarityConfig,
) -> Result<EndToEndLoss, ModelError> {
    let encode = encode_code(snippet, params)?;
    let n = encode.rows().rows;

    struct EvalCaches {
        seen: Vec<super::forward::EntityCache>,
        masked: super::forward::EntityCache,
        action: super::forward::ActionCache,
        sim: (f64, Vec<f64>, Vec<f64>, Option<Vec<f64>>),
    }

    // Training always reads the learned per-position weights; explicit
    // config weights are an inference-time override only.
    let weights: Option<Vec<f64>> = match cfg.metric {
        SimilarityMetric::WeightedCosine => Some(params.set.cosine_weights[..n].to_vec()),
        _ => None,
    };

    let mut evals = Vec::with_capacity(layout.evaluations.len());
    for eval in &layout.evaluations {
        let seen: Vec<super::forward::EntityCache> = eval
            .seen_args
            .iter()
            .map(|(_, phrase)| entity_forward_cached(phrase, &encode, params))
            .collect();
        let masked = entity_forward_cached(&eval.masked_arg.1, &encode, params);
        let seen_scores: Vec<Vec<f64>> = seen.iter().map(|c| c.scores.clone()).collect();
        let action = action_forward_cached(eval, &seen_scores, &encode, params)?;
        let sim = similarity_grad(&action.scores, &masked.scores, cfg, weights.as_deref());
        evals.push(EvalCaches { seen, masked, action, sim });
    }

    let score: f64 = evals.iter().map(|e| e.sim.0).product();
    let clamped = score.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(label * clamped.ln() + (1.0 - label) * (1.0 - clamped).ln());
    let dscore = (clamped - label) / (clamped * (1.0 - clamped));

    let mut grads = params.zero_grads();
    let mut dy = Mat::zeros(n, params.hp.d);

    for (m, ev) in evals.iter().enumerate() {
        // d(product)/d(s_m)
        let others: f64 = evals
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != m)
            .map(|(_, e)| e.sim.0)
            .product();
        let dsim = dscore * others;

        let (_, da_scores, de_scores, dweights) = &ev.sim;

        let da_logits: Vec<f64> = ev
            .action
            .scores
            .iter()
            .zip(da_scores)
            .map(|(&s, &g)| dsim * g * s * (1.0 - s))
            .collect();
        let dmasked_logits: Vec<f64> = ev
            .masked
            .scores
            .iter()
            .zip(de_scores)
            .map(|(&s, &g)| dsim * g * s * (1.0 - s))
            .collect();

        let dseen_scores = action_backward(&ev.action, params, &da_logits, &mut grads, &mut dy);
        entity_backward(&ev.masked, params, &dmasked_logits, &mut grads, &mut dy);
        for (cache, dscores) in ev.seen.iter().zip(&dseen_scores) {
            let dlogits: Vec<f64> = cache
                .scores
                .iter()
                .zip(dscores)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect();
            entity_backward(cache, params, &dlogits, &mut grads, &mut dy);
        }

        if let Some(dw) = dweights {
            for (gw, d) in grads.cosine_weights.iter_mut().zip(dw) {
                *gw += dsim * d;
            }
        }
    }
    encode_backward(&encode, params, &dy, &mut grads);
    ensure_finite(loss, &grads, "end-to-end loss")?;
    Ok(EndToEndLoss { loss, grads, score })
}

fn ensure_finite(loss: f64, grads: &ModelGrads, what: &str) -> Result<(), ModelError> {
    if !loss.is_finite() || !grads.is_finite() {
        return Err(ModelError::NonFiniteGradient(what.to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;
    use crate::layout;
    use crate::model::{HyperParams, Vocab};
    use crate::parser::QueryParser;

    #[test]
    fn entity_loss_is_finite_and_nonzero_grads() {
        let corpus = generate_synthetic_corpus(0, 4).unwrap();
        let parser = QueryParser::default();
        let vocab = Vocab::build(&corpus, &parser);
        let params = ModelParams::init(HyperParams { d: 8, h: 6, n_max: 64 }, vocab, 0);
        let snippet = corpus.snippets().next().unwrap();
        let targets = vec![1.0; snippet.tokens.len()];
        let (loss, grads) = entity_loss("file", snippet, &targets, &params).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        let mut any = false;
        grads.for_each_slice(&mut |name, s| {
            if name.starts_with("entity_head") {
                any |= s.iter().any(|&v| v != 0.0);
            }
        });
        assert!(any, "entity head must receive gradient");
    }

    #[test]
    fn end_to_end_loss_decreases_along_gradient() {
        let corpus = generate_synthetic_corpus(0, 4).unwrap();
        let parser = QueryParser::default();
        let vocab = Vocab::build(&corpus, &parser);
        let mut params = ModelParams::init(HyperParams { d: 8, h: 6, n_max: 64 }, vocab, 0);
        let query = &corpus.queries()[0];
        let layout =
            layout::compile(&parser.parse_raw(&query.raw_text).unwrap()).unwrap();
        let snippet = corpus.paired_snippet(query).clone();
        let cfg = SimilarityConfig::default();

        let first = end_to_end_loss(&layout, &snippet, 1.0, &params, &cfg).unwrap();
        params.set.sgd_step(&first.grads, 0.05);
        let second = end_to_end_loss(&layout, &snippet, 1.0, &params, &cfg).unwrap();
        assert!(
            second.loss < first.loss,
            "one SGD step should reduce the loss: {} -> {}",
            first.loss,
            second.loss
        );
    }
}
