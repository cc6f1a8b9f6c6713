//! Forward passes. Every pass returns a cache holding the intermediates the
//! matching backward pass needs; inference callers just read the output
//! field and drop the rest.

use super::linalg::{axpy, sigmoid, softmax_rows, Mat};
use super::{AttentionParams, ModelError, ModelParams, TokenScoreVector, TwoLayer};
use crate::corpus::{tokenize_query, CodeSnippet};
use crate::layout::ActionEvaluation;

/// Fixed sinusoidal position rows.
pub fn positional_encoding(n: usize, d: usize) -> Mat {
    let mut out = Mat::zeros(n, d);
    for k in 0..n {
        let row = out.row_mut(k);
        for i in 0..d {
            let exponent = 2.0 * ((i / 2) as f64) / d as f64;
            let theta = k as f64 / 10000f64.powf(exponent);
            row[i] = if i % 2 == 0 { theta.sin() } else { theta.cos() };
        }
    }
    out
}

/// Intermediates of one self-attention block with residual output
/// `y = x + softmax(x Wq (x Wk)^T / sqrt(d)) (x Wv) Wo`.
#[derive(Debug, Clone)]
pub struct AttnCache {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub probs: Mat,
    pub context: Mat,
    pub y: Mat,
}

pub(super) fn attn_forward(x: &Mat, p: &AttentionParams) -> AttnCache {
    let d = p.wq.cols;
    let scale = 1.0 / (d as f64).sqrt();
    let q = x.matmul(&p.wq);
    let k = x.matmul(&p.wk);
    let v = x.matmul(&p.wv);
    let mut scores = q.matmul_t(&k);
    for s in scores.data.iter_mut() {
        *s *= scale;
    }
    softmax_rows(&mut scores);
    let context = scores.matmul(&v);
    let mut y = x.clone();
    y.add_assign(&context.matmul(&p.wo));
    AttnCache { q, k, v, probs: scores, context, y }
}

/// Intermediates of the code encoder: embeddings plus positions through one
/// attention block.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub token_ids: Vec<usize>,
    pub x: Mat,
    pub attn: AttnCache,
}

impl EncodeCache {
    /// Encoded rows, one per code token.
    pub fn rows(&self) -> &Mat {
        &self.attn.y
    }
}

/// Encode a snippet's tokens into contextual rows. Deterministic; OOV
/// tokens use the shared OOV embedding.
pub fn encode_code(snippet: &CodeSnippet, params: &ModelParams) -> Result<EncodeCache, ModelError> {
    let n = snippet.tokens.len();
    if n > params.hp.n_max {
        return Err(ModelError::TooManyTokens { got: n, max: params.hp.n_max });
    }
    let d = params.hp.d;
    let token_ids: Vec<usize> = snippet.tokens.iter().map(|t| params.vocab.id(&t.text)).collect();
    let mut x = positional_encoding(n, d);
    for (k, &id) in token_ids.iter().enumerate() {
        axpy(1.0, params.embedding(id), x.row_mut(k));
    }
    let attn = attn_forward(&x, &params.set.encoder);
    Ok(EncodeCache { token_ids, x, attn })
}

/// Two-layer feed-forward over rows: hidden = tanh(x W1 + b1),
/// out = hidden W2 + b2.
#[derive(Debug, Clone)]
pub struct TwoLayerCache {
    pub hidden: Mat,
    pub out: Mat,
}

pub(super) fn two_layer_forward(x: &Mat, p: &TwoLayer) -> TwoLayerCache {
    let mut hidden = x.matmul(&p.w1);
    for i in 0..hidden.rows {
        let row = hidden.row_mut(i);
        for (v, b) in row.iter_mut().zip(&p.b1) {
            *v = (*v + b).tanh();
        }
    }
    let mut out = hidden.matmul(&p.w2);
    for i in 0..out.rows {
        let row = out.row_mut(i);
        for (v, b) in row.iter_mut().zip(&p.b2) {
            *v += b;
        }
    }
    TwoLayerCache { hidden, out }
}

/// Intermediates of the entity discovery module.
#[derive(Debug, Clone)]
pub struct EntityCache {
    pub phrase_word_ids: Vec<usize>,
    /// Encoded rows with the mean phrase embedding added.
    pub z: Mat,
    pub head: TwoLayerCache,
    /// Head logits per token (pre-sigmoid).
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Score each code token's relatedness to an entity phrase, conditioning
/// the encoded rows on the mean phrase-word embedding as an additive bias.
/// Depends only on the phrase and the snippet.
pub fn entity_forward_cached(
    phrase: &str,
    encode: &EncodeCache,
    params: &ModelParams,
) -> EntityCache {
    let d = params.hp.d;
    let words = tokenize_query(phrase);
    let phrase_word_ids: Vec<usize> = words.iter().map(|w| params.vocab.id(w)).collect();

    let mut mean = vec![0.0; d];
    if !phrase_word_ids.is_empty() {
        let inv = 1.0 / phrase_word_ids.len() as f64;
        for &id in &phrase_word_ids {
            axpy(inv, params.embedding(id), &mut mean);
        }
    }

    let mut z = encode.rows().clone();
    for k in 0..z.rows {
        axpy(1.0, &mean, z.row_mut(k));
    }
    let head = two_layer_forward(&z, &params.set.entity_head);
    let logits: Vec<f64> = (0..head.out.rows).map(|k| head.out.row(k)[0]).collect();
    let scores: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    EntityCache { phrase_word_ids, z, head, logits, scores }
}

/// Convenience wrapper that encodes the snippet itself.
pub fn entity_forward(
    phrase: &str,
    snippet: &CodeSnippet,
    params: &ModelParams,
) -> Result<TokenScoreVector, ModelError> {
    let encode = encode_code(snippet, params)?;
    let cache = entity_forward_cached(phrase, &encode, params);
    Ok(TokenScoreVector::new(cache.scores))
}

/// Intermediates of one joint verb-preposition embedding.
#[derive(Debug, Clone)]
pub struct JointCache {
    pub verb_id: usize,
    pub prep_id: Option<usize>,
    /// Concatenated verb and preposition embeddings (1 x 2d); the
    /// preposition half is zero when absent.
    pub input: Mat,
    pub mlp: TwoLayerCache,
}

impl JointCache {
    pub fn out(&self) -> &[f64] {
        self.mlp.out.row(0)
    }
}

/// Embed (verb, preposition) jointly through the variant's two-layer
/// embedder. An absent preposition contributes exact zeros.
pub fn joint_verb_prep_embed(
    verb: &str,
    preposition: Option<&str>,
    params: &ModelParams,
    variant: usize,
) -> JointCache {
    let d = params.hp.d;
    let verb_id = params.vocab.id(verb);
    let prep_id = preposition.map(|p| params.vocab.id(p));
    let mut input = Mat::zeros(1, 2 * d);
    input.row_mut(0)[..d].copy_from_slice(params.embedding(verb_id));
    if let Some(pid) = prep_id {
        input.row_mut(0)[d..].copy_from_slice(params.embedding(pid));
    }
    let mlp = two_layer_forward(&input, &params.set.variants[variant - 1].joint);
    JointCache { verb_id, prep_id, input, mlp }
}

/// Intermediates of one action-module evaluation.
#[derive(Debug, Clone)]
pub struct ActionCache {
    pub variant: usize,
    pub joint_masked: JointCache,
    pub joint_seen: Vec<JointCache>,
    pub seen_scores: Vec<Vec<f64>>,
    /// Per-token stacked input (N x stacked_width).
    pub stacked: Mat,
    /// Projected input (N x d).
    pub z: Mat,
    pub attn: AttnCache,
    pub head: TwoLayerCache,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Predict the masked argument's token scores from the verb, prepositions,
/// seen entity scores and the code. Never reads the masked phrase text —
/// only its preposition.
pub fn action_forward_cached(
    eval: &ActionEvaluation,
    seen_scores: &[Vec<f64>],
    encode: &EncodeCache,
    params: &ModelParams,
) -> Result<ActionCache, ModelError> {
    if seen_scores.len() + 1 != eval.variant {
        return Err(ModelError::VariantMismatch {
            expected: eval.variant,
            got: seen_scores.len(),
        });
    }
    let d = params.hp.d;
    let variant_params = &params.set.variants[eval.variant - 1];
    let n = encode.rows().rows;

    let joint_masked =
        joint_verb_prep_embed(&eval.verb, eval.masked_arg.0.as_deref(), params, eval.variant);
    let joint_seen: Vec<JointCache> = eval
        .seen_args
        .iter()
        .map(|(prep, _)| joint_verb_prep_embed(&eval.verb, prep.as_deref(), params, eval.variant))
        .collect();

    let width = super::stacked_width(d, eval.variant);
    let mut stacked = Mat::zeros(n, width);
    for k in 0..n {
        let row = stacked.row_mut(k);
        row[..d].copy_from_slice(joint_masked.out());
        let mut off = d;
        for (jc, scores) in joint_seen.iter().zip(seen_scores) {
            row[off..off + d].copy_from_slice(jc.out());
            row[off + d] = scores[k];
            off += d + 1;
        }
        row[off..off + d].copy_from_slice(encode.rows().row(k));
    }

    let mut z = stacked.matmul(&variant_params.input_proj);
    for k in 0..n {
        let row = z.row_mut(k);
        for (v, b) in row.iter_mut().zip(&variant_params.input_bias) {
            *v += b;
        }
    }
    let attn = attn_forward(&z, &variant_params.attention);
    let head = two_layer_forward(&attn.y, &variant_params.head);
    let logits: Vec<f64> = (0..n).map(|k| head.out.row(k)[0]).collect();
    let scores: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();

    Ok(ActionCache {
        variant: eval.variant,
        joint_masked,
        joint_seen,
        seen_scores: seen_scores.to_vec(),
        stacked,
        z,
        attn,
        head,
        logits,
        scores,
    })
}

/// Convenience wrapper over [`action_forward_cached`] for inference.
pub fn action_forward(
    eval: &ActionEvaluation,
    seen_scores: &[TokenScoreVector],
    snippet: &CodeSnippet,
    params: &ModelParams,
) -> Result<TokenScoreVector, ModelError> {
    let encode = encode_code(snippet, params)?;
    let raw: Vec<Vec<f64>> = seen_scores.iter().map(|s| s.scores.clone()).collect();
    let cache = action_forward_cached(eval, &raw, &encode, params)?;
    Ok(TokenScoreVector::new(cache.scores))
}

pub(super) fn mean_phrase_count(cache: &EntityCache) -> usize {
    cache.phrase_word_ids.len()
}

#[allow(unused)]
pub(super) fn head_logit(cache: &TwoLayerCache, k: usize) -> f64 {
    cache.out.row(k)[0]
}
