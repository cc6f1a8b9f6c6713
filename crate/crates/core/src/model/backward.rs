//! Backward passes mirroring the forwards in `forward.rs`. Each function
//! accumulates parameter gradients into a [`ModelGrads`] and input gradients
//! into caller-provided buffers, so one encoded snippet can serve several
//! module evaluations before a single encoder backward.

use super::forward::{ActionCache, AttnCache, EncodeCache, EntityCache, JointCache, TwoLayerCache};
use super::linalg::{axpy, softmax_rows_backward, Mat};
use super::{AttentionParams, ModelGrads, ModelParams, TwoLayer};

fn add_col_sums(m: &Mat, out: &mut [f64]) {
    for i in 0..m.rows {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
}

/// Backward through `y = x + attn(x)`; accumulates into `gp` and adds the
/// input gradient into `dx`.
pub(super) fn attn_backward(
    x: &Mat,
    cache: &AttnCache,
    p: &AttentionParams,
    dy: &Mat,
    gp: &mut AttentionParams,
    dx: &mut Mat,
) {
    let d = p.wq.cols;
    let scale = 1.0 / (d as f64).sqrt();

    // residual
    dx.add_assign(dy);

    // y = x + context * Wo
    cache.context.t_matmul_acc(dy, &mut gp.wo);
    let dcontext = dy.matmul_t(&p.wo);

    // context = probs * V
    let dprobs = dcontext.matmul_t(&cache.v);
    let mut dv = Mat::zeros(cache.v.rows, cache.v.cols);
    cache.probs.t_matmul_acc(&dcontext, &mut dv);

    // probs = softmax(scale * Q K^T)
    let mut dscores = softmax_rows_backward(&cache.probs, &dprobs);
    for s in dscores.data.iter_mut() {
        *s *= scale;
    }

    let dq = dscores.matmul(&cache.k);
    let mut dk = Mat::zeros(cache.k.rows, cache.k.cols);
    dscores.t_matmul_acc(&cache.q, &mut dk);

    // Q = x Wq etc.
    dx.add_assign(&dq.matmul_t(&p.wq));
    dx.add_assign(&dk.matmul_t(&p.wk));
    dx.add_assign(&dv.matmul_t(&p.wv));
    x.t_matmul_acc(&dq, &mut gp.wq);
    x.t_matmul_acc(&dk, &mut gp.wk);
    x.t_matmul_acc(&dv, &mut gp.wv);
}

/// Backward through `out = tanh(x W1 + b1) W2 + b2`.
pub(super) fn two_layer_backward(
    x: &Mat,
    cache: &TwoLayerCache,
    p: &TwoLayer,
    dout: &Mat,
    gp: &mut TwoLayer,
    dx: &mut Mat,
) {
    cache.hidden.t_matmul_acc(dout, &mut gp.w2);
    add_col_sums(dout, &mut gp.b2);

    let mut dhidden = dout.matmul_t(&p.w2);
    for i in 0..dhidden.rows {
        let h = cache.hidden.row(i);
        let row = dhidden.row_mut(i);
        for (g, hv) in row.iter_mut().zip(h) {
            *g *= 1.0 - hv * hv;
        }
    }
    x.t_matmul_acc(&dhidden, &mut gp.w1);
    add_col_sums(&dhidden, &mut gp.b1);
    dx.add_assign(&dhidden.matmul_t(&p.w1));
}

/// Backward through the code encoder given the gradient of its output rows;
/// scatters embedding gradients by token id.
pub(super) fn encode_backward(
    cache: &EncodeCache,
    params: &ModelParams,
    dy: &Mat,
    grads: &mut ModelGrads,
) {
    let mut dx = Mat::zeros(cache.x.rows, cache.x.cols);
    attn_backward(&cache.x, &cache.attn, &params.set.encoder, dy, &mut grads.encoder, &mut dx);
    for (k, &id) in cache.token_ids.iter().enumerate() {
        axpy(1.0, dx.row(k), grads.embeddings.row_mut(id));
    }
}

/// Backward through the entity module given per-token logit gradients.
/// Encoder-row gradients accumulate into `dy_acc`; phrase-word embedding
/// and head gradients go into `grads`.
pub(super) fn entity_backward(
    cache: &EntityCache,
    params: &ModelParams,
    dlogits: &[f64],
    grads: &mut ModelGrads,
    dy_acc: &mut Mat,
) {
    let n = cache.z.rows;
    let mut dout = Mat::zeros(n, 1);
    for k in 0..n {
        dout.row_mut(k)[0] = dlogits[k];
    }
    let mut dz = Mat::zeros(n, cache.z.cols);
    two_layer_backward(&cache.z, &cache.head, &params.set.entity_head, &dout, &mut grads.entity_head, &mut dz);

    // z = y + mean(phrase embeddings)
    dy_acc.add_assign(&dz);
    let count = super::forward::mean_phrase_count(cache);
    if count > 0 {
        let mut dmean = vec![0.0; dz.cols];
        add_col_sums(&dz, &mut dmean);
        let inv = 1.0 / count as f64;
        for &id in &cache.phrase_word_ids {
            axpy(inv, &dmean, grads.embeddings.row_mut(id));
        }
    }
}

fn joint_backward(
    cache: &JointCache,
    params: &ModelParams,
    variant: usize,
    djoint: &[f64],
    grads: &mut ModelGrads,
) {
    let d = params.hp.d;
    let mut dout = Mat::zeros(1, d);
    dout.row_mut(0).copy_from_slice(djoint);
    let mut dinput = Mat::zeros(1, 2 * d);
    two_layer_backward(
        &cache.input,
        &cache.mlp,
        &params.set.variants[variant - 1].joint,
        &dout,
        &mut grads.variants[variant - 1].joint,
        &mut dinput,
    );
    axpy(1.0, &dinput.row(0)[..d], grads.embeddings.row_mut(cache.verb_id));
    if let Some(pid) = cache.prep_id {
        axpy(1.0, &dinput.row(0)[d..], grads.embeddings.row_mut(pid));
    }
}

/// Backward through one action evaluation given per-token logit gradients.
/// Returns the gradient with respect to each seen entity score vector;
/// encoder-row gradients accumulate into `dy_acc`.
pub(super) fn action_backward(
    cache: &ActionCache,
    params: &ModelParams,
    dlogits: &[f64],
    grads: &mut ModelGrads,
    dy_acc: &mut Mat,
) -> Vec<Vec<f64>> {
    let d = params.hp.d;
    let variant = cache.variant;
    let vp = &params.set.variants[variant - 1];
    let n = cache.stacked.rows;

    let mut dout = Mat::zeros(n, 1);
    for k in 0..n {
        dout.row_mut(k)[0] = dlogits[k];
    }
    let mut d_attn_y = Mat::zeros(n, d);
    two_layer_backward(
        &cache.attn.y,
        &cache.head,
        &vp.head,
        &dout,
        &mut grads.variants[variant - 1].head,
        &mut d_attn_y,
    );

    let mut dz = Mat::zeros(n, d);
    attn_backward(
        &cache.z,
        &cache.attn,
        &vp.attention,
        &d_attn_y,
        &mut grads.variants[variant - 1].attention,
        &mut dz,
    );

    // z = stacked * input_proj + input_bias
    cache.stacked.t_matmul_acc(&dz, &mut grads.variants[variant - 1].input_proj);
    add_col_sums(&dz, &mut grads.variants[variant - 1].input_bias);
    let dstacked = dz.matmul_t(&vp.input_proj);

    // unstack
    let mut dj_masked = vec![0.0; d];
    let mut dj_seen = vec![vec![0.0; d]; cache.joint_seen.len()];
    let mut dseen_scores = vec![vec![0.0; n]; cache.joint_seen.len()];
    for k in 0..n {
        let row = dstacked.row(k);
        axpy(1.0, &row[..d], &mut dj_masked);
        let mut off = d;
        for i in 0..cache.joint_seen.len() {
            axpy(1.0, &row[off..off + d], &mut dj_seen[i]);
            dseen_scores[i][k] = row[off + d];
            off += d + 1;
        }
        axpy(1.0, &row[off..off + d], dy_acc.row_mut(k));
    }

    joint_backward(&cache.joint_masked, params, variant, &dj_masked, grads);
    for (jc, dj) in cache.joint_seen.iter().zip(&dj_seen) {
        joint_backward(jc, params, variant, dj, grads);
    }
    dseen_scores
}
