//! Review model: a GRU whose update and reset gates also see a visual
//! context vector, a β-gated context built from the user, the item and the
//! merged image, and a softmax over the vocabulary.
//!
//! Sequence layout for a review `w_1..w_L`: the first state is derived from
//! the initial context alone, each later state consumes the previous word
//! and the context computed from the previous state, and the end marker is
//! scored after the last word.

use crate::error::{Result, ShapeError};
use crate::numerics::{
    add_outer, axpy, dot, gemv_acc, gemv_t_acc, log_sum_exp, relu, sigmoid, softmax_into,
    DenseVector,
};
use crate::params::{ContextGateParams, GruParams, TextParams};

/// Embedding column of token `w`.
fn embed_column(gru: &GruParams, w: usize) -> Vec<f64> {
    let e = &gru.embed;
    (0..e.rows()).map(|o| e.get(o, w)).collect()
}

#[derive(Debug, Clone)]
struct StepCache {
    word: Option<usize>,
    x: Option<Vec<f64>>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    h_tilde: Vec<f64>,
    h: Vec<f64>,
}

/// One GRU transition. `word = None` drops the word-input terms and
/// `context = None` drops the visual terms.
fn step_forward(
    gru: &GruParams,
    h_prev: &[f64],
    word: Option<usize>,
    context: Option<&[f64]>,
) -> StepCache {
    let zdim = h_prev.len();
    let x = word.map(|w| embed_column(gru, w));
    let mut a_z = vec![0.0; zdim];
    let mut a_r = vec![0.0; zdim];
    let mut a_h = vec![0.0; zdim];
    if let Some(x) = &x {
        gemv_acc(&gru.w_z, x, &mut a_z);
        gemv_acc(&gru.w_r, x, &mut a_r);
        gemv_acc(&gru.w_h, x, &mut a_h);
    }
    gemv_acc(&gru.u_z, h_prev, &mut a_z);
    gemv_acc(&gru.u_r, h_prev, &mut a_r);
    if let Some(c) = context {
        gemv_acc(&gru.v_z, c, &mut a_z);
        gemv_acc(&gru.v_r, c, &mut a_r);
    }
    let z: Vec<f64> = a_z
        .iter()
        .zip(gru.b_z.as_slice())
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let r: Vec<f64> = a_r
        .iter()
        .zip(gru.b_r.as_slice())
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    gemv_acc(&gru.u_h, &gated, &mut a_h);
    let h_tilde: Vec<f64> = a_h
        .iter()
        .zip(gru.b_h.as_slice())
        .map(|(a, b)| (a + b).tanh())
        .collect();
    let h: Vec<f64> = (0..zdim)
        .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * h_tilde[i])
        .collect();
    StepCache {
        word,
        x,
        h_prev: h_prev.to_vec(),
        z,
        r,
        h_tilde,
        h,
    }
}

/// Back-propagates `d_h` through one transition. Returns the gradient on the
/// previous state and on the context (zeros if there was none).
fn step_backward(
    gru: &GruParams,
    cache: &StepCache,
    context: Option<&[f64]>,
    d_h: &[f64],
    grads: &mut GruParams,
) -> (Vec<f64>, Vec<f64>) {
    let zdim = d_h.len();
    let h_prev = &cache.h_prev;
    let mut d_h_prev: Vec<f64> = (0..zdim).map(|i| d_h[i] * cache.z[i]).collect();
    let d_a_z: Vec<f64> = (0..zdim)
        .map(|i| d_h[i] * (h_prev[i] - cache.h_tilde[i]) * cache.z[i] * (1.0 - cache.z[i]))
        .collect();
    let d_a_h: Vec<f64> = (0..zdim)
        .map(|i| d_h[i] * (1.0 - cache.z[i]) * (1.0 - cache.h_tilde[i] * cache.h_tilde[i]))
        .collect();

    let gated: Vec<f64> = cache.r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    add_outer(&mut grads.u_h, 1.0, &d_a_h, &gated);
    axpy(1.0, &d_a_h, grads.b_h.as_mut_slice());
    let mut d_gated = vec![0.0; zdim];
    gemv_t_acc(&gru.u_h, &d_a_h, &mut d_gated);
    let d_a_r: Vec<f64> = (0..zdim)
        .map(|i| d_gated[i] * h_prev[i] * cache.r[i] * (1.0 - cache.r[i]))
        .collect();
    for i in 0..zdim {
        d_h_prev[i] += d_gated[i] * cache.r[i];
    }

    add_outer(&mut grads.u_z, 1.0, &d_a_z, h_prev);
    add_outer(&mut grads.u_r, 1.0, &d_a_r, h_prev);
    axpy(1.0, &d_a_z, grads.b_z.as_mut_slice());
    axpy(1.0, &d_a_r, grads.b_r.as_mut_slice());
    gemv_t_acc(&gru.u_z, &d_a_z, &mut d_h_prev);
    gemv_t_acc(&gru.u_r, &d_a_r, &mut d_h_prev);

    let mut d_context = vec![0.0; gru.v_z.cols()];
    if let Some(c) = context {
        add_outer(&mut grads.v_z, 1.0, &d_a_z, c);
        add_outer(&mut grads.v_r, 1.0, &d_a_r, c);
        gemv_t_acc(&gru.v_z, &d_a_z, &mut d_context);
        gemv_t_acc(&gru.v_r, &d_a_r, &mut d_context);
    }

    if let (Some(w), Some(x)) = (cache.word, &cache.x) {
        add_outer(&mut grads.w_z, 1.0, &d_a_z, x);
        add_outer(&mut grads.w_r, 1.0, &d_a_r, x);
        add_outer(&mut grads.w_h, 1.0, &d_a_h, x);
        let mut d_x = vec![0.0; x.len()];
        gemv_t_acc(&gru.w_z, &d_a_z, &mut d_x);
        gemv_t_acc(&gru.w_r, &d_a_r, &mut d_x);
        gemv_t_acc(&gru.w_h, &d_a_h, &mut d_x);
        let cols = grads.embed.cols();
        let e = grads.embed.as_mut_slice();
        for (o, dx) in d_x.iter().enumerate() {
            e[o * cols + w] += dx;
        }
    }
    (d_h_prev, d_context)
}

fn check_step(gru: &GruParams, h_prev: &DenseVector, word: usize) -> Result<(), ShapeError> {
    if h_prev.dim() != gru.u_z.rows() {
        return Err(ShapeError::new(
            "gru_step",
            format!("hidden [{}]", h_prev.dim()),
            format!("Z = {}", gru.u_z.rows()),
        ));
    }
    if word >= gru.embed.cols() {
        return Err(ShapeError::new(
            "gru_step",
            format!("token {word}"),
            format!("vocabulary of {}", gru.embed.cols()),
        ));
    }
    Ok(())
}

/// Plain GRU transition (no visual input).
pub fn gru_step_standard(
    h_prev: &DenseVector,
    word_prev: usize,
    gru: &GruParams,
) -> Result<DenseVector, ShapeError> {
    check_step(gru, h_prev, word_prev)?;
    Ok(step_forward(gru, h_prev.as_slice(), Some(word_prev), None)
        .h
        .into())
}

/// GRU transition with the context injected into the update and reset gates.
pub fn gru_step_visual(
    h_prev: &DenseVector,
    word_prev: usize,
    context: &DenseVector,
    gru: &GruParams,
) -> Result<DenseVector, ShapeError> {
    check_step(gru, h_prev, word_prev)?;
    check_context(gru, context)?;
    Ok(step_forward(
        gru,
        h_prev.as_slice(),
        Some(word_prev),
        Some(context.as_slice()),
    )
    .h
    .into())
}

fn check_context(gru: &GruParams, context: &DenseVector) -> Result<(), ShapeError> {
    if context.dim() != gru.v_z.cols() {
        return Err(ShapeError::new(
            "gru context",
            format!("[{}]", context.dim()),
            format!("D = {}", gru.v_z.cols()),
        ));
    }
    Ok(())
}

/// First hidden state: zero previous state and no word input, context only.
pub fn initial_state(context: &DenseVector, gru: &GruParams) -> Result<DenseVector, ShapeError> {
    check_context(gru, context)?;
    let zero = vec![0.0; gru.u_z.rows()];
    Ok(step_forward(gru, &zero, None, Some(context.as_slice())).h.into())
}

/// `softmax(W_out·h + b_out)`.
pub fn word_distribution(h: &DenseVector, gru: &GruParams) -> Result<DenseVector, ShapeError> {
    if h.dim() != gru.w_out.cols() {
        return Err(ShapeError::new(
            "word_distribution",
            format!("hidden [{}]", h.dim()),
            format!("W_out {}x{}", gru.w_out.rows(), gru.w_out.cols()),
        ));
    }
    Ok(output_probs(gru, h.as_slice()).into())
}

fn output_logits(gru: &GruParams, h: &[f64]) -> Vec<f64> {
    let mut logits = gru.b_out.as_slice().to_vec();
    gemv_acc(&gru.w_out, h, &mut logits);
    logits
}

fn output_probs(gru: &GruParams, h: &[f64]) -> Vec<f64> {
    let logits = output_logits(gru, h);
    let mut probs = vec![0.0; logits.len()];
    softmax_into(&logits, &mut probs);
    probs
}

/// The embedding-side and image-side terms of the context gate, which do not
/// change along a sequence.
#[derive(Debug, Clone)]
struct ContextTerms {
    /// `W_c^uᵀ p + W_c^iᵀ q`.
    embed: Vec<f64>,
    /// `W_c^imgᵀ IMAGE`.
    image: Vec<f64>,
}

impl ContextTerms {
    fn new(gate: &ContextGateParams, user: &[f64], item: &[f64], image: &[f64]) -> Self {
        let d = gate.bias.dim();
        let mut embed = vec![0.0; d];
        gemv_t_acc(&gate.w_user, user, &mut embed);
        gemv_t_acc(&gate.w_item, item, &mut embed);
        let mut img = vec![0.0; d];
        gemv_t_acc(&gate.w_image, image, &mut img);
        Self { embed, image: img }
    }
}

#[derive(Debug, Clone)]
struct ContextCache {
    /// `None` for the fixed ½ weighting of the initial context.
    beta: Option<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
}

fn context_initial(gate: &ContextGateParams, terms: &ContextTerms) -> ContextCache {
    let pre: Vec<f64> = (0..terms.embed.len())
        .map(|i| 0.5 * (terms.embed[i] + terms.image[i]) + gate.bias.get(i))
        .collect();
    let out = pre.iter().map(|&x| relu(x)).collect();
    ContextCache {
        beta: None,
        pre,
        out,
    }
}

fn context_step(gate: &ContextGateParams, terms: &ContextTerms, h: &[f64]) -> ContextCache {
    let beta = sigmoid(dot(gate.w_hidden.as_slice(), h));
    let pre: Vec<f64> = (0..terms.embed.len())
        .map(|i| beta * terms.embed[i] + (1.0 - beta) * terms.image[i] + gate.bias.get(i))
        .collect();
    let out = pre.iter().map(|&x| relu(x)).collect();
    ContextCache {
        beta: Some(beta),
        pre,
        out,
    }
}

/// Gradients of the context gate output flowing back to its inputs.
#[derive(Debug, Clone, Default)]
struct ContextInputGrads {
    embed: Vec<f64>,
    image: Vec<f64>,
}

/// Back-propagates through one context evaluation. For the β form, the
/// gradient on `h` is added into `d_h`.
fn context_backward(
    gate: &ContextGateParams,
    terms: &ContextTerms,
    cache: &ContextCache,
    h: Option<&[f64]>,
    d_out: &[f64],
    grads: &mut ContextGateParams,
    acc: &mut ContextInputGrads,
    d_h: Option<&mut [f64]>,
) {
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&cache.pre)
        .map(|(g, &p)| if p > 0.0 { *g } else { 0.0 })
        .collect();
    axpy(1.0, &d_pre, grads.bias.as_mut_slice());
    match cache.beta {
        None => {
            axpy(0.5, &d_pre, &mut acc.embed);
            axpy(0.5, &d_pre, &mut acc.image);
        }
        Some(beta) => {
            axpy(beta, &d_pre, &mut acc.embed);
            axpy(1.0 - beta, &d_pre, &mut acc.image);
            let d_beta: f64 = (0..d_pre.len())
                .map(|i| d_pre[i] * (terms.embed[i] - terms.image[i]))
                .sum();
            let d_logit = d_beta * beta * (1.0 - beta);
            let h = h.expect("β context needs the hidden state");
            axpy(d_logit, h, grads.w_hidden.as_mut_slice());
            if let Some(d_h) = d_h {
                axpy(d_logit, gate.w_hidden.as_slice(), d_h);
            }
        }
    }
}

fn check_context_inputs(
    gate: &ContextGateParams,
    user: &DenseVector,
    item: &DenseVector,
    image: &DenseVector,
) -> Result<(), ShapeError> {
    let k = gate.w_user.rows();
    let d = gate.bias.dim();
    if user.dim() != k || item.dim() != k || image.dim() != d {
        return Err(ShapeError::new(
            "context gate",
            format!("p [{}], q [{}], image [{}]", user.dim(), item.dim(), image.dim()),
            format!("K = {k}, D = {d}"),
        ));
    }
    Ok(())
}

/// Initial context with the embedding and image terms weighted equally.
pub fn context_vector_initial(
    user: &DenseVector,
    item: &DenseVector,
    image: &DenseVector,
    gate: &ContextGateParams,
) -> Result<DenseVector, ShapeError> {
    check_context_inputs(gate, user, item, image)?;
    let terms = ContextTerms::new(gate, user.as_slice(), item.as_slice(), image.as_slice());
    Ok(context_initial(gate, &terms).out.into())
}

/// β-gated context for a later step; β = σ(w_c^h · h).
pub fn context_vector_step(
    user: &DenseVector,
    item: &DenseVector,
    image: &DenseVector,
    h: &DenseVector,
    gate: &ContextGateParams,
) -> Result<DenseVector, ShapeError> {
    check_context_inputs(gate, user, item, image)?;
    if h.dim() != gate.w_hidden.dim() {
        return Err(ShapeError::new(
            "context_vector_step",
            format!("hidden [{}]", h.dim()),
            format!("w_hidden [{}]", gate.w_hidden.dim()),
        ));
    }
    let terms = ContextTerms::new(gate, user.as_slice(), item.as_slice(), image.as_slice());
    Ok(context_step(gate, &terms, h.as_slice()).out.into())
}

/// The scalar β gate for hidden state `h`.
pub fn context_gate_beta(h: &DenseVector, gate: &ContextGateParams) -> f64 {
    sigmoid(dot(gate.w_hidden.as_slice(), h.as_slice()))
}

/// Inputs shared by every step of one review.
#[derive(Debug, Clone, Copy)]
pub struct ReviewInputs<'a> {
    pub user: &'a [f64],
    pub item: &'a [f64],
    pub image: &'a [f64],
}

/// Log-likelihood of one review and, optionally, gradients of `weight ×` it.
#[derive(Debug, Clone)]
pub struct ReviewPass {
    pub log_likelihood: f64,
    pub d_user: Vec<f64>,
    pub d_item: Vec<f64>,
    pub d_image: Vec<f64>,
}

/// Teacher-forced pass over `tokens` followed by `end_token`. When `grads` is
/// given, gradients of `weight · log p(review)` are accumulated into it and
/// returned for the user, item and image inputs.
pub fn review_pass(
    tokens: &[usize],
    end_token: usize,
    inputs: ReviewInputs<'_>,
    text: &TextParams,
    weight: f64,
    grads: Option<&mut TextParams>,
) -> ReviewPass {
    let gru = &text.gru;
    let gate = &text.gate;
    let zdim = gru.u_z.rows();
    let terms = ContextTerms::new(gate, inputs.user, inputs.item, inputs.image);
    let targets: Vec<usize> = tokens.iter().copied().chain([end_token]).collect();
    let steps = targets.len();

    let ctx0 = context_initial(gate, &terms);
    let zero = vec![0.0; zdim];
    let mut caches = Vec::with_capacity(steps);
    let mut contexts = Vec::with_capacity(steps);
    caches.push(step_forward(gru, &zero, None, Some(&ctx0.out)));
    contexts.push(ctx0);
    let mut ll = 0.0;
    let mut probs_per_step = Vec::with_capacity(steps);
    for s in 0..steps {
        if s > 0 {
            let h_prev = &caches[s - 1].h;
            let ctx = context_step(gate, &terms, h_prev);
            let cache = step_forward(gru, h_prev, Some(tokens[s - 1]), Some(&ctx.out));
            contexts.push(ctx);
            caches.push(cache);
        }
        let logits = output_logits(gru, &caches[s].h);
        ll += logits[targets[s]] - log_sum_exp(&logits);
        if grads.is_some() {
            let mut p = vec![0.0; logits.len()];
            softmax_into(&logits, &mut p);
            probs_per_step.push(p);
        }
    }

    let k = inputs.user.len();
    let d = inputs.image.len();
    let mut pass = ReviewPass {
        log_likelihood: ll,
        d_user: vec![0.0; k],
        d_item: vec![0.0; k],
        d_image: vec![0.0; d],
    };
    let Some(grads) = grads else {
        return pass;
    };

    let mut acc = ContextInputGrads {
        embed: vec![0.0; d],
        image: vec![0.0; d],
    };
    let mut carry = vec![0.0; zdim];
    for s in (0..steps).rev() {
        let mut d_logits = probs_per_step[s].clone();
        d_logits.iter_mut().for_each(|p| *p *= -weight);
        d_logits[targets[s]] += weight;
        let h = &caches[s].h;
        add_outer(&mut grads.gru.w_out, 1.0, &d_logits, h);
        axpy(1.0, &d_logits, grads.gru.b_out.as_mut_slice());
        let mut d_h = carry;
        gemv_t_acc(&gru.w_out, &d_logits, &mut d_h);

        let (mut d_h_prev, d_ctx) =
            step_backward(gru, &caches[s], Some(&contexts[s].out), &d_h, &mut grads.gru);
        if s > 0 {
            let h_prev = &caches[s - 1].h;
            context_backward(
                gate,
                &terms,
                &contexts[s],
                Some(h_prev),
                &d_ctx,
                &mut grads.gate,
                &mut acc,
                Some(&mut d_h_prev),
            );
            carry = d_h_prev;
        } else {
            context_backward(
                gate,
                &terms,
                &contexts[0],
                None,
                &d_ctx,
                &mut grads.gate,
                &mut acc,
                None,
            );
            carry = Vec::new();
        }
    }
    let _ = carry;

    // Embedding-side and image-side terms are linear maps of p, q and IMAGE.
    add_outer(&mut grads.gate.w_user, 1.0, inputs.user, &acc.embed);
    add_outer(&mut grads.gate.w_item, 1.0, inputs.item, &acc.embed);
    add_outer(&mut grads.gate.w_image, 1.0, inputs.image, &acc.image);
    gemv_acc(&gate.w_user, &acc.embed, &mut pass.d_user);
    gemv_acc(&gate.w_item, &acc.embed, &mut pass.d_item);
    gemv_acc(&gate.w_image, &acc.image, &mut pass.d_image);
    pass
}

/// Every context-gate pre-activation of a teacher-forced pass, in step order.
/// Used to keep finite-difference fixtures away from ReLU kinks.
pub fn context_preactivations(
    tokens: &[usize],
    inputs: ReviewInputs<'_>,
    text: &TextParams,
) -> Vec<f64> {
    let gru = &text.gru;
    let gate = &text.gate;
    let terms = ContextTerms::new(gate, inputs.user, inputs.item, inputs.image);
    let ctx = context_initial(gate, &terms);
    let mut out = ctx.pre.clone();
    let mut h = step_forward(gru, &vec![0.0; gru.u_z.rows()], None, Some(&ctx.out)).h;
    for &w in tokens {
        let ctx = context_step(gate, &terms, &h);
        out.extend_from_slice(&ctx.pre);
        h = step_forward(gru, &h, Some(w), Some(&ctx.out)).h;
    }
    out
}

/// Gradients of a review's log-likelihood.
#[derive(Debug, Clone)]
pub struct ReviewGradients {
    pub text: TextParams,
    pub user: DenseVector,
    pub item: DenseVector,
    pub image: DenseVector,
}

/// Teacher-forced log-likelihood of `tokens` plus the end marker, with gradients.
pub fn review_log_likelihood(
    tokens: &[usize],
    end_token: usize,
    user: &DenseVector,
    item: &DenseVector,
    image: &DenseVector,
    text: &TextParams,
) -> Result<(f64, ReviewGradients), ShapeError> {
    check_context_inputs(&text.gate, user, item, image)?;
    let nw = text.gru.embed.cols();
    if tokens.is_empty() {
        return Err(ShapeError::new("review_log_likelihood", "empty review", ">= 1 token"));
    }
    if let Some(&t) = tokens.iter().chain([&end_token]).find(|&&t| t >= nw) {
        return Err(ShapeError::new(
            "review_log_likelihood",
            format!("token {t}"),
            format!("vocabulary of {nw}"),
        ));
    }
    let mut grads = zeros_like_text(text);
    let pass = review_pass(
        tokens,
        end_token,
        ReviewInputs {
            user: user.as_slice(),
            item: item.as_slice(),
            image: image.as_slice(),
        },
        text,
        1.0,
        Some(&mut grads),
    );
    Ok((
        pass.log_likelihood,
        ReviewGradients {
            text: grads,
            user: pass.d_user.into(),
            item: pass.d_item.into(),
            image: pass.d_image.into(),
        },
    ))
}

pub(crate) fn zeros_like_text(text: &TextParams) -> TextParams {
    let mut t = text.clone();
    for m in [
        &mut t.gru.w_z,
        &mut t.gru.w_r,
        &mut t.gru.w_h,
        &mut t.gru.u_z,
        &mut t.gru.u_r,
        &mut t.gru.u_h,
        &mut t.gru.v_z,
        &mut t.gru.v_r,
        &mut t.gru.embed,
        &mut t.gru.w_out,
        &mut t.gate.w_user,
        &mut t.gate.w_item,
        &mut t.gate.w_image,
    ] {
        m.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    }
    for v in [
        &mut t.gru.b_z,
        &mut t.gru.b_r,
        &mut t.gru.b_h,
        &mut t.gru.b_out,
        &mut t.gate.w_hidden,
        &mut t.gate.bias,
    ] {
        v.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
    }
    t
}

/// Greedy decoding: the most probable word at each step (lowest index on
/// ties) is emitted and fed back, until the end marker or `max_len` words.
pub fn greedy_decode(
    inputs: ReviewInputs<'_>,
    text: &TextParams,
    end_token: usize,
    max_len: usize,
) -> Vec<usize> {
    let gru = &text.gru;
    let gate = &text.gate;
    let zdim = gru.u_z.rows();
    let terms = ContextTerms::new(gate, inputs.user, inputs.item, inputs.image);
    let ctx0 = context_initial(gate, &terms);
    let mut h = step_forward(gru, &vec![0.0; zdim], None, Some(&ctx0.out)).h;
    let mut out = Vec::new();
    while out.len() < max_len {
        let logits = output_logits(gru, &h);
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        if best == end_token {
            break;
        }
        out.push(best);
        if out.len() == max_len {
            break;
        }
        let ctx = context_step(gate, &terms, &h);
        h = step_forward(gru, &h, Some(best), Some(&ctx.out)).h;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{InitScheme, ModelDims, ModelParams, Variant};

    fn text_params(z: usize, o: usize, nw: usize, k: usize, d: usize, seed: u64, zero: bool) -> TextParams {
        let dims = ModelDims {
            users: 1,
            items: 1,
            k,
            d,
            regions: 1,
            z,
            vocab: nw,
            o,
        };
        let p = if zero {
            ModelParams::zeros(Variant::ReVecf, dims)
        } else {
            ModelParams::init(Variant::ReVecf, dims, InitScheme::Scaled, seed).unwrap()
        };
        p.text.unwrap()
    }

    #[test]
    fn zero_params_halve_the_state() {
        let t = text_params(3, 2, 5, 2, 2, 0, true);
        let v = DenseVector::from_vec(vec![1.0, -2.0, 0.5]);
        let h = gru_step_standard(&v, 1, &t.gru).unwrap();
        assert_eq!(h.as_slice(), &[0.5, -1.0, 0.25]);
        let h = gru_step_visual(&v, 1, &DenseVector::from_vec(vec![3.0, 4.0]), &t.gru).unwrap();
        assert_eq!(h.as_slice(), &[0.5, -1.0, 0.25]);
        let h = gru_step_standard(&DenseVector::zeros(3), 0, &t.gru).unwrap();
        assert_eq!(h.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn zero_context_matches_standard_step_bitwise() {
        let t = text_params(4, 3, 6, 2, 5, 11, false);
        let h = DenseVector::from_vec(vec![0.1, -0.4, 0.7, 0.2]);
        let a = gru_step_standard(&h, 2, &t.gru).unwrap();
        let b = gru_step_visual(&h, 2, &DenseVector::zeros(5), &t.gru).unwrap();
        let bits = |v: &DenseVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn initial_state_hand_unrolled() {
        // Z = 2, D = 2: h1 = (1 - σ(V_z c + b_z)) ∘ tanh(b_h).
        let mut t = text_params(2, 1, 4, 1, 2, 0, true);
        t.gru.v_z = crate::numerics::DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap();
        t.gru.b_z = DenseVector::from_vec(vec![0.5, 0.0]);
        t.gru.b_h = DenseVector::from_vec(vec![0.3, -0.2]);
        // The reset gate and the word terms must not matter at t = 1.
        t.gru.v_r = crate::numerics::DenseMatrix::from_rows(&[&[9.0, 9.0], &[9.0, 9.0]]).unwrap();
        t.gru.w_z.as_mut_slice().iter_mut().for_each(|v| *v = 5.0);
        let c = DenseVector::from_vec(vec![2.0, 1.0]);
        let h1 = initial_state(&c, &t.gru).unwrap();
        let z0 = sigmoid(2.0 + 0.5);
        let z1 = sigmoid(-1.0);
        let expect = [(1.0 - z0) * 0.3f64.tanh(), (1.0 - z1) * (-0.2f64).tanh()];
        assert!((h1.get(0) - expect[0]).abs() < 1e-15);
        assert!((h1.get(1) - expect[1]).abs() < 1e-15);

        let zero = text_params(2, 1, 4, 1, 2, 0, true);
        assert_eq!(initial_state(&c, &zero.gru).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(initial_state(&DenseVector::zeros(2), &zero.gru).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn word_distribution_examples() {
        let t = text_params(3, 2, 5, 2, 2, 0, true);
        let p = word_distribution(&DenseVector::from_vec(vec![1.0, 2.0, 3.0]), &t.gru).unwrap();
        assert!(p.as_slice().iter().all(|&x| (x - 0.2).abs() < 1e-15));

        let mut t = text_params(3, 2, 5, 2, 2, 4, false);
        let h = DenseVector::from_vec(vec![0.3, -0.1, 0.9]);
        let a = word_distribution(&h, &t.gru).unwrap();
        assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        t.gru.b_out.as_mut_slice().iter_mut().for_each(|b| *b += 17.0);
        let b = word_distribution(&h, &t.gru).unwrap();
        let argmax = |v: &DenseVector| crate::attention::rank_desc(v.as_slice())[0];
        assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn context_examples() {
        let t = text_params(2, 1, 4, 2, 2, 0, true);
        let z = DenseVector::zeros(2);
        assert_eq!(
            context_vector_initial(&z, &z, &z, &t.gate).unwrap().as_slice(),
            &[0.0, 0.0]
        );

        // Identity maps: each term contributes v, so z0 = relu(1.5 v + b_c).
        let mut t = t;
        t.gate.w_user = crate::numerics::DenseMatrix::identity(2);
        t.gate.w_item = crate::numerics::DenseMatrix::identity(2);
        t.gate.w_image = crate::numerics::DenseMatrix::identity(2);
        t.gate.bias = DenseVector::from_vec(vec![0.25, 0.0]);
        let v = DenseVector::from_vec(vec![1.0, -2.0]);
        let z0 = context_vector_initial(&v, &v, &v, &t.gate).unwrap();
        assert_eq!(z0.as_slice(), &[1.75, 0.0]);

        // w_c^h = 0 gives β = ½ exactly.
        let h = DenseVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(context_gate_beta(&h, &t.gate), 0.5);
        let zt = context_vector_step(&v, &v, &v, &h, &t.gate).unwrap();
        assert_eq!(zt.as_slice(), z0.as_slice());
    }

    #[test]
    fn uniform_output_likelihood() {
        let t = text_params(3, 2, 7, 2, 2, 0, true);
        let inputs = ReviewInputs {
            user: &[0.0, 0.0],
            item: &[0.0, 0.0],
            image: &[0.0, 0.0],
        };
        let pass = review_pass(&[2], 5, inputs, &t, 1.0, None);
        assert!((pass.log_likelihood + 2.0 * 7f64.ln()).abs() < 1e-12);
        let tokens = [0, 1, 2, 3, 4];
        let pass = review_pass(&tokens, 5, inputs, &t, 1.0, None);
        assert!((pass.log_likelihood + 6.0 * 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_decode_ties_and_length() {
        let t = text_params(3, 2, 6, 2, 2, 0, true);
        let inputs = ReviewInputs {
            user: &[0.0, 0.0],
            item: &[0.0, 0.0],
            image: &[0.0, 0.0],
        };
        assert_eq!(greedy_decode(inputs, &t, 4, 3), vec![0, 0, 0]);
        assert_eq!(greedy_decode(inputs, &t, 4, 1), vec![0]);
        let mut t = t;
        t.gru.b_out.as_mut_slice()[4] = 1.0;
        assert!(greedy_decode(inputs, &t, 4, 10).is_empty());
    }
}
