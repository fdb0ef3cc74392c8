//! The two model views over a sentence pair.
//!
//! Siamese view: each sentence runs through the same encoder, is pooled to a
//! fixed-size embedding, and the pair is classified from
//! `softmax(Wᵀ[u, v, |u−v|])` — or scored by `cosine(u, v)` in regression
//! mode. Cross view: the pair is packed into one `[CLS] Q [SEP] T [SEP]`
//! sequence and classified from the final [CLS] state via `softmax(Oᵀz)`.

use rand_chacha::ChaCha8Rng;

use crate::data::{CLS_ID, SEP_ID};
use crate::encoder::{encode, pool, EncoderConfig, EncoderVars, PoolingStrategy};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

/// Projection for the siamese classification head; input is exactly `3d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseHead {
    /// `[3d × n]`, applied as `Wᵀx`.
    pub w: Tensor,
}

impl SiameseHead {
    pub fn init(hidden_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(SiameseHead {
            w: Tensor::randn(vec![3 * hidden_dim, num_classes], 0.0, 0.02, rng)?,
        })
    }
}

/// Projection for the cross-encoder head; input is exactly `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossHead {
    /// `[d × n]`, applied as `Oᵀz`.
    pub o: Tensor,
}

impl CrossHead {
    pub fn init(hidden_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(CrossHead {
            o: Tensor::randn(vec![hidden_dim, num_classes], 0.0, 0.02, rng)?,
        })
    }
}

/// Packed `[CLS] Q [SEP] T [SEP]` input for the cross view. Segment ids are 0
/// through the first [SEP] inclusive and 1 afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEncoding {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
}

/// Packs a sentence pair, truncating the longer sentence first until the
/// sequence (three specials included) fits in `max_len`.
pub fn build_cross_input(
    q_tokens: &[usize],
    t_tokens: &[usize],
    max_len: usize,
) -> Result<PairEncoding> {
    let mut q = q_tokens.to_vec();
    let mut t = t_tokens.to_vec();
    if q.is_empty() || t.is_empty() {
        return Err(Error::InvalidArgument(
            "build_cross_input: empty sentence".into(),
        ));
    }
    while q.len() + t.len() + 3 > max_len {
        if q.len() > t.len() {
            q.pop();
        } else {
            t.pop();
        }
        if q.is_empty() || t.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "build_cross_input: a sentence was truncated to empty fitting max_len {max_len}"
            )));
        }
    }
    let mut token_ids = Vec::with_capacity(q.len() + t.len() + 3);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&q);
    token_ids.push(SEP_ID);
    let first_segment = token_ids.len();
    token_ids.extend_from_slice(&t);
    token_ids.push(SEP_ID);
    let mut segment_ids = vec![0; token_ids.len()];
    for seg in segment_ids.iter_mut().skip(first_segment) {
        *seg = 1;
    }
    let attention_mask = vec![true; token_ids.len()];
    Ok(PairEncoding {
        token_ids,
        segment_ids,
        attention_mask,
    })
}

/// `[CLS] s [SEP]` wrapping for a single sentence in the siamese view.
pub fn sentence_input(tokens: &[usize], max_len: usize) -> Result<PairEncoding> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("sentence_input: empty sentence".into()));
    }
    let keep = tokens.len().min(max_len.saturating_sub(2));
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "sentence_input: no room for content at max_len {max_len}"
        )));
    }
    let mut token_ids = Vec::with_capacity(keep + 2);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&tokens[..keep]);
    token_ids.push(SEP_ID);
    let len = token_ids.len();
    Ok(PairEncoding {
        token_ids,
        segment_ids: vec![0; len],
        attention_mask: vec![true; len],
    })
}

/// Cosine similarity with an explicit error on zero vectors.
pub fn cosine_score(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_score",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numerical("cosine_score of a zero vector".into()));
    }
    Ok(dot / (nu * nv))
}

/// Cosine similarity as a tape node over two `[d]` vectors.
pub fn cosine_on_tape(tape: &mut Tape, u: TensorId, v: TensorId) -> Result<TensorId> {
    let uu = tape.mul(u, u)?;
    let vv = tape.mul(v, v)?;
    let nu_sq = tape.sum(uu)?;
    let nv_sq = tape.sum(vv)?;
    if tape.data(nu_sq)[0] == 0.0 || tape.data(nv_sq)[0] == 0.0 {
        return Err(Error::Numerical("cosine of a zero vector".into()));
    }
    let uv = tape.mul(u, v)?;
    let dot = tape.sum(uv)?;
    let nu = tape.sqrt(nu_sq)?;
    let nv = tape.sqrt(nv_sq)?;
    let denom = tape.mul(nu, nv)?;
    tape.div(dot, denom)
}

/// Encodes one sentence and pools it to its production-time embedding.
#[allow(clippy::too_many_arguments)]
pub fn siamese_embed(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    pooling: PoolingStrategy,
    tokens: &[usize],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let input = sentence_input(tokens, config.max_seq_len)?;
    let hidden = encode(
        tape,
        config,
        vars,
        &input.token_ids,
        &input.segment_ids,
        &input.attention_mask,
        training,
        rng,
    )?;
    pool(tape, hidden, &input.attention_mask, pooling)
}

/// Class logits of the siamese view: `Wᵀ[u, v, |u−v|]`. Both sentences pass
/// through the same encoder parameters.
#[allow(clippy::too_many_arguments)]
pub fn siamese_logits(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    head_w: TensorId,
    pooling: PoolingStrategy,
    a_tokens: &[usize],
    b_tokens: &[usize],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let u = siamese_embed(tape, config, vars, pooling, a_tokens, training, rng)?;
    let v = siamese_embed(tape, config, vars, pooling, b_tokens, training, rng)?;
    let diff = tape.sub(u, v)?;
    let gap = tape.abs(diff)?;
    let features = tape.concat(&[u, v, gap], 0)?;
    let d3 = tape.data(features).len();
    let row = tape.reshape(features, vec![1, d3])?;
    let logits = tape.matmul(row, head_w)?;
    let n = tape.shape(logits)[1];
    tape.reshape(logits, vec![n])
}

/// Probability distribution of the siamese view.
#[allow(clippy::too_many_arguments)]
pub fn siamese_forward(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    head_w: TensorId,
    pooling: PoolingStrategy,
    a_tokens: &[usize],
    b_tokens: &[usize],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let logits = siamese_logits(
        tape, config, vars, head_w, pooling, a_tokens, b_tokens, training, rng,
    )?;
    tape.softmax(logits, 0)
}

/// Cosine prediction of the siamese view for regression training.
#[allow(clippy::too_many_arguments)]
pub fn siamese_cosine(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    pooling: PoolingStrategy,
    a_tokens: &[usize],
    b_tokens: &[usize],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let u = siamese_embed(tape, config, vars, pooling, a_tokens, training, rng)?;
    let v = siamese_embed(tape, config, vars, pooling, b_tokens, training, rng)?;
    cosine_on_tape(tape, u, v)
}

/// Class logits of the cross view: `Oᵀz` at the final [CLS] state.
pub fn cross_logits(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    head_o: TensorId,
    pair: &PairEncoding,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let hidden = encode(
        tape,
        config,
        vars,
        &pair.token_ids,
        &pair.segment_ids,
        &pair.attention_mask,
        training,
        rng,
    )?;
    let cls = tape.row(hidden, 0)?;
    let d = tape.data(cls).len();
    let row = tape.reshape(cls, vec![1, d])?;
    let logits = tape.matmul(row, head_o)?;
    let n = tape.shape(logits)[1];
    tape.reshape(logits, vec![n])
}

/// Probability distribution of the cross view.
pub fn cross_forward(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    head_o: TensorId,
    pair: &PairEncoding,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let logits = cross_logits(tape, config, vars, head_o, pair, training, rng)?;
    tape.softmax(logits, 0)
}

/// Scalar score of the cross view for regression: `tanh(Oᵀz)` in (−1, 1),
/// matching the normalized gold range.
pub fn cross_regression_score(
    tape: &mut Tape,
    config: &EncoderConfig,
    vars: &EncoderVars,
    head_o: TensorId,
    pair: &PairEncoding,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId> {
    let raw = cross_logits(tape, config, vars, head_o, pair, training, rng)?;
    if tape.data(raw).len() != 1 {
        return Err(Error::Config(
            "regression cross head must project to a single output".into(),
        ));
    }
    tape.tanh(raw)
}

/// Maps a gold score in [0, 5] onto the cosine range [−1, 1]: `2·(s/5) − 1`.
pub fn score_to_cosine_range(score: f64) -> f64 {
    2.0 * (score / 5.0) - 1.0
}
