//! Forward passes recorded on a [`Tape`].

use super::model::{AttnIds, FfnIds, Model};
use crate::error::{contract_err, shape_err, Error, Result};
use crate::tensor::{ParamId, Real, Tape, Var};

/// Key and value prefixes for one encoder layer, as tape nodes of shape `N×d`.
#[derive(Clone, Copy, Debug)]
pub struct LayerPrefix {
    pub key: Var,
    pub value: Var,
}

/// Output of one attention block together with its per-head weights.
#[derive(Clone, Debug)]
pub struct Attention {
    pub output: Var,
    /// `heads` matrices of shape `T×(N+T)` (or `T×S` for cross-attention).
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Final normalized states, `T×d`.
    pub states: Var,
    /// Residual stream after each layer.
    pub layer_outputs: Vec<Var>,
    /// Self-attention weights of each layer.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stack {
    Encoder,
    Decoder,
}

/// Token embedding plus learned absolute position (clipped at `max_len - 1`).
pub fn embed<F: Real>(tape: &mut Tape<F>, model: &Model<F>, tokens: &[usize], stack: Stack) -> Result<Var> {
    let table = tape.param(&model.params, model.ids.embedding)?;
    let tok = tape.gather_rows(table, tokens)?;
    let pos_id = match stack {
        Stack::Encoder => model.ids.enc_position,
        Stack::Decoder => model.ids.dec_position,
    };
    let pos_table = tape.param(&model.params, pos_id)?;
    let last = model.config.max_len - 1;
    let positions: Vec<usize> = (0..tokens.len()).map(|i| i.min(last)).collect();
    let pos = tape.gather_rows(pos_table, &positions)?;
    tape.add(tok, pos)
}

fn norm<F: Real>(tape: &mut Tape<F>, model: &Model<F>, x: Var, gain: ParamId) -> Result<Var> {
    let g = tape.param(&model.params, gain)?;
    tape.rms_norm(x, g, F::of(model.config.norm_eps))
}

/// Multi-head attention of `queries` over `keys_from`, with optional prefixes
/// prepended to the projected keys and values.
fn multi_head<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    w: AttnIds,
    queries: Var,
    keys_from: Var,
    prefix: Option<LayerPrefix>,
    causal: bool,
) -> Result<Attention> {
    let p = &model.params;
    let (d, heads, dh) = (model.config.d_model, model.config.n_heads, model.config.head_dim());
    let (wq, wk, wv, wo) = (tape.param(p, w.q)?, tape.param(p, w.k)?, tape.param(p, w.v)?, tape.param(p, w.o)?);
    let q = tape.matmul(queries, wq)?;
    let mut k = tape.matmul(keys_from, wk)?;
    let mut v = tape.matmul(keys_from, wv)?;
    if let Some(LayerPrefix { key, value }) = prefix {
        for pv in [key, value] {
            if tape.shape(pv).len() != 2 || tape.cols(pv) != d {
                return Err(shape_err!("prefix of shape {:?} for width {d}", tape.shape(pv)));
            }
        }
        if tape.rows(key) != tape.rows(value) {
            return Err(shape_err!("key prefix has {} rows, value prefix {}", tape.rows(key), tape.rows(value)));
        }
        k = tape.concat_rows(&[key, k])?;
        v = tape.concat_rows(&[value, v])?;
    }
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for j in 0..heads {
        let (qj, kj, vj) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, j * dh, dh)?, tape.slice_cols(k, j * dh, dh)?, tape.slice_cols(v, j * dh, dh)?)
        };
        let scores = tape.matmul_bt(qj, kj)?;
        let scores = tape.scale(scores, scale)?;
        let att = if causal { tape.softmax_causal(scores, 0)? } else { tape.softmax(scores)? };
        outs.push(tape.matmul(att, vj)?);
        weights.push(att);
    }
    let merged = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let output = tape.matmul(merged, wo)?;
    Ok(Attention { output, weights })
}

/// Encoder self-attention of layer `layer` on already-normalized input `h`.
///
/// Per head, queries attend over `[K_i ; h·W_k]` and mix `[V_i ; h·W_v]`;
/// without prefixes this is plain multi-head self-attention.
pub fn prefixed_self_attention<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    layer: usize,
    h: Var,
    prefix: Option<LayerPrefix>,
) -> Result<Attention> {
    let ids = model
        .ids
        .enc_layers
        .get(layer)
        .ok_or_else(|| Error::Index(format!("encoder layer {layer} of {}", model.config.enc_layers)))?;
    if tape.rows(h) == 0 {
        return Err(contract_err!("self-attention over an empty sequence"));
    }
    if tape.cols(h) != model.config.d_model {
        return Err(shape_err!("hidden width {} for model width {}", tape.cols(h), model.config.d_model));
    }
    multi_head(tape, model, ids.attn, h, h, prefix, false)
}

fn feed_forward<F: Real>(tape: &mut Tape<F>, model: &Model<F>, w: FfnIds, x: Var) -> Result<Var> {
    let wi = tape.param(&model.params, w.wi)?;
    let wo = tape.param(&model.params, w.wo)?;
    let h = tape.matmul(x, wi)?;
    let h = tape.relu(h)?;
    tape.matmul(h, wo)
}

/// Runs the encoder stack over an input sequence that is already embedded.
pub fn encode_embedded<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    input: Var,
    prefixes: Option<&[LayerPrefix]>,
) -> Result<EncoderOutput> {
    if let Some(p) = prefixes {
        if p.len() != model.config.enc_layers {
            return Err(contract_err!(
                "prefix set has {} layers, encoder has {}",
                p.len(),
                model.config.enc_layers
            ));
        }
    }
    let mut h = input;
    let mut layer_outputs = Vec::with_capacity(model.config.enc_layers);
    let mut attention = Vec::with_capacity(model.config.enc_layers);
    for (i, ids) in model.ids.enc_layers.iter().enumerate() {
        let x = norm(tape, model, h, ids.attn_norm)?;
        let att = prefixed_self_attention(tape, model, i, x, prefixes.map(|p| p[i]))?;
        h = tape.add(h, att.output)?;
        let x = norm(tape, model, h, ids.ff_norm)?;
        let f = feed_forward(tape, model, ids.ff, x)?;
        h = tape.add(h, f)?;
        layer_outputs.push(h);
        attention.push(att.weights);
    }
    let states = norm(tape, model, h, model.ids.enc_final_norm)?;
    Ok(EncoderOutput { states, layer_outputs, attention })
}

/// Embeds `tokens` and encodes them, injecting layer-`i` prefixes into layer `i`.
pub fn encoder_forward<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    tokens: &[usize],
    prefixes: Option<&[LayerPrefix]>,
) -> Result<EncoderOutput> {
    let x = embed(tape, model, tokens, Stack::Encoder)?;
    encode_embedded(tape, model, x, prefixes)
}

/// Teacher-forced decoder pass returning `T_dec×V` logits.
pub fn decoder_forward<F: Real>(tape: &mut Tape<F>, model: &Model<F>, targets: &[usize], enc_states: Var) -> Result<Var> {
    if targets.is_empty() {
        return Err(contract_err!("decoder needs at least one input token"));
    }
    if tape.cols(enc_states) != model.config.d_model || tape.rows(enc_states) == 0 {
        return Err(shape_err!("encoder states of shape {:?}", tape.shape(enc_states)));
    }
    let mut h = embed(tape, model, targets, Stack::Decoder)?;
    for ids in &model.ids.dec_layers {
        let x = norm(tape, model, h, ids.self_attn_norm)?;
        let a = multi_head(tape, model, ids.self_attn, x, x, None, true)?;
        h = tape.add(h, a.output)?;
        let x = norm(tape, model, h, ids.cross_attn_norm)?;
        let a = multi_head(tape, model, ids.cross_attn, x, enc_states, None, false)?;
        h = tape.add(h, a.output)?;
        let x = norm(tape, model, h, ids.ff_norm)?;
        let f = feed_forward(tape, model, ids.ff, x)?;
        h = tape.add(h, f)?;
    }
    let h = norm(tape, model, h, model.ids.dec_final_norm)?;
    let table = tape.param(&model.params, model.ids.embedding)?;
    let logits = tape.matmul_bt(h, table)?;
    // Tied output projection is rescaled by 1/sqrt(d).
    tape.scale(logits, F::one() / F::of(model.config.d_model as f64).sqrt())
}
