//! Description-conditioned prefix generation.
//!
//! A global prompt `G` (N×d) attends over the embedded slot description `E`
//! (K×d) to give a slot prompt `S` (N×d) whose length does not depend on K.
//! Each encoder layer then owns a key generator and a value generator, each a
//! down projection to width r, ReLU, and an up projection back to d:
//!
//! ```text
//! S   = softmax((G·W_q)(E·W_k)ᵀ / sqrt(d)) · (E·W_v)
//! K_i = relu(S·Wk_down_i)·Wk_up_i
//! V_i = relu(S·Wv_down_i)·Wv_up_i
//! ```

use crate::error::{contract_err, shape_err, Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::transformer::{LayerPrefix, Model, PrompterIds};

/// Materialized key/value prefixes of one slot, one pair per encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixSet<F: Real = f32> {
    pub slot: String,
    pub layers: Vec<PrefixPair<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefixPair<F: Real = f32> {
    pub key: Tensor<F>,
    pub value: Tensor<F>,
}

fn prompter_ids<F: Real>(model: &Model<F>) -> Result<&PrompterIds> {
    model
        .ids
        .prompter
        .as_ref()
        .ok_or_else(|| contract_err!("model in {} mode has no slot-prompt parameters", model.config.mode))
}

/// Rows of the shared token-embedding table for the description tokens,
/// without position embeddings.
pub fn embed_description<F: Real>(tape: &mut Tape<F>, model: &Model<F>, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(contract_err!("slot description must contain at least one token"));
    }
    let table = tape.param(&model.params, model.ids.embedding)?;
    tape.gather_rows(table, tokens)
}

/// Cross-attention of the global prompt over the description embedding.
pub fn generate_slot_prompt<F: Real>(tape: &mut Tape<F>, model: &Model<F>, description: Var) -> Result<Var> {
    let ids = prompter_ids(model)?;
    let d = model.config.d_model;
    if tape.shape(description).len() != 2 || tape.cols(description) != d || tape.rows(description) == 0 {
        return Err(shape_err!("description embedding of shape {:?} for width {d}", tape.shape(description)));
    }
    let p = &model.params;
    let g = tape.param(p, ids.global_prompt)?;
    let (wq, wk, wv) = (tape.param(p, ids.q)?, tape.param(p, ids.k)?, tape.param(p, ids.v)?);
    let q = tape.matmul(g, wq)?;
    let k = tape.matmul(description, wk)?;
    let v = tape.matmul(description, wv)?;
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, F::one() / F::of(d as f64).sqrt())?;
    let att = tape.softmax(scores)?;
    tape.matmul(att, v)
}

/// Per-layer key and value prefixes from a slot prompt.
pub fn generate_prefixes<F: Real>(tape: &mut Tape<F>, model: &Model<F>, slot_prompt: Var) -> Result<Vec<LayerPrefix>> {
    let ids = prompter_ids(model)?;
    if ids.generators.is_empty() {
        return Err(contract_err!("model in {} mode has no prefix generators", model.config.mode));
    }
    let (n, d) = (model.config.prompt_len, model.config.d_model);
    if tape.shape(slot_prompt) != [n, d] {
        return Err(shape_err!("slot prompt of shape {:?}, expected [{n}, {d}]", tape.shape(slot_prompt)));
    }
    let p = &model.params;
    let mut out = Vec::with_capacity(ids.generators.len());
    for g in &ids.generators {
        let mut project = |down, up| -> Result<Var> {
            let (wd, wu) = (tape.param(p, down)?, tape.param(p, up)?);
            let h = tape.matmul(slot_prompt, wd)?;
            let h = tape.relu(h)?;
            tape.matmul(h, wu)
        };
        let key = project(g.key_down, g.key_up)?;
        let value = project(g.value_down, g.value_up)?;
        out.push(LayerPrefix { key, value });
    }
    Ok(out)
}

/// Contiguous column blocks of an `N×d` prefix; block `j` feeds head `j`.
pub fn split_heads<F: Real>(prefix: &Tensor<F>, n_heads: usize) -> Result<Vec<Tensor<F>>> {
    if prefix.shape().len() != 2 {
        return Err(shape_err!("prefix of shape {:?}", prefix.shape()));
    }
    let (rows, d) = (prefix.shape()[0], prefix.shape()[1]);
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible into {n_heads} heads")));
    }
    let dh = d / n_heads;
    (0..n_heads)
        .map(|j| {
            let data = (0..rows).flat_map(|r| prefix.row(r)[j * dh..(j + 1) * dh].iter().copied()).collect();
            Tensor::new([rows, dh], data)
        })
        .collect()
}

/// Mean of all key-prefix rows over every layer and prefix position.
pub fn aggregate_key_prefixes<F: Real>(set: &PrefixSet<F>) -> Result<Vec<f64>> {
    let first = set.layers.first().ok_or_else(|| contract_err!("empty prefix set for {}", set.slot))?;
    let d = first.key.cols();
    let mut acc = vec![0.0f64; d];
    let mut count = 0usize;
    for layer in &set.layers {
        for r in 0..layer.key.rows() {
            for (a, &x) in acc.iter_mut().zip(layer.key.row(r)) {
                *a += x.to_f64_lossy();
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(contract_err!("prefix set for {} has no rows", set.slot));
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    Ok(acc)
}

impl<F: Real> PrefixSet<F> {
    pub fn from_tape(tape: &Tape<F>, slot: impl Into<String>, layers: &[LayerPrefix]) -> Self {
        Self {
            slot: slot.into(),
            layers: layers
                .iter()
                .map(|l| PrefixPair { key: tape.tensor(l.key), value: tape.tensor(l.value) })
                .collect(),
        }
    }

    /// Records the prefixes as constants.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<Vec<LayerPrefix>> {
        self.layers
            .iter()
            .map(|l| Ok(LayerPrefix { key: tape.leaf(&l.key)?, value: tape.leaf(&l.value)? }))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.key.is_finite() && l.value.is_finite())
    }
}

/// Slot prompt `S` computed outside of any training tape.
pub fn slot_prompt<F: Real>(model: &Model<F>, description: &[usize]) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let e = embed_description(&mut tape, model, description)?;
    let s = generate_slot_prompt(&mut tape, model, e)?;
    Ok(tape.tensor(s))
}

/// Prefix set of one slot computed outside of any training tape.
pub fn slot_prefixes<F: Real>(model: &Model<F>, slot: &str, description: &[usize]) -> Result<PrefixSet<F>> {
    let mut tape = Tape::new();
    let e = embed_description(&mut tape, model, description)?;
    let s = generate_slot_prompt(&mut tape, model, e)?;
    let layers = generate_prefixes(&mut tape, model, s)?;
    Ok(PrefixSet::from_tape(&tape, slot, &layers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_heads_blocks() {
        let t = Tensor::<f32>::new([2, 4], vec![0., 1., 2., 3., 4., 5., 6., 7.]).unwrap();
        let parts = split_heads(&t, 2).unwrap();
        assert_eq!(parts[0].data(), &[0., 1., 4., 5.]);
        assert_eq!(parts[1].data(), &[2., 3., 6., 7.]);
        let one = split_heads(&t, 1).unwrap();
        assert_eq!(one[0], t);
        assert!(matches!(split_heads(&t, 3), Err(Error::Config(_))));
    }

    #[test]
    fn aggregate_of_constant_rows() {
        let c = Tensor::<f32>::new([2, 3], vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]).unwrap();
        let set = PrefixSet {
            slot: "x".into(),
            layers: vec![PrefixPair { key: c.clone(), value: c.clone() }, PrefixPair { key: c.clone(), value: c }],
        };
        assert_eq!(aggregate_key_prefixes(&set).unwrap(), vec![0.5, -1.0, 2.0]);
        let empty = PrefixSet::<f32> { slot: "y".into(), layers: vec![] };
        assert!(aggregate_key_prefixes(&empty).is_err());
    }
}
