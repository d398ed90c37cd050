//! Mode dispatch: how a slot conditions the encoder, and the per-example
//! seq2seq loss built on top of it.

use std::collections::HashMap;

use crate::data::{Seq2SeqExample, BOS, EOS, PAD};
use crate::error::{contract_err, Result};
use crate::prompter::{embed_description, generate_prefixes, generate_slot_prompt, PrefixSet};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::transformer::{
    decoder_forward, embed, encode_embedded, greedy_decode, EncoderOutput, LayerPrefix, Mode, Model, Stack,
};

/// Slot conditioning recorded on a tape.
#[derive(Clone, Debug)]
pub enum Conditioning {
    /// Per-layer prefixes (prompter mode).
    Prefixes(Vec<LayerPrefix>),
    /// Slot prompt prepended to the input embeddings (prompt-tuning mode).
    Prompt(Var),
    /// Description already inside the input tokens (hard-prompt mode).
    Plain,
}

/// Conditioning materialized outside a tape, reusable across examples.
#[derive(Clone, Debug, PartialEq)]
pub enum CachedConditioning<F: Real = f32> {
    Prefixes(PrefixSet<F>),
    Prompt(Tensor<F>),
    Plain,
}

/// Builds the conditioning for one slot description on `tape`.
pub fn condition<F: Real>(tape: &mut Tape<F>, model: &Model<F>, description: &[usize]) -> Result<Conditioning> {
    match model.config.mode {
        Mode::HardPrompt => Ok(Conditioning::Plain),
        Mode::PromptTuning => {
            let e = embed_description(tape, model, description)?;
            Ok(Conditioning::Prompt(generate_slot_prompt(tape, model, e)?))
        }
        Mode::Prompter => {
            let e = embed_description(tape, model, description)?;
            let s = generate_slot_prompt(tape, model, e)?;
            Ok(Conditioning::Prefixes(generate_prefixes(tape, model, s)?))
        }
    }
}

impl<F: Real> CachedConditioning<F> {
    /// Computes the conditioning of `slot` without gradient tracking.
    pub fn compute(model: &Model<F>, slot: &str, description: &[usize]) -> Result<Self> {
        let mut tape = Tape::new();
        Ok(match condition(&mut tape, model, description)? {
            Conditioning::Plain => Self::Plain,
            Conditioning::Prompt(s) => Self::Prompt(tape.tensor(s)),
            Conditioning::Prefixes(layers) => Self::Prefixes(PrefixSet::from_tape(&tape, slot, &layers)),
        })
    }

    /// Records the cached tensors on `tape` as constants.
    pub fn bind(&self, tape: &mut Tape<F>) -> Result<Conditioning> {
        Ok(match self {
            Self::Plain => Conditioning::Plain,
            Self::Prompt(s) => Conditioning::Prompt(tape.leaf(s)?),
            Self::Prefixes(set) => Conditioning::Prefixes(set.bind(tape)?),
        })
    }
}

/// Encodes `tokens` under the given conditioning.
pub fn encode<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    tokens: &[usize],
    conditioning: &Conditioning,
) -> Result<EncoderOutput> {
    if tokens.is_empty() {
        return Err(contract_err!("encoder input is empty"));
    }
    let x = embed(tape, model, tokens, Stack::Encoder)?;
    match conditioning {
        Conditioning::Plain => encode_embedded(tape, model, x, None),
        Conditioning::Prefixes(p) => encode_embedded(tape, model, x, Some(p)),
        Conditioning::Prompt(s) => {
            let x = tape.concat_rows(&[*s, x])?;
            encode_embedded(tape, model, x, None)
        }
    }
}

/// Token-mean cross-entropy of one example under teacher forcing.
pub fn example_loss<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    example: &Seq2SeqExample,
    conditioning: &Conditioning,
) -> Result<Var> {
    let enc = encode(tape, model, &example.input, conditioning)?;
    let mut dec_in = Vec::with_capacity(example.target.len() + 1);
    dec_in.push(BOS);
    dec_in.extend_from_slice(&example.target);
    let mut labels = example.target.clone();
    labels.push(EOS);
    let logits = decoder_forward(tape, model, &dec_in, enc.states)?;
    tape.cross_entropy(logits, &labels, PAD)
}

/// Mean example loss over a batch. Examples of the same slot share one
/// conditioning subgraph.
pub fn batch_loss<F: Real>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    batch: &[&Seq2SeqExample],
    descriptions: &HashMap<String, Vec<usize>>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(contract_err!("empty batch"));
    }
    let mut cache: HashMap<&str, Conditioning> = HashMap::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        if !cache.contains_key(ex.slot.as_str()) {
            let desc = descriptions
                .get(&ex.slot)
                .ok_or_else(|| contract_err!("no description for slot {}", ex.slot))?;
            let c = condition(tape, model, desc)?;
            cache.insert(ex.slot.as_str(), c);
        }
        losses.push(example_loss(tape, model, ex, &cache[ex.slot.as_str()])?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    tape.scale(total, F::one() / F::of(losses.len() as f64))
}

/// Greedy value prediction for one encoder input.
pub fn predict<F: Real>(
    model: &Model<F>,
    tokens: &[usize],
    conditioning: &CachedConditioning<F>,
    max_steps: usize,
) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let c = conditioning.bind(&mut tape)?;
    let enc = encode(&mut tape, model, tokens, &c)?;
    let states = tape.tensor(enc.states);
    greedy_decode(model, &states, BOS, EOS, max_steps)
}
