use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::corpus::{DialogueExample, Turn};
use super::schema::Schema;
use super::vocab::{Vocab, NONE_VALUE, SEP};
use crate::transformer::Mode;

/// One (turn, slot) training or evaluation instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqExample {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: String,
    /// Encoder tokens.
    pub input: Vec<usize>,
    /// Value tokens without BOS/EOS; spells `none` for inactive slots.
    pub target: Vec<usize>,
}

/// `system : ... user : ...` tokens of one turn. An empty system utterance
/// is omitted together with its marker.
pub fn turn_tokens(vocab: &Vocab, turn: &Turn) -> Vec<usize> {
    let mut out = Vec::new();
    if !turn.system.trim().is_empty() {
        out.push(vocab.id("system"));
        out.push(vocab.id(":"));
        out.extend(vocab.tokenize(&turn.system));
    }
    out.push(vocab.id("user"));
    out.push(vocab.id(":"));
    out.extend(vocab.tokenize(&turn.user));
    out
}

/// Flattened context of turns `0..=t` within `budget` tokens. Whole oldest
/// turns are dropped first; if the newest turn alone is too long its
/// leading tokens are cut.
pub fn flatten_context(per_turn: &[Vec<usize>], budget: usize) -> Vec<usize> {
    let mut start = per_turn.len();
    let mut len = 0;
    while start > 0 && len + per_turn[start - 1].len() <= budget {
        start -= 1;
        len += per_turn[start].len();
    }
    if start == per_turn.len() {
        return match per_turn.last() {
            Some(last) => last[last.len().saturating_sub(budget)..].to_vec(),
            None => Vec::new(),
        };
    }
    per_turn[start..].concat()
}

/// Description token ids of every schema slot.
pub fn description_tokens(schema: &Schema, vocab: &Vocab) -> HashMap<String, Vec<usize>> {
    schema.slots.iter().map(|s| (s.id(), vocab.tokenize(&s.description))).collect()
}

/// One example per (turn, schema slot), turn-major in schema order.
pub fn build_examples(
    dialogue: &DialogueExample,
    schema: &Schema,
    mode: Mode,
    vocab: &Vocab,
    max_len: usize,
) -> Vec<Seq2SeqExample> {
    let per_turn: Vec<Vec<usize>> = dialogue.turns.iter().map(|t| turn_tokens(vocab, t)).collect();
    let descriptions: Vec<Vec<usize>> = schema.slots.iter().map(|s| vocab.tokenize(&s.description)).collect();
    let none = vocab.tokenize(NONE_VALUE);
    let mut out = Vec::with_capacity(dialogue.turns.len() * schema.slots.len());
    for (t, turn) in dialogue.turns.iter().enumerate() {
        let history = &per_turn[..=t];
        let plain = (mode != Mode::HardPrompt).then(|| flatten_context(history, max_len));
        for (slot, desc) in schema.slots.iter().zip(&descriptions) {
            let id = slot.id();
            let input = match &plain {
                Some(ctx) => ctx.clone(),
                None => {
                    let budget = max_len.saturating_sub(desc.len() + 1);
                    let mut input = desc.clone();
                    input.push(SEP);
                    input.extend(flatten_context(history, budget));
                    input
                }
            };
            let target = match turn.state.get(&id) {
                Some(v) => vocab.tokenize(v),
                None => none.clone(),
            };
            out.push(Seq2SeqExample { dialogue_id: dialogue.dialogue_id.clone(), turn: t, slot: id, input, target });
        }
    }
    out
}

/// Examples of many dialogues. `slots_for` picks the slot subset of each
/// dialogue.
pub fn build_all<'a>(
    dialogues: impl IntoIterator<Item = &'a DialogueExample>,
    slots_for: impl Fn(&DialogueExample) -> Schema,
    mode: Mode,
    vocab: &Vocab,
    max_len: usize,
) -> Vec<Seq2SeqExample> {
    dialogues
        .into_iter()
        .flat_map(|d| build_examples(d, &slots_for(d), mode, vocab, max_len))
        .collect()
}
