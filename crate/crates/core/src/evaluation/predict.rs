use std::collections::HashMap;

use rayon::prelude::*;

use super::metrics::PredictionRecord;
use crate::data::{build_examples, normalize_value, DialogueExample, Schema, Vocab, NONE_VALUE};
use crate::error::{contract_err, Error, Result};
use crate::pipeline::{predict, CachedConditioning};
use crate::transformer::Model;

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "PROMPTER_THREADS";

/// Read-only inference over a trained model. Slot conditioning is computed
/// once per slot and reused across turns and dialogues.
pub struct Predictor<'a> {
    pub model: &'a Model<f32>,
    pub vocab: &'a Vocab,
    pub schema: &'a Schema,
    /// Encoder token budget, as in training.
    pub max_len: usize,
    /// Maximum generated value length.
    pub max_decode: usize,
    cache: Option<HashMap<String, CachedConditioning<f32>>>,
}

impl<'a> Predictor<'a> {
    /// Precomputes the conditioning of every schema slot.
    pub fn new(model: &'a Model<f32>, vocab: &'a Vocab, schema: &'a Schema, max_len: usize) -> Result<Self> {
        let mut p = Self::uncached(model, vocab, schema, max_len);
        let cache = schema
            .slots
            .iter()
            .map(|s| Ok((s.id(), p.conditioning(&s.id())?)))
            .collect::<Result<HashMap<_, _>>>()?;
        p.cache = Some(cache);
        Ok(p)
    }

    /// Recomputes conditioning for every example.
    pub fn uncached(model: &'a Model<f32>, vocab: &'a Vocab, schema: &'a Schema, max_len: usize) -> Self {
        Self { model, vocab, schema, max_len, max_decode: 16, cache: None }
    }

    fn conditioning(&self, slot: &str) -> Result<CachedConditioning<f32>> {
        let s = self.schema.get(slot).ok_or_else(|| contract_err!("slot {slot} is not in the schema"))?;
        CachedConditioning::compute(self.model, slot, &self.vocab.tokenize(&s.description))
    }

    /// One record per (turn, slot of `slots`), in turn-major schema order.
    pub fn predict_state(&self, dialogue: &DialogueExample, slots: &Schema) -> Result<Vec<PredictionRecord>> {
        for s in &slots.slots {
            if self.schema.get(&s.id()).is_none() {
                return Err(contract_err!("slot {} is not in the schema", s.id()));
            }
        }
        let examples = build_examples(dialogue, slots, self.model.config.mode, self.vocab, self.max_len);
        let mut out = Vec::with_capacity(examples.len());
        for ex in examples {
            let fresh;
            let cond = match &self.cache {
                Some(c) => &c[&ex.slot],
                None => {
                    fresh = self.conditioning(&ex.slot)?;
                    &fresh
                }
            };
            let ids = predict(self.model, &ex.input, cond, self.max_decode)?;
            let gold = dialogue.turns[ex.turn].state.get(&ex.slot).map_or(NONE_VALUE.to_string(), |v| normalize_value(v));
            out.push(PredictionRecord {
                dialogue_id: ex.dialogue_id,
                turn: ex.turn,
                slot: ex.slot,
                pred: normalize_value(&self.vocab.detokenize(&ids)),
                gold,
            });
        }
        Ok(out)
    }

    /// Predicts many dialogues in parallel. Records come back sorted by
    /// (dialogue id, turn, slot).
    pub fn predict_all<'d>(
        &self,
        dialogues: &[&'d DialogueExample],
        slots_for: impl Fn(&DialogueExample) -> Schema + Sync,
    ) -> Result<Vec<PredictionRecord>> {
        let run = || -> Result<Vec<PredictionRecord>> {
            let parts = dialogues
                .par_iter()
                .map(|d| self.predict_state(d, &slots_for(d)))
                .collect::<Result<Vec<_>>>()?;
            Ok(parts.into_iter().flatten().collect())
        };
        let mut records = thread_pool()?.install(run)?;
        records.sort_by(|a, b| (&a.dialogue_id, a.turn, &a.slot).cmp(&(&b.dialogue_id, b.turn, &b.slot)));
        Ok(records)
    }
}

/// Pool sized by `PROMPTER_THREADS`, defaulting to the available cores.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
