use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::freeze::{resolve_freeze, FreezeSchedule};
use crate::data::Seq2SeqExample;
use crate::error::{contract_err, Error, Result};
use crate::pipeline::batch_loss;
use crate::tensor::{AdamW, AdamWConfig, Tape};
use crate::transformer::Model;

/// Which slots each training dialogue contributes examples for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotScope {
    /// Slots of the domains the dialogue is tagged with.
    #[default]
    DialogueDomains,
    /// Every slot of every training domain.
    AllDomains,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub freeze: FreezeSchedule,
    /// Encoder token budget per example.
    pub max_len: usize,
    pub slot_scope: SlotScope,
    /// Stop once an optimizer step's loss falls below this value.
    pub stop_below_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            batch_size: 8,
            accumulation: 8,
            learning_rate: adam.lr,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            max_steps: 2000,
            seed: 0,
            freeze: FreezeSchedule::default(),
            max_len: 256,
            slot_scope: SlotScope::default(),
            stop_below_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.accumulation == 0 || self.max_len == 0 {
            return bad("batch_size, accumulation and max_len must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("weight_decay must be non-negative and betas in [0, 1)");
        }
        if self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    /// Mean example loss over the accumulation window.
    pub loss: f64,
    pub trainable: usize,
}

/// Epoch-wise seeded shuffling.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self { order: (0..n).collect(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Trains `model` in place. `on_step` sees every loss record as it is made.
pub fn train(
    model: &mut Model<f32>,
    examples: &[Seq2SeqExample],
    descriptions: &HashMap<String, Vec<usize>>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if cfg.max_steps == 0 {
        return Ok(Vec::new());
    }
    if examples.is_empty() {
        return Err(contract_err!("no training examples"));
    }
    let mut sampler = Sampler::new(examples.len(), cfg.seed);
    let mut opt = AdamW::new(cfg.adamw(), &model.params);
    let inv_acc = 1.0 / cfg.accumulation as f32;
    let mut log = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let mask = resolve_freeze(&cfg.freeze, model, step)?;
        model.params.set_trainable(&mask);
        model.params.zero_grad();
        let mut total = 0.0f64;
        for _ in 0..cfg.accumulation {
            let batch: Vec<&Seq2SeqExample> = sampler.take(cfg.batch_size).into_iter().map(|i| &examples[i]).collect();
            let mut tape = Tape::new();
            let abort = |e: Error| match e {
                Error::NonFinite(detail) => Error::NumericAbort { step, detail },
                other => other,
            };
            let loss = batch_loss(&mut tape, model, &batch, descriptions).map_err(abort)?;
            total += f64::from(tape.item(loss));
            let scaled = tape.scale(loss, inv_acc).map_err(abort)?;
            tape.backward_into(scaled, &mut model.params)?;
        }
        let loss = total / cfg.accumulation as f64;
        if let Some((_, name, _)) =
            model.params.iter().find(|(_, _, t)| t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())))
        {
            return Err(Error::NumericAbort { step, detail: format!("non-finite gradient for {name}") });
        }
        opt.step(&mut model.params, &mask)?;
        let record = LossRecord { step, loss, trainable: mask.iter().filter(|m| **m).count() };
        on_step(&record);
        log.push(record);
        if cfg.stop_below_loss.is_some_and(|t| loss < t) {
            break;
        }
    }
    model.params.zero_grad();
    Ok(log)
}
