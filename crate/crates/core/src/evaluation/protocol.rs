use serde::{Deserialize, Serialize};

use super::metrics::{metrics_report, MetricsReport, PredictionRecord};
use super::predict::Predictor;
use crate::data::{build_all, description_tokens, Corpus, DialogueExample, Schema, Seq2SeqExample, Vocab};
use crate::error::{Error, Result};
use crate::training::{train, LossRecord, SlotScope, TrainConfig};
use crate::transformer::{Model, ModelConfig};

/// Leave-one-domain-out partition of a corpus.
#[derive(Clone, Debug)]
pub struct ZeroShotSplit<'a> {
    pub target: String,
    /// Dialogues not tagged with the target domain.
    pub train: Vec<&'a DialogueExample>,
    /// Every slot outside the target domain.
    pub train_schema: Schema,
    /// Dialogues tagged with the target domain.
    pub test: Vec<&'a DialogueExample>,
    pub test_schema: Schema,
}

pub fn zero_shot_split<'a>(corpus: &'a Corpus, target: &str) -> Result<ZeroShotSplit<'a>> {
    let domains = corpus.schema.domains();
    if !domains.iter().any(|d| d == target) {
        return Err(Error::Protocol(format!("target domain {target} is not in the schema")));
    }
    if domains.len() < 2 {
        return Err(Error::Protocol("zero-shot protocol needs at least 2 domains".into()));
    }
    let (test, train): (Vec<_>, Vec<_>) = corpus.dialogues.iter().partition(|d| d.has_domain(target));
    if test.is_empty() {
        return Err(Error::Protocol(format!("no test dialogues for target domain {target}")));
    }
    Ok(ZeroShotSplit {
        target: target.to_string(),
        train,
        train_schema: corpus.schema.without_domain(target),
        test,
        test_schema: corpus.schema.restrict(&[target.to_string()]),
    })
}

impl ZeroShotSplit<'_> {
    /// Vocabulary of the training dialogues and every description.
    pub fn vocab(&self, full_schema: &Schema) -> Vocab {
        let owned: Vec<DialogueExample> = self.train.iter().map(|d| (*d).clone()).collect();
        Vocab::build(&owned, full_schema)
    }

    /// Training slots contributed by one dialogue under `scope`.
    pub fn train_slots(&self, dialogue: &DialogueExample, scope: SlotScope) -> Schema {
        match scope {
            SlotScope::DialogueDomains => self.train_schema.restrict(&dialogue.domains),
            SlotScope::AllDomains => self.train_schema.clone(),
        }
    }

    pub fn train_examples(&self, cfg: &ModelConfig, train_cfg: &TrainConfig, vocab: &Vocab) -> Vec<Seq2SeqExample> {
        build_all(
            self.train.iter().copied(),
            |d| self.train_slots(d, train_cfg.slot_scope),
            cfg.mode,
            vocab,
            train_cfg.max_len,
        )
    }
}

/// Trained model and held-out evaluation of one zero-shot run.
#[derive(Clone, Debug)]
pub struct ZeroShotRun {
    pub model: Model<f32>,
    pub vocab: Vocab,
    pub log: Vec<LossRecord>,
    pub records: Vec<PredictionRecord>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSummary {
    pub target: String,
    pub mode: String,
    pub train_examples: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub report: MetricsReport,
}

impl ZeroShotRun {
    pub fn summary(&self, target: &str, train_examples: usize) -> ZeroShotSummary {
        ZeroShotSummary {
            target: target.to_string(),
            mode: self.model.config.mode.to_string(),
            train_examples,
            steps: self.log.len(),
            final_loss: self.log.last().map(|r| r.loss),
            report: self.report.clone(),
        }
    }
}

/// Trains on every domain but `target` and evaluates on the target domain's
/// dialogues over its slots only. `model_config.vocab_size` is replaced by
/// the size of the vocabulary built from the training split.
pub fn zero_shot_protocol(
    corpus: &Corpus,
    target: &str,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    model_seed: u64,
    on_step: impl FnMut(&LossRecord),
) -> Result<ZeroShotRun> {
    let split = zero_shot_split(corpus, target)?;
    let vocab = split.vocab(&corpus.schema);
    let mut config = model_config.clone();
    config.vocab_size = vocab.len();
    let mut model = Model::init(config, model_seed)?;
    let examples = split.train_examples(&model.config, train_config, &vocab);
    let descriptions = description_tokens(&corpus.schema, &vocab);
    let log = train(&mut model, &examples, &descriptions, train_config, on_step)?;
    let predictor = Predictor::new(&model, &vocab, &corpus.schema, train_config.max_len)?;
    let records = predictor.predict_all(&split.test, |_| split.test_schema.clone())?;
    let report = metrics_report(&records)?;
    Ok(ZeroShotRun { model, vocab, log, records, report })
}
