//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prompter_core::analysis::{export_similarity_csv, export_similarity_json, prefix_similarity_matrix};
use prompter_core::data::{description_tokens, generate_synthetic_corpus, Corpus, Schema, Seq2SeqExample, CORPUS_FILE, SCHEMA_FILE};
use prompter_core::evaluation::{metrics_report, records_to_jsonl, zero_shot_split, Predictor};
use prompter_core::io::write_atomic;
use prompter_core::pipeline::{condition, example_loss};
use prompter_core::tensor::{grad_check, BackwardFault, GradCheckOptions};
use prompter_core::training::{load_checkpoint, save_checkpoint, train, Checkpoint, SlotScope};
use prompter_core::transformer::{Model, ModelConfig};
use prompter_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{Recorder, CONFIG_FILE, MANIFEST_FILE};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

/// A check ran to completion and did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(rec: &mut Recorder, path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    rec.output(path);
    Ok(())
}

fn finish(rec: Recorder, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    rec.finish(cfg).save(&path)
}

fn load_corpus(rec: &mut Recorder, dir: &Path) -> Result<Corpus> {
    rec.input(&dir.join(SCHEMA_FILE))?;
    rec.input(&dir.join(CORPUS_FILE))?;
    Ok(Corpus::load(dir)?)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut rec = Recorder::start("gen-data");
    let corpus = generate_synthetic_corpus(&cfg.gen, cfg.seed)?;
    create_dir(out)?;
    corpus.save(out)?;
    rec.output(&out.join(SCHEMA_FILE));
    rec.output(&out.join(CORPUS_FILE));
    write(&mut rec, &out.join(CONFIG_FILE), &cfg.to_flat_json())?;
    eprintln!(
        "wrote {} dialogues over {} domains, none fraction {:.3}",
        corpus.dialogues.len(),
        corpus.schema.domains().len(),
        corpus.none_fraction()
    );
    finish(rec, cfg, out)
}

pub fn train_cmd(cfg: &mut RunConfig, data: &Path, target: &str, out: &Path, log_every: usize) -> Result<()> {
    let mut rec = Recorder::start("train");
    let corpus = load_corpus(&mut rec, data)?;
    let split = zero_shot_split(&corpus, target)?;
    let vocab = split.vocab(&corpus.schema);
    cfg.model.vocab_size = vocab.len();
    let mut model = Model::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let examples: Vec<Seq2SeqExample> = split.train_examples(&model.config, &cfg.train, &vocab);
    let descriptions = description_tokens(&corpus.schema, &vocab);
    eprintln!(
        "training {} on {} examples from {} dialogues, target domain {target}",
        model.config.mode,
        examples.len(),
        split.train.len()
    );
    let log = train(&mut model, &examples, &descriptions, &cfg.train, |r| {
        if log_every > 0 && r.step % log_every == 0 {
            eprintln!("step {:>6} loss {:.4} trainable {}", r.step, r.loss, r.trainable);
        }
    })?;
    create_dir(out)?;
    let mut csv = String::from("step,loss,trainable\n");
    for r in &log {
        csv.push_str(&format!("{},{},{}\n", r.step, r.loss, r.trainable));
    }
    write(&mut rec, &out.join(LOSS_FILE), &csv)?;
    let metadata = json!({
        "mode": model.config.mode.as_str(),
        "target_domain": target,
        "seed": cfg.seed,
        "max_len": cfg.train.max_len,
        "steps": log.len(),
        "train_examples": examples.len(),
        "final_loss": log.last().map(|r| r.loss),
    });
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &model, Some(&vocab), metadata)?;
    rec.output(&ckpt);
    write(&mut rec, &out.join(CONFIG_FILE), &cfg.to_flat_json())?;
    if let Some(last) = log.last() {
        eprintln!("finished after {} steps, final loss {:.4}", log.len(), last.loss);
    }
    finish(rec, cfg, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    /// Target-domain dialogues over target-domain slots.
    HeldOut,
    /// Training dialogues over the slots they were trained on.
    Train,
}

fn open_checkpoint(rec: &mut Recorder, path: &Path) -> Result<Checkpoint> {
    rec.input(path)?;
    let ckpt = load_checkpoint(path)?;
    if ckpt.vocab.is_none() {
        bail!(Error::Config(format!("checkpoint {} carries no vocabulary", path.display())));
    }
    Ok(ckpt)
}

pub fn eval_cmd(cfg: &mut RunConfig, checkpoint: &Path, data: &Path, target: &str, split_kind: EvalSplit, out: &Path) -> Result<()> {
    let mut rec = Recorder::start("eval");
    let ckpt = open_checkpoint(&mut rec, checkpoint)?;
    let vocab = ckpt.vocab.as_ref().expect("checked");
    if let Some(trained) = ckpt.metadata.get("target_domain").and_then(|v| v.as_str()) {
        if trained != target {
            bail!(Error::Config(format!("checkpoint was trained with target domain {trained}, not {target}")));
        }
    }
    let corpus = load_corpus(&mut rec, data)?;
    let split = zero_shot_split(&corpus, target)?;
    let max_len = ckpt.metadata.get("max_len").and_then(|v| v.as_u64()).map_or(cfg.train.max_len, |v| v as usize);
    cfg.model = ckpt.model.config.clone();
    cfg.train.max_len = max_len;
    let mut predictor = Predictor::new(&ckpt.model, vocab, &corpus.schema, max_len)?;
    predictor.max_decode = cfg.eval.max_decode;
    let records = match split_kind {
        EvalSplit::HeldOut => predictor.predict_all(&split.test, |_| split.test_schema.clone())?,
        EvalSplit::Train => predictor.predict_all(&split.train, |d| split.train_slots(d, SlotScope::DialogueDomains))?,
    };
    let report = metrics_report(&records)?;
    create_dir(out)?;
    write(&mut rec, &out.join(RECORDS_FILE), &records_to_jsonl(&records))?;
    write(&mut rec, &out.join(METRICS_FILE), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let pct = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{:.2}", 100.0 * v));
    println!(
        "jga {:.2} mp {} op {} none_acc {} over {} records",
        100.0 * report.jga,
        pct(report.mp),
        pct(report.op),
        pct(report.none_accuracy),
        records.len()
    );
    finish(rec, cfg, out)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

/// `<out>` with its extension replaced.
fn sibling(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

pub fn analyze_cmd(
    cfg: &mut RunConfig,
    checkpoint: &Path,
    schema_path: &Path,
    targets: &str,
    sources: Option<&str>,
    out: &Path,
) -> Result<()> {
    let mut rec = Recorder::start("analyze");
    let ckpt = open_checkpoint(&mut rec, checkpoint)?;
    rec.input(schema_path)?;
    let schema = Schema::load(schema_path)?;
    let targets = split_list(targets);
    let sources = match sources {
        Some(s) => split_list(s),
        None => {
            let domains: BTreeSet<&str> = targets.iter().filter_map(|t| schema.get(t)).map(|s| s.domain.as_str()).collect();
            schema.slots.iter().filter(|s| !domains.contains(s.domain.as_str())).map(|s| s.id()).collect()
        }
    };
    for id in targets.iter().chain(&sources) {
        if schema.get(id).is_none() {
            bail!(Error::Config(format!("unknown slot id {id}")));
        }
    }
    if targets.is_empty() || sources.is_empty() {
        bail!(Error::Config("need at least one target and one source slot".into()));
    }
    cfg.model = ckpt.model.config.clone();
    let matrix = prefix_similarity_matrix(&ckpt.model, &schema, ckpt.vocab.as_ref().expect("checked"), &targets, &sources)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    export_similarity_csv(&matrix, out)?;
    rec.output(out);
    let json_path = sibling(out, "json");
    export_similarity_json(&matrix, &json_path)?;
    rec.output(&json_path);
    for t in &matrix.rows {
        println!("{t}: {}", matrix.top_k_in_row(t, 3).join(", "));
    }
    rec.finish(cfg).save(&sibling(out, "manifest.json"))
}

/// Full-model finite-difference check on a tiny random model and example.
pub fn gradcheck_cmd(cfg: &RunConfig, fault: Option<BackwardFault>) -> Result<()> {
    let model = Model::<f64>::init(cfg.model.clone(), cfg.seed)?;
    let v = cfg.model.vocab_size;
    if v <= 5 {
        bail!(Error::Config(format!("gradcheck needs a vocabulary of more than 5 tokens, got {v}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tokens = |n: usize| -> Vec<usize> { (0..n).map(|_| rng.gen_range(5..v)).collect() };
    let example = Seq2SeqExample { dialogue_id: "gradcheck".into(), turn: 0, slot: "x-y".into(), input: tokens(5), target: tokens(2) };
    let description = tokens(3);
    let (config, ids) = (model.config.clone(), model.ids.clone());
    let mut params = model.params;
    let opts = GradCheckOptions { fault, seed: cfg.seed, ..GradCheckOptions::default() };
    let report = grad_check(
        |tape, p| {
            let m = Model { config: config.clone(), params: p.clone(), ids: ids.clone() };
            let c = condition(tape, &m, &description)?;
            example_loss(tape, &m, &example, &c)
        },
        &mut params,
        &opts,
    )?;
    for p in &report.params {
        println!("{:<40} {:>6} coords  max rel error {:.3e}", p.name, p.coords_checked, p.max_rel_error);
    }
    let worst = report.worst().context("model has no parameters")?;
    println!("worst: {} {:.3e}", worst.name, worst.max_rel_error);
    if !(worst.max_rel_error < 1e-4) {
        bail!(CheckFailed(format!(
            "gradient check failed: {} has relative error {:.3e} (analytic {:.6e}, numeric {:.6e})",
            worst.name, worst.max_rel_error, worst.analytic, worst.numeric
        )));
    }
    Ok(())
}

/// Base configuration of `gradcheck`: the tiny model.
pub fn gradcheck_base() -> RunConfig {
    RunConfig { model: ModelConfig::tiny(16), ..RunConfig::default() }
}
