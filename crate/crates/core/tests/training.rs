//! Training loop, freeze schedules and checkpoint files.

use std::collections::HashMap;

use prompter_core::data::{build_all, description_tokens, generate_synthetic_corpus, GenConfig, Seq2SeqExample, Vocab};
use prompter_core::pipeline::batch_loss;
use prompter_core::tensor::Tape;
use prompter_core::training::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_manifest, resolve_freeze, save_checkpoint, train,
    trainable_names, FreezeSchedule, LayerSelector, TrainConfig, FORMAT_VERSION, MAGIC,
};
use prompter_core::transformer::{Mode, Model, ModelConfig};
use prompter_core::Error;

struct Fixture {
    vocab: Vocab,
    examples: Vec<Seq2SeqExample>,
    descriptions: HashMap<String, Vec<usize>>,
}

fn fixture(mode: Mode, n: usize) -> Fixture {
    let corpus = generate_synthetic_corpus(&GenConfig::default(), 1).unwrap();
    let vocab = Vocab::build(&corpus.dialogues, &corpus.schema);
    let mut examples =
        build_all(&corpus.dialogues, |d| corpus.schema.restrict(&d.domains), mode, &vocab, 12);
    examples.truncate(n);
    let descriptions = description_tokens(&corpus.schema, &vocab);
    Fixture { vocab, examples, descriptions }
}

fn small_model(mode: Mode, vocab: &Vocab, seed: u64) -> Model<f32> {
    let mut c = ModelConfig::tiny(vocab.len());
    c.mode = mode;
    c.enc_layers = 4;
    c.dec_layers = 4;
    Model::init(c, seed).unwrap()
}

fn config(steps: usize, warmup: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.batch_size = 4;
    c.accumulation = 1;
    c.learning_rate = 1e-3;
    c.max_steps = steps;
    c.max_len = 12;
    c.freeze.warmup_steps = warmup;
    c
}

#[test]
fn selectors_resolve_to_their_documented_layers() {
    let r = |s: &str, n: usize| s.parse::<LayerSelector>().unwrap().resolve(n).into_iter().collect::<Vec<_>>();
    assert_eq!(r("all", 4), [0, 1, 2, 3]);
    assert_eq!(r("first-last", 4), [0, 3]);
    assert_eq!(r("first-two-last-two", 6), [0, 1, 4, 5]);
    assert_eq!(r("first-two-last-two", 3), [0, 1, 2]);
    assert_eq!(r("up-to-2", 4), [0, 1]);
    assert_eq!(r("up-to-9", 4), [0, 1, 2, 3]);
    assert_eq!(r("layers:2,0", 4), [0, 2]);
    assert_eq!(r("layers:7", 4), Vec::<usize>::new());
    for bad in ["up-to-0", "first", "layers:", "layers:a"] {
        assert!(matches!(bad.parse::<LayerSelector>(), Err(Error::Config(_))), "{bad}");
    }
    for s in ["all", "first-last", "first-two-last-two", "up-to-3", "layers:0,2"] {
        assert_eq!(s.parse::<LayerSelector>().unwrap().to_string(), s);
    }
}

#[test]
fn empty_selection_is_a_config_error() {
    let f = fixture(Mode::Prompter, 4);
    let model = small_model(Mode::Prompter, &f.vocab, 0);
    let schedule = FreezeSchedule { encoder: LayerSelector::Layers(vec![9]), ..FreezeSchedule::default() };
    assert!(matches!(resolve_freeze(&schedule, &model, 0), Err(Error::Config(_))));
}

#[test]
fn warmup_boundary_switches_the_mask() {
    let f = fixture(Mode::Prompter, 4);
    let model = small_model(Mode::Prompter, &f.vocab, 0);
    let schedule = FreezeSchedule { warmup_steps: 5, ..FreezeSchedule::default() };
    assert!(resolve_freeze(&schedule, &model, 4).unwrap().iter().all(|&t| t));
    let after = trainable_names(&schedule, &model, 5).unwrap();
    for name in model.params.names() {
        let expect = name.starts_with("prompter.")
            || ["encoder.layers.0.", "encoder.layers.3.", "decoder.layers.0.", "decoder.layers.3."]
                .iter()
                .any(|p| name.starts_with(p));
        assert_eq!(after.contains(name), expect, "{name}");
    }
    let wide = FreezeSchedule { encoder: "up-to-2".parse().unwrap(), embeddings: true, ..schedule };
    let names = trainable_names(&wide, &model, 5).unwrap();
    assert!(names.contains("encoder.layers.1.attn.q") && !names.contains("encoder.layers.2.attn.q"));
    assert!(names.contains("shared.embedding") && names.contains("decoder.position"));
    assert!(!names.contains("encoder.final_norm"));
}

#[test]
fn frozen_parameters_stop_changing_after_warmup() {
    let f = fixture(Mode::Prompter, 16);
    let init = small_model(Mode::Prompter, &f.vocab, 2);
    let mut at_warmup = init.clone();
    train(&mut at_warmup, &f.examples, &f.descriptions, &config(6, 6), |_| {}).unwrap();
    let mut later = init.clone();
    train(&mut later, &f.examples, &f.descriptions, &config(9, 6), |_| {}).unwrap();
    let trainable = trainable_names(&config(9, 6).freeze, &init, 6).unwrap();
    for ((_, name, a), (_, _, b)) in at_warmup.params.iter().zip(later.params.iter()) {
        if trainable.contains(name) {
            assert_ne!(a.data(), b.data(), "{name} did not train after warmup");
        } else {
            assert_eq!(a.data(), b.data(), "{name} changed while frozen");
        }
    }
    for ((_, name, a), (_, _, b)) in init.params.iter().zip(at_warmup.params.iter()) {
        assert_ne!(a.data(), b.data(), "{name} did not change during warmup");
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let f = fixture(Mode::Prompter, 12);
    let run = |seed: u64| {
        let mut m = small_model(Mode::Prompter, &f.vocab, 3);
        let mut c = config(5, 100);
        c.seed = seed;
        let log = train(&mut m, &f.examples, &f.descriptions, &c, |_| {}).unwrap();
        (m, log)
    };
    let (a, la) = run(1);
    let (b, lb) = run(1);
    let (c, _) = run(2);
    assert!(a.params.bitwise_eq(&b.params));
    assert_eq!(la, lb);
    assert!(!a.params.bitwise_eq(&c.params));
}

#[test]
fn accumulation_matches_one_large_batch() {
    let f = fixture(Mode::Prompter, 8);
    let model = small_model(Mode::Prompter, &f.vocab, 4);
    let batch: Vec<&Seq2SeqExample> = f.examples.iter().collect();

    let mut whole = model.params.cast::<f64>();
    let m64 = Model { config: model.config.clone(), params: whole.clone(), ids: model.ids.clone() };
    let mut tape = Tape::new();
    let loss = batch_loss(&mut tape, &m64, &batch, &f.descriptions).unwrap();
    tape.backward_into(loss, &mut whole).unwrap();

    let mut parts = model.params.cast::<f64>();
    for half in batch.chunks(4) {
        let mut tape = Tape::new();
        let loss = batch_loss(&mut tape, &m64, half, &f.descriptions).unwrap();
        let scaled = tape.scale(loss, 0.5).unwrap();
        tape.backward_into(scaled, &mut parts).unwrap();
    }
    for ((_, name, a), (_, _, b)) in whole.iter().zip(parts.iter()) {
        let (ga, gb) = (a.grad().unwrap(), b.grad().unwrap());
        let err = ga.iter().zip(gb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{name}: {err}");
    }

    // Same data consumed either way, so the logged losses agree.
    let mut c1 = config(1, 100);
    c1.batch_size = 8;
    let mut c2 = c1.clone();
    c2.batch_size = 4;
    c2.accumulation = 2;
    let l1 = train(&mut model.clone(), &f.examples, &f.descriptions, &c1, |_| {}).unwrap();
    let l2 = train(&mut model.clone(), &f.examples, &f.descriptions, &c2, |_| {}).unwrap();
    assert!((l1[0].loss - l2[0].loss).abs() < 1e-5, "{} vs {}", l1[0].loss, l2[0].loss);
}

#[test]
fn small_corpus_loss_decreases() {
    let f = fixture(Mode::HardPrompt, 8);
    let mut m = small_model(Mode::HardPrompt, &f.vocab, 5);
    let mut c = config(100, 1000);
    c.learning_rate = 1e-2;
    let log = train(&mut m, &f.examples, &f.descriptions, &c, |_| {}).unwrap();
    assert_eq!(log.len(), 100);
    let head: f64 = log[..5].iter().map(|r| r.loss).sum::<f64>() / 5.0;
    let tail: f64 = log[95..].iter().map(|r| r.loss).sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
}

#[test]
fn early_stop_threshold_ends_training() {
    let f = fixture(Mode::Prompter, 4);
    let mut m = small_model(Mode::Prompter, &f.vocab, 6);
    let mut c = config(50, 1000);
    c.stop_below_loss = Some(f64::INFINITY);
    assert_eq!(train(&mut m, &f.examples, &f.descriptions, &c, |_| {}).unwrap().len(), 1);
}

#[test]
fn zero_steps_is_a_no_op() {
    let f = fixture(Mode::Prompter, 4);
    let mut m = small_model(Mode::Prompter, &f.vocab, 7);
    let before = m.clone();
    assert!(train(&mut m, &f.examples, &f.descriptions, &config(0, 0), |_| {}).unwrap().is_empty());
    assert!(m.params.bitwise_eq(&before.params));
    assert!(matches!(train(&mut m, &[], &f.descriptions, &config(1, 0), |_| {}), Err(Error::Contract(_))));
}

#[test]
fn nan_parameter_aborts_with_the_step() {
    let f = fixture(Mode::Prompter, 4);
    let mut m = small_model(Mode::Prompter, &f.vocab, 8);
    let id = m.params.id("prompter.global_prompt").unwrap();
    m.params.get_mut(id).data_mut()[0] = f32::NAN;
    match train(&mut m, &f.examples, &f.descriptions, &config(3, 0), |_| {}) {
        Err(Error::NumericAbort { step, .. }) => assert_eq!(step, 0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_config_is_rejected() {
    let f = fixture(Mode::Prompter, 4);
    let mut m = small_model(Mode::Prompter, &f.vocab, 9);
    let mut c = config(1, 0);
    c.learning_rate = -1.0;
    assert!(matches!(train(&mut m, &f.examples, &f.descriptions, &c, |_| {}), Err(Error::Config(_))));
    let c: TrainConfig = serde_json::from_str(r#"{"freeze": {"encoder": "up-to-2"}}"#).unwrap();
    assert_eq!(c.freeze.encoder, LayerSelector::UpTo(2));
    assert_eq!(c.batch_size, TrainConfig::default().batch_size);
}

fn checkpoint_bytes() -> (Model<f32>, Vocab, Vec<u8>) {
    let f = fixture(Mode::Prompter, 1);
    let model = small_model(Mode::Prompter, &f.vocab, 10);
    let bytes = encode_checkpoint(&model, Some(&f.vocab), serde_json::json!({"step": 7}));
    (model, f.vocab, bytes)
}

fn reencode(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let (manifest, payload) = read_manifest(bytes).unwrap();
    let mut json = serde_json::to_value(&manifest).unwrap();
    edit(&mut json);
    let text = serde_json::to_vec(&json).unwrap();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(payload);
    out
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (model, vocab, _) = checkpoint_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, Some(&vocab), serde_json::json!({"step": 7})).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(back.model.params.bitwise_eq(&model.params));
    assert_eq!(back.model.config, model.config);
    assert_eq!(back.vocab.as_ref(), Some(&vocab));
    assert_eq!(back.metadata["step"], 7);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let (_, _, bytes) = checkpoint_bytes();
    for cut in [0, 3, 15, 40, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Integrity(_))), "cut at {cut}");
    }
}

#[test]
fn corrupted_payload_fails_the_hash() {
    let (_, _, mut bytes) = checkpoint_bytes();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Integrity(m)) if m.contains("hash")));
}

#[test]
fn version_mismatch_is_reported() {
    let (_, _, mut bytes) = checkpoint_bytes();
    bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match decode_checkpoint(&bytes) {
        Err(Error::Version { found, expected }) => assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn edited_manifest_shape_is_a_shape_error() {
    let (_, _, bytes) = checkpoint_bytes();
    let edited = reencode(&bytes, |j| j["tensors"][1]["shape"] = serde_json::json!([3, 3]));
    assert!(matches!(decode_checkpoint(&edited), Err(Error::Shape(_))));
    let same = reencode(&bytes, |_| {});
    assert!(decode_checkpoint(&same).is_ok());
    let vocab = reencode(&bytes, |j| j["config"]["vocab_size"] = serde_json::json!(7));
    assert!(matches!(decode_checkpoint(&vocab), Err(Error::Config(_))));
}
