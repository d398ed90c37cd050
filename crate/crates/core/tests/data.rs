//! Corpus files, tokenization, example construction and the synthetic
//! generator.

use std::path::{Path, PathBuf};

use prompter_core::data::{
    build_all, build_examples, flatten_context, generate_synthetic_corpus, load_dialogues, normalize_value,
    parse_dialogues, turn_tokens, Corpus, DialogueExample, GenConfig, Schema, Turn, Vocab, NONE_VALUE, SEP, UNK,
};
use prompter_core::transformer::Mode;
use prompter_core::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn schema() -> Schema {
    Schema::load(&fixture("schema.json")).unwrap()
}

#[test]
fn schema_fixture_loads_in_file_order() {
    let s = schema();
    let ids: Vec<String> = s.slots.iter().map(|x| x.id()).collect();
    assert_eq!(ids, ["taxi-departure", "taxi-destination", "hotel-name", "hotel-internet"]);
    assert_eq!(s.domains(), ["taxi", "hotel"]);
    assert_eq!(Schema::from_json(&s.to_json()).unwrap(), s);
}

#[test]
fn invalid_schemas_are_rejected() {
    let dup = r#"{"domains": [{"name": "a", "slots": [{"name": "x", "description": "d"}, {"name": "x", "description": "e"}]}]}"#;
    assert!(matches!(Schema::from_json(dup), Err(Error::Validation(_))));
    let blank = r#"{"domains": [{"name": "a", "slots": [{"name": "x", "description": "  "}]}]}"#;
    assert!(matches!(Schema::from_json(blank), Err(Error::Validation(_))));
    assert!(matches!(Schema::from_json("{"), Err(Error::Json(_))));
}

#[test]
fn good_fixture_loads_and_skips_blank_lines() {
    let d = load_dialogues(&fixture("good.jsonl"), &schema()).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d[0].turns[1].state["taxi-destination"], "the gonville hotel");
    assert_eq!(d[1].domains, ["hotel", "taxi"]);
}

#[test]
fn empty_file_is_an_empty_corpus() {
    assert!(load_dialogues(&fixture("empty.jsonl"), &schema()).unwrap().is_empty());
}

fn load_err(name: &str) -> Error {
    load_dialogues(&fixture(name), &schema()).unwrap_err()
}

#[test]
fn unknown_slot_names_the_slot_and_line() {
    match load_err("unknown_slot.jsonl") {
        Error::Validation(m) => {
            assert!(m.contains("taxi-price"), "{m}");
            assert!(m.contains("unknown_slot.jsonl:2:"), "{m}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_line_reports_its_number() {
    match load_err("malformed.jsonl") {
        Error::Parse { line, path, .. } => {
            assert_eq!(line, 2);
            assert!(path.ends_with("malformed.jsonl"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn every_corrupted_fixture_is_rejected() {
    for (name, needle) in [
        ("duplicate_id.jsonl", "duplicate dialogue id a"),
        ("explicit_none.jsonl", "explicitly"),
        ("empty_value.jsonl", "empty value"),
        ("dropped_slot.jsonl", "dropped"),
        ("unknown_domain.jsonl", "unknown domain"),
    ] {
        match load_err(name) {
            Error::Validation(m) => assert!(m.contains(needle), "{name}: {m}"),
            other => panic!("{name}: unexpected {other:?}"),
        }
    }
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_err("absent.jsonl"), Error::Io { .. }));
}

#[test]
fn reassignment_keeps_a_cumulative_state_valid() {
    let text = r#"{"dialogue_id": "r", "domains": ["taxi"], "turns": [{"system": "", "user": "from ely", "state": {"taxi-departure": "ely"}}, {"system": "", "user": "actually from leeds", "state": {"taxi-departure": "leeds"}}]}"#;
    assert_eq!(parse_dialogues(text, &schema(), Path::new("x")).unwrap().len(), 1);
}

#[test]
fn tokenizer_rules() {
    let v = Vocab::from_words(["hello", "world", ","].map(String::from));
    assert_eq!(v.tokenize("Hello, world"), vec![v.id("hello"), v.id(","), v.id("world")]);
    assert!(v.tokenize("").is_empty());
    assert_eq!(v.tokenize("HELLO mars"), vec![v.id("hello"), UNK]);
    assert_eq!(v.detokenize(&v.tokenize("  Hello ,world ")), "hello , world");
}

#[test]
fn vocab_is_deterministic_and_covers_descriptions() {
    let s = schema();
    let d = load_dialogues(&fixture("good.jsonl"), &s).unwrap();
    let a = Vocab::build(&d, &s);
    let mut rev = d.clone();
    rev.reverse();
    assert_eq!(a, Vocab::build(&rev, &s));
    for slot in &s.slots {
        assert!(!a.tokenize(&slot.description).contains(&UNK));
    }
    // Bijective over its entries.
    for (i, t) in a.tokens().iter().enumerate() {
        assert_eq!(a.id(t), i);
    }
}

#[test]
fn vocab_round_trips_through_json() {
    let v = Vocab::from_words(["b", "a"].map(String::from));
    let json = serde_json::to_string(&v).unwrap();
    let back: Vocab = serde_json::from_str(&json).unwrap();
    assert_eq!(back, v);
}

fn example_setup() -> (Schema, Vec<DialogueExample>, Vocab) {
    let s = schema();
    let d = load_dialogues(&fixture("good.jsonl"), &s).unwrap();
    let v = Vocab::build(&d, &s);
    (s, d, v)
}

#[test]
fn one_example_per_turn_and_slot() {
    let (s, d, v) = example_setup();
    for mode in [Mode::Prompter, Mode::HardPrompt, Mode::PromptTuning] {
        let ex = build_examples(&d[0], &s, mode, &v, 256);
        assert_eq!(ex.len(), d[0].turns.len() * s.slots.len());
        let one_turn = DialogueExample { turns: d[0].turns[..1].to_vec(), ..d[0].clone() };
        let three = Schema::new(s.slots[..3].to_vec()).unwrap();
        assert_eq!(build_examples(&one_turn, &three, mode, &v, 256).len(), 3);
    }
}

#[test]
fn targets_spell_values_or_none() {
    let (s, d, v) = example_setup();
    let ex = build_examples(&d[0], &s, Mode::Prompter, &v, 256);
    let at = |turn: usize, slot: &str| ex.iter().find(|e| e.turn == turn && e.slot == slot).unwrap();
    assert_eq!(at(0, "taxi-destination").target, v.tokenize(NONE_VALUE));
    assert_eq!(at(0, "taxi-departure").target, v.tokenize("cambridge"));
    assert_eq!(v.detokenize(&at(1, "taxi-destination").target), "the gonville hotel");
}

#[test]
fn inputs_follow_the_mode() {
    let (s, d, v) = example_setup();
    let ctx: Vec<usize> = d[0].turns.iter().flat_map(|t| turn_tokens(&v, t)).collect();
    let plain = build_examples(&d[0], &s, Mode::Prompter, &v, 256);
    assert_eq!(plain[4].input, ctx);
    assert_eq!(v.detokenize(&plain[0].input), "user : i need a taxi from cambridge .");
    let hard = build_examples(&d[0], &s, Mode::HardPrompt, &v, 256);
    let desc = v.tokenize("destination of the taxi");
    let e = &hard[5];
    assert_eq!(e.slot, "taxi-destination");
    assert_eq!(&e.input[..desc.len()], desc.as_slice());
    assert_eq!(e.input[desc.len()], SEP);
    assert_eq!(&e.input[desc.len() + 1..], ctx.as_slice());
}

fn long_dialogue(v: &Vocab) -> (DialogueExample, Vec<usize>) {
    // Ten turns of 30 tokens each: "user :" plus 28 words.
    let user = vec!["cambridge"; 28].join(" ");
    let turns: Vec<Turn> = (0..10).map(|_| Turn { system: String::new(), user: user.clone(), state: Default::default() }).collect();
    let lens = turns.iter().map(|t| turn_tokens(v, t).len()).collect();
    (DialogueExample { dialogue_id: "long".into(), domains: vec!["taxi".into()], turns }, lens)
}

#[test]
fn long_context_drops_whole_oldest_turns() {
    let (s, _, v) = example_setup();
    let (dialogue, lens) = long_dialogue(&v);
    assert!(lens.iter().all(|&l| l == 30));
    let ex = build_examples(&dialogue, &s, Mode::Prompter, &v, 256);
    let last = ex.iter().filter(|e| e.turn == 9).collect::<Vec<_>>();
    // 300 tokens; 8 whole turns (240) fit.
    assert_eq!(last[0].input.len(), 240);
    assert_eq!(last[0].input[..2], [v.id("user"), v.id(":")]);
    let hard = build_examples(&dialogue, &s, Mode::HardPrompt, &v, 256);
    for e in hard.iter().filter(|e| e.turn == 9) {
        assert!(e.input.len() <= 256);
        let desc_len = v.tokenize(&s.get(&e.slot).unwrap().description).len();
        assert_eq!((e.input.len() - desc_len - 1) % 30, 0);
    }
}

#[test]
fn flatten_keeps_recent_turns() {
    let turns = vec![vec![1, 1], vec![2, 2, 2], vec![3]];
    assert_eq!(flatten_context(&turns, 4), vec![2, 2, 2, 3]);
    assert_eq!(flatten_context(&turns, 3), vec![3]);
}

#[test]
fn synthetic_corpus_is_deterministic() {
    let cfg = GenConfig::default();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    generate_synthetic_corpus(&cfg, 11).unwrap().save(dir_a.path()).unwrap();
    generate_synthetic_corpus(&cfg, 11).unwrap().save(dir_b.path()).unwrap();
    for f in ["corpus.jsonl", "schema.json"] {
        assert_eq!(std::fs::read(dir_a.path().join(f)).unwrap(), std::fs::read(dir_b.path().join(f)).unwrap());
    }
    let other = generate_synthetic_corpus(&cfg, 12).unwrap();
    assert_ne!(other, Corpus::load(dir_a.path()).unwrap());
}

#[test]
fn generate_save_load_is_identity() {
    let corpus = generate_synthetic_corpus(&GenConfig::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.save(dir.path()).unwrap();
    assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
}

#[test]
fn synthetic_values_appear_verbatim_in_context() {
    let corpus = generate_synthetic_corpus(&GenConfig::default(), 5).unwrap();
    for d in &corpus.dialogues {
        let mut context = String::new();
        for t in &d.turns {
            context.push_str(&format!(" {} {} ", normalize_value(&t.system), normalize_value(&t.user)));
            for (slot, value) in &t.state {
                let needle = format!(" {} ", normalize_value(value));
                assert!(context.contains(&needle), "{} {slot}={value} not in context", d.dialogue_id);
            }
        }
    }
}

#[test]
fn synthetic_states_are_cumulative_and_valid() {
    let corpus = generate_synthetic_corpus(&GenConfig::default(), 6).unwrap();
    for d in &corpus.dialogues {
        d.validate(&corpus.schema).unwrap();
        for w in d.turns.windows(2) {
            assert!(w[0].state.keys().all(|k| w[1].state.contains_key(k)));
        }
        for t in &d.turns {
            assert!(t.state.keys().all(|k| d.domains.iter().any(|dom| k.starts_with(&format!("{dom}-")))));
        }
    }
}

#[test]
fn synthetic_corpus_matches_its_configuration() {
    let cfg = GenConfig::default();
    let corpus = generate_synthetic_corpus(&cfg, 7).unwrap();
    for d in &cfg.domains {
        let n = corpus.dialogues.iter().filter(|x| x.domains[0] == d.name).count();
        assert_eq!(n, d.dialogues);
    }
    let f = corpus.none_fraction();
    assert!((0.5..=0.95).contains(&f), "none fraction {f}");
    assert!(cfg.domains.len() >= 3);
    assert!(!cfg.analogous_pairs().is_empty());
    assert!(cfg.unique_slots().contains(&"hotel-internet".to_string()));
}

#[test]
fn synthetic_pools_collide_across_domains() {
    let cfg = GenConfig::default();
    let departures: std::collections::BTreeSet<&String> = cfg.pools["places"].iter().collect();
    assert!(cfg.pools["hotel_names"].iter().any(|h| departures.contains(h)));
}

#[test]
fn generator_rejects_a_single_domain() {
    let mut cfg = GenConfig::default();
    cfg.domains.truncate(1);
    assert!(matches!(generate_synthetic_corpus(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn held_out_domain_never_reaches_training_examples() {
    let corpus = generate_synthetic_corpus(&GenConfig::default(), 8).unwrap();
    let v = Vocab::build(&corpus.dialogues, &corpus.schema);
    let train: Vec<&DialogueExample> = corpus.dialogues.iter().filter(|d| !d.has_domain("train")).collect();
    let schema = corpus.schema.without_domain("train");
    let ex = build_all(train, |d| schema.restrict(&d.domains), Mode::Prompter, &v, 256);
    assert!(!ex.is_empty());
    assert!(ex.iter().all(|e| !e.slot.starts_with("train-")));
}
