//! Dialogue-state-tracking data: schema, corpus files, tokenizer, seq2seq
//! examples and the synthetic corpus generator.

mod corpus;
mod examples;
mod schema;
mod synth;
mod vocab;

pub use corpus::{
    dialogues_to_jsonl, load_dialogues, parse_dialogues, save_dialogues, BeliefState, Corpus, DialogueExample, Turn,
    CORPUS_FILE, SCHEMA_FILE,
};
pub use examples::{build_all, build_examples, description_tokens, flatten_context, turn_tokens, Seq2SeqExample};
pub use schema::{Schema, SlotSchema};
pub use synth::{generate_synthetic_corpus, DomainSpec, GenConfig, SlotSpec};
pub use vocab::{normalize_value, split_words, Vocab, BOS, EOS, NONE_VALUE, PAD, RESERVED, SEP, UNK};
