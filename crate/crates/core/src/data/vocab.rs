use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::corpus::DialogueExample;
use super::schema::Schema;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Separates a hard-prompt description from the dialogue context.
pub const SEP: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];
pub const NONE_VALUE: &str = "none";

/// Lowercased split into alphanumeric runs and single punctuation marks.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Canonical form used for every value comparison: tokens joined by single
/// spaces. Lowercases, trims and collapses whitespace as a side effect.
pub fn normalize_value(text: &str) -> String {
    split_words(text).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved entries first, then every word in lexicographic order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let set: BTreeSet<String> = words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())).collect();
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(set).collect();
        Self::from_tokens(tokens).expect("deduplicated by construction")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Validation("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Words of the given dialogues, every schema description, the role
    /// markers and the literal `none`.
    pub fn build(dialogues: &[DialogueExample], schema: &Schema) -> Self {
        let mut words: Vec<String> = Vec::new();
        for d in dialogues {
            for t in &d.turns {
                words.extend(split_words(&t.system));
                words.extend(split_words(&t.user));
                for v in t.state.values() {
                    words.extend(split_words(v));
                }
            }
        }
        for s in &schema.slots {
            words.extend(split_words(&s.description));
        }
        words.extend(["system", "user", ":", NONE_VALUE].map(String::from));
        Self::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    /// Space-joined tokens, skipping reserved ids other than `<unk>`.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i == UNK || i >= RESERVED.len())
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
