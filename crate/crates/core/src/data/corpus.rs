use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::Schema;
use super::vocab::{normalize_value, NONE_VALUE};
use crate::error::{Error, Result};

/// Active slots of one turn. Absent slots hold `none`.
pub type BeliefState = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub system: String,
    pub user: String,
    /// Cumulative state up to and including this turn.
    pub state: BeliefState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub dialogue_id: String,
    pub domains: Vec<String>,
    pub turns: Vec<Turn>,
}

impl DialogueExample {
    pub fn has_domain(&self, domain: &str) -> bool {
        self.domains.iter().any(|d| d == domain)
    }

    /// Checks every invariant against the schema.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let id = &self.dialogue_id;
        if id.is_empty() {
            return Err(Error::Validation("empty dialogue id".into()));
        }
        for d in &self.domains {
            if !schema.has_domain(d) {
                return Err(Error::Validation(format!("dialogue {id}: unknown domain {d:?}")));
            }
        }
        let mut prev: Option<&BeliefState> = None;
        for (t, turn) in self.turns.iter().enumerate() {
            for (slot, value) in &turn.state {
                if schema.get(slot).is_none() {
                    return Err(Error::Validation(format!("dialogue {id} turn {t}: unknown slot {slot}")));
                }
                let norm = normalize_value(value);
                if norm.is_empty() {
                    return Err(Error::Validation(format!("dialogue {id} turn {t}: empty value for {slot}")));
                }
                if norm == NONE_VALUE {
                    return Err(Error::Validation(format!(
                        "dialogue {id} turn {t}: slot {slot} stores \"none\" explicitly"
                    )));
                }
            }
            if let Some(p) = prev {
                if let Some(dropped) = p.keys().find(|k| !turn.state.contains_key(*k)) {
                    return Err(Error::Validation(format!(
                        "dialogue {id} turn {t}: slot {dropped} dropped from a cumulative state"
                    )));
                }
            }
            prev = Some(&turn.state);
        }
        Ok(())
    }
}

/// Parses JSONL text, validating each dialogue. Blank lines are skipped.
pub fn parse_dialogues(text: &str, schema: &Schema, path: &Path) -> Result<Vec<DialogueExample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: line_no, msg };
        let d: DialogueExample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        d.validate(schema).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}:{line_no}: {m}", path.display())),
            other => other,
        })?;
        if !seen.insert(d.dialogue_id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{line_no}: duplicate dialogue id {}",
                path.display(),
                d.dialogue_id
            )));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn load_dialogues(path: &Path, schema: &Schema) -> Result<Vec<DialogueExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dialogues(&text, schema, path)
}

pub fn dialogues_to_jsonl(dialogues: &[DialogueExample]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dialogues(path: &Path, dialogues: &[DialogueExample]) -> Result<()> {
    crate::io::write_atomic(path, dialogues_to_jsonl(dialogues).as_bytes())
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";

/// Dialogues plus the schema they are annotated against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<DialogueExample>,
    pub schema: Schema,
}

impl Corpus {
    /// Reads `schema.json` and `corpus.jsonl` from a data directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let schema = Schema::load(&dir.join(SCHEMA_FILE))?;
        let dialogues = load_dialogues(&dir.join(CORPUS_FILE), &schema)?;
        Ok(Self { dialogues, schema })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.schema.save(&dir.join(SCHEMA_FILE))?;
        save_dialogues(&dir.join(CORPUS_FILE), &self.dialogues)
    }

    /// Fraction of (turn, slot) pairs over each dialogue's own domains whose
    /// value is `none`.
    pub fn none_fraction(&self) -> f64 {
        let (mut none, mut total) = (0usize, 0usize);
        for d in &self.dialogues {
            let slots: Vec<String> = self.schema.restrict(&d.domains).slots.iter().map(|s| s.id()).collect();
            for t in &d.turns {
                total += slots.len();
                none += slots.iter().filter(|s| !t.state.contains_key(*s)).count();
            }
        }
        if total == 0 {
            0.0
        } else {
            none as f64 / total as f64
        }
    }
}
