use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One slot of one domain with its natural-language description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub domain: String,
    pub slot: String,
    pub description: String,
}

impl SlotSchema {
    /// `domain-slot`, the key used in belief states.
    pub fn id(&self) -> String {
        format!("{}-{}", self.domain, self.slot)
    }
}

/// All slots, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schema {
    pub slots: Vec<SlotSchema>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    domains: Vec<DomainEntry>,
}

#[derive(Serialize, Deserialize)]
struct DomainEntry {
    name: String,
    slots: Vec<SlotEntry>,
}

#[derive(Serialize, Deserialize)]
struct SlotEntry {
    name: String,
    description: String,
}

impl Schema {
    pub fn new(slots: Vec<SlotSchema>) -> Result<Self> {
        let s = Self { slots };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.slots {
            if s.domain.is_empty() || s.domain.contains('-') {
                return Err(Error::Validation(format!("invalid domain name {:?}", s.domain)));
            }
            if s.slot.is_empty() {
                return Err(Error::Validation(format!("empty slot name in domain {}", s.domain)));
            }
            if s.description.trim().is_empty() {
                return Err(Error::Validation(format!("slot {} has an empty description", s.id())));
            }
            if !seen.insert(s.id()) {
                return Err(Error::Validation(format!("duplicate slot {}", s.id())));
            }
        }
        Ok(())
    }

    /// Domain names in order of first appearance.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.slots {
            if !out.contains(&s.domain) {
                out.push(s.domain.clone());
            }
        }
        out
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.slots.iter().any(|s| s.domain == domain)
    }

    pub fn get(&self, slot_id: &str) -> Option<&SlotSchema> {
        self.slots.iter().find(|s| s.id() == slot_id)
    }

    pub fn slots_of<'a>(&'a self, domain: &'a str) -> impl Iterator<Item = &'a SlotSchema> + 'a {
        self.slots.iter().filter(move |s| s.domain == domain)
    }

    /// Sub-schema restricted to the given domains, preserving order.
    pub fn restrict(&self, domains: &[String]) -> Schema {
        Schema { slots: self.slots.iter().filter(|s| domains.contains(&s.domain)).cloned().collect() }
    }

    pub fn without_domain(&self, domain: &str) -> Schema {
        Schema { slots: self.slots.iter().filter(|s| s.domain != domain).cloned().collect() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        let slots = file
            .domains
            .into_iter()
            .flat_map(|d| {
                let name = d.name;
                d.slots.into_iter().map(move |s| SlotSchema {
                    domain: name.clone(),
                    slot: s.name,
                    description: s.description,
                })
            })
            .collect();
        Self::new(slots)
    }

    pub fn to_json(&self) -> String {
        let domains = self
            .domains()
            .into_iter()
            .map(|name| DomainEntry {
                slots: self
                    .slots_of(&name)
                    .map(|s| SlotEntry { name: s.slot.clone(), description: s.description.clone() })
                    .collect(),
                name,
            })
            .collect();
        serde_json::to_string_pretty(&SchemaFile { domains }).expect("schema serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }
}
