//! Seeded, template-based multi-domain dialogue generator.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{BeliefState, Corpus, DialogueExample, Turn};
use super::schema::{Schema, SlotSchema};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub description: String,
    /// Name of the value pool in [`GenConfig::pools`].
    pub pool: String,
    /// Slots of different domains sharing an analog group mean the same thing.
    #[serde(default)]
    pub analog: Option<String>,
    /// User phrases; `{v}` is replaced by the value.
    pub templates: Vec<String>,
    /// System question asking for this slot.
    pub question: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Dialogues whose first domain is this one.
    pub dialogues: usize,
    pub openers: Vec<String>,
    pub slots: Vec<SlotSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub domains: Vec<DomainSpec>,
    pub pools: BTreeMap<String, Vec<String>>,
    /// Turns per domain segment, inclusive range.
    pub min_turns: usize,
    pub max_turns: usize,
    pub second_domain_prob: f64,
    pub reassign_prob: f64,
    pub fillers: Vec<String>,
    pub closing_question: String,
}

fn slot(name: &str, description: &str, pool: &str, analog: Option<&str>, templates: &[&str], question: &str) -> SlotSpec {
    SlotSpec {
        name: name.into(),
        description: description.into(),
        pool: pool.into(),
        analog: analog.map(String::from),
        templates: templates.iter().map(|s| s.to_string()).collect(),
        question: question.into(),
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for GenConfig {
    fn default() -> Self {
        let departure = ["from {v}", "leaving from {v}", "departing from {v}"];
        let destination = ["to {v}", "going to {v}", "heading to {v}"];
        let leaveat = ["leaving after {v}", "to leave at {v}"];
        let arriveby = ["arriving by {v}", "to arrive by {v}"];
        let area = ["in the {v}", "in the {v} area"];
        let name = ["called {v}", "i like {v}"];
        let travel = |d: &str| {
            vec![
                slot("departure", &format!("departure location of the {d}"), "places", Some("departure"), &departure, "where are you leaving from ?"),
                slot("destination", &format!("destination of the {d}"), "places", Some("destination"), &destination, "where are you going ?"),
                slot("leaveat", &format!("leaving time of the {d}"), "times", Some("leaveat"), &leaveat, "when do you want to leave ?"),
                slot("arriveby", &format!("arrival time of the {d}"), "times", Some("arriveby"), &arriveby, "when do you want to arrive ?"),
            ]
        };
        let mut train = travel("train");
        train.insert(2, slot("day", "day of the train journey", "days", Some("day"), &["on {v}", "travelling on {v}"], "which day ?"));
        let domains = vec![
            DomainSpec {
                name: "taxi".into(),
                dialogues: 40,
                openers: strings(&["i need a taxi", "can you book a taxi for me", "please get me a taxi"]),
                slots: travel("taxi"),
            },
            DomainSpec {
                name: "train".into(),
                dialogues: 40,
                openers: strings(&["i need a train", "i am looking for a train", "can you find me a train"]),
                slots: train,
            },
            DomainSpec {
                name: "hotel".into(),
                dialogues: 40,
                openers: strings(&["i need a place to stay", "i am looking for a hotel"]),
                slots: vec![
                    slot("name", "name of the hotel", "hotel_names", Some("name"), &name, "do you have a hotel in mind ?"),
                    slot("area", "area of the hotel", "areas", Some("area"), &area, "which part of town ?"),
                    slot("stars", "star rating of the hotel", "stars", None, &["with {v} stars", "a {v} star place"], "how many stars ?"),
                    slot("internet", "whether the hotel has free wifi", "yes_no", None, &["internet {v}", "internet should be {v}"], "do you need internet ?"),
                ],
            },
            DomainSpec {
                name: "restaurant".into(),
                dialogues: 40,
                openers: strings(&["i want to book a restaurant", "i am looking for a place to eat"]),
                slots: vec![
                    slot("name", "name of the restaurant", "restaurant_names", Some("name"), &name, "do you have a restaurant in mind ?"),
                    slot("area", "area of the restaurant", "areas", Some("area"), &area, "which part of town ?"),
                    slot("food", "food type of the restaurant", "food", None, &["serving {v} food", "{v} food please"], "what type of food ?"),
                    slot("day", "day of the restaurant booking", "days", Some("day"), &["on {v}", "for {v}"], "which day ?"),
                ],
            },
            DomainSpec {
                name: "attraction".into(),
                dialogues: 40,
                openers: strings(&["i want to visit an attraction", "what is there to see in town"]),
                slots: vec![
                    slot("name", "name of the attraction", "attraction_names", Some("name"), &name, "which attraction ?"),
                    slot("area", "area of the attraction", "areas", Some("area"), &area, "which part of town ?"),
                    slot("type", "type of the attraction", "attraction_types", None, &["a {v}", "some {v} to visit"], "what type of place ?"),
                ],
            },
        ];
        let mut pools = BTreeMap::new();
        let mut pool = |k: &str, v: &[&str]| {
            pools.insert(k.to_string(), strings(v));
        };
        // Hotel and attraction names double as travel locations.
        pool("places", &["cambridge", "ely", "norwich", "stansted airport", "london kings cross", "peterborough", "leicester", "broxbourne", "acorn guest house", "alexander bed and breakfast", "kings college", "the junction"]);
        pool("hotel_names", &["acorn guest house", "alexander bed and breakfast", "the lensfield hotel", "cityroomz", "el shaddai", "finches bed and breakfast"]);
        pool("restaurant_names", &["the golden curry", "pizza hut city centre", "the nirala", "curry garden", "yippee noodle bar", "the cambridge chop house"]);
        pool("attraction_names", &["kings college", "the junction", "castle galleries", "byard art", "whale of a time", "the fitzwilliam museum"]);
        pool("times", &["08:30", "09:15", "10:00", "11:45", "13:30", "15:00", "17:15", "19:45"]);
        pool("days", &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]);
        pool("areas", &["north", "south", "east", "west", "centre"]);
        pool("stars", &["1", "2", "3", "4", "5"]);
        pool("yes_no", &["yes", "no"]);
        pool("food", &["indian", "chinese", "italian", "british", "thai", "french"]);
        pool("attraction_types", &["museum", "college", "theatre", "park", "nightclub", "cinema"]);
        Self {
            domains,
            pools,
            min_turns: 2,
            max_turns: 4,
            second_domain_prob: 0.3,
            reassign_prob: 0.1,
            fillers: strings(&["thanks", "that sounds good", "ok , thank you"]),
            closing_question: "anything else ?".into(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.domains.len() < 2 {
            return cfg(format!("synthetic corpus needs at least 2 domains, got {}", self.domains.len()));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return cfg(format!("invalid turn range {}..={}", self.min_turns, self.max_turns));
        }
        for p in [self.second_domain_prob, self.reassign_prob] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.fillers.is_empty() {
            return cfg("no filler utterances".into());
        }
        let mut names = HashSet::new();
        for d in &self.domains {
            if !names.insert(&d.name) {
                return cfg(format!("duplicate domain {}", d.name));
            }
            if !(2..=5).contains(&d.slots.len()) {
                return cfg(format!("domain {} has {} slots, expected 2 to 5", d.name, d.slots.len()));
            }
            if d.openers.is_empty() {
                return cfg(format!("domain {} has no openers", d.name));
            }
            for s in &d.slots {
                match self.pools.get(&s.pool) {
                    Some(p) if p.len() >= 2 => {}
                    _ => return cfg(format!("slot {}-{} needs a pool {:?} with at least 2 values", d.name, s.name, s.pool)),
                }
                if s.templates.is_empty() || s.templates.iter().any(|t| !t.contains("{v}")) {
                    return cfg(format!("slot {}-{} needs templates containing {{v}}", d.name, s.name));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.domains
                .iter()
                .flat_map(|d| {
                    d.slots.iter().map(|s| SlotSchema {
                        domain: d.name.clone(),
                        slot: s.name.clone(),
                        description: s.description.clone(),
                    })
                })
                .collect(),
        )
    }

    /// Cross-domain analogous slot pairs `(a, b)` with `a` before `b` in
    /// schema order.
    pub fn analogous_pairs(&self) -> Vec<(String, String)> {
        let tagged: Vec<(String, &str, &str)> = self
            .domains
            .iter()
            .flat_map(|d| {
                d.slots
                    .iter()
                    .filter_map(move |s| s.analog.as_deref().map(|a| (format!("{}-{}", d.name, s.name), d.name.as_str(), a)))
            })
            .collect();
        let mut out = Vec::new();
        for (i, (a, da, ga)) in tagged.iter().enumerate() {
            for (b, db, gb) in &tagged[i + 1..] {
                if ga == gb && da != db {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }

    /// Slots with no analogue in any other domain.
    pub fn unique_slots(&self) -> Vec<String> {
        let paired: HashSet<String> = self.analogous_pairs().into_iter().flat_map(|(a, b)| [a, b]).collect();
        self.domains
            .iter()
            .flat_map(|d| d.slots.iter().map(move |s| format!("{}-{}", d.name, s.name)))
            .filter(|id| !paired.contains(id))
            .collect()
    }
}

fn fill(template: &str, value: &str) -> String {
    template.replace("{v}", value)
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("validated nonempty")
}

fn segment(cfg: &GenConfig, d: &DomainSpec, rng: &mut ChaCha8Rng, state: &mut BeliefState, turns: &mut Vec<Turn>) {
    let n_turns = rng.gen_range(cfg.min_turns..=cfg.max_turns);
    let mut order: Vec<&SlotSpec> = d.slots.iter().collect();
    order.shuffle(rng);
    let mentioned = rng.gen_range(1..d.slots.len());
    let mut schedule: Vec<Vec<&SlotSpec>> = vec![Vec::new(); n_turns];
    for (i, s) in order[..mentioned].iter().enumerate() {
        let t = if i == 0 { 0 } else { rng.gen_range(0..n_turns) };
        schedule[t].push(s);
    }
    let pending: Vec<&SlotSpec> = order[mentioned..].to_vec();
    for (t, due) in schedule.iter().enumerate() {
        let system = if turns.is_empty() {
            String::new()
        } else if t == 0 {
            cfg.closing_question.clone()
        } else {
            match due.first().or(pending.first()) {
                Some(s) if rng.gen_bool(0.5) => s.question.clone(),
                _ => cfg.closing_question.clone(),
            }
        };
        let mut parts = Vec::new();
        if t == 0 {
            parts.push(pick(rng, &d.openers).clone());
        }
        for s in due {
            let v = pick(rng, &cfg.pools[&s.pool]).clone();
            parts.push(fill(pick(rng, &s.templates), &v));
            state.insert(format!("{}-{}", d.name, s.name), v);
        }
        if t > 0 && rng.gen_bool(cfg.reassign_prob) {
            let set: Vec<&SlotSpec> = d
                .slots
                .iter()
                .filter(|s| state.contains_key(&format!("{}-{}", d.name, s.name)) && !due.iter().any(|x| x.name == s.name))
                .collect();
            if let Some(s) = set.choose(rng) {
                let key = format!("{}-{}", d.name, s.name);
                let others: Vec<&String> = cfg.pools[&s.pool].iter().filter(|v| **v != state[&key]).collect();
                let v = (*pick(rng, &others)).clone();
                parts.push(format!("actually , {}", fill(pick(rng, &s.templates), &v)));
                state.insert(key, v);
            }
        }
        if parts.is_empty() {
            parts.push(pick(rng, &cfg.fillers).clone());
        }
        turns.push(Turn { system, user: parts.join(" "), state: state.clone() });
    }
}

/// Deterministic corpus for `seed`; dialogue ids are `{domain}-{index:04}`.
pub fn generate_synthetic_corpus(cfg: &GenConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let schema = cfg.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::new();
    for (di, d) in cfg.domains.iter().enumerate() {
        for k in 0..d.dialogues {
            let mut domains = vec![d];
            if rng.gen_bool(cfg.second_domain_prob) {
                let others: Vec<&DomainSpec> =
                    cfg.domains.iter().enumerate().filter(|(j, _)| *j != di).map(|(_, o)| o).collect();
                domains.push(*pick(&mut rng, &others));
            }
            let mut state = BeliefState::new();
            let mut turns = Vec::new();
            for seg in &domains {
                segment(cfg, seg, &mut rng, &mut state, &mut turns);
            }
            dialogues.push(DialogueExample {
                dialogue_id: format!("{}-{k:04}", d.name),
                domains: domains.iter().map(|x| x.name.clone()).collect(),
                turns,
            });
        }
    }
    Ok(Corpus { dialogues, schema })
}
