use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::NONE_VALUE;
use crate::error::{contract_err, Result};

/// One slot-level prediction. Values are in normalized form.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: String,
    pub pred: String,
    pub gold: String,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.pred == self.gold
    }

    pub fn pred_active(&self) -> bool {
        self.pred != NONE_VALUE
    }

    pub fn gold_active(&self) -> bool {
        self.gold != NONE_VALUE
    }

    pub fn domain(&self) -> &str {
        self.slot.split('-').next().unwrap_or(&self.slot)
    }
}

/// Fraction of turns whose every slot is correct.
///
/// Each turn group must list the same slots as every other turn of its
/// dialogue, each once.
pub fn joint_goal_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    let mut turns: BTreeMap<(&str, usize), (BTreeSet<&str>, bool)> = BTreeMap::new();
    for r in records {
        let entry = turns.entry((r.dialogue_id.as_str(), r.turn)).or_insert_with(|| (BTreeSet::new(), true));
        if !entry.0.insert(r.slot.as_str()) {
            return Err(contract_err!("duplicate record for {} turn {} slot {}", r.dialogue_id, r.turn, r.slot));
        }
        entry.1 &= r.is_correct();
    }
    if turns.is_empty() {
        return Err(contract_err!("no records"));
    }
    let mut slots_of: HashMap<&str, &BTreeSet<&str>> = HashMap::new();
    for ((d, t), (slots, _)) in &turns {
        let expected = *slots_of.entry(d).or_insert(slots);
        if expected != slots {
            return Err(contract_err!("turn {t} of dialogue {d} has an incomplete slot set"));
        }
    }
    let correct = turns.values().filter(|(_, ok)| *ok).count();
    Ok(correct as f64 / turns.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub turns: usize,
    pub records: usize,
    /// Records whose gold value is active.
    pub active: usize,
    /// Records whose gold value is `none`.
    pub none: usize,
    /// Active gold predicted as `none`.
    pub missed: usize,
    /// `none` gold predicted as active.
    pub over: usize,
    pub activeness_agree: usize,
}

/// Miss-prediction, over-prediction and activeness accuracy. A rate with a
/// zero denominator is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineGrained {
    pub mp: Option<f64>,
    pub op: Option<f64>,
    pub none_accuracy: Option<f64>,
}

fn ratio(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

pub fn counts(records: &[PredictionRecord]) -> Counts {
    let turns: BTreeSet<(&str, usize)> = records.iter().map(|r| (r.dialogue_id.as_str(), r.turn)).collect();
    let mut c = Counts { turns: turns.len(), records: records.len(), ..Counts::default() };
    for r in records {
        match (r.gold_active(), r.pred_active()) {
            (true, false) => c.missed += 1,
            (false, true) => c.over += 1,
            _ => c.activeness_agree += 1,
        }
        if r.gold_active() {
            c.active += 1;
        } else {
            c.none += 1;
        }
    }
    c
}

pub fn fine_grained_metrics(records: &[PredictionRecord]) -> Result<FineGrained> {
    if records.is_empty() {
        return Err(contract_err!("no records"));
    }
    let c = counts(records);
    Ok(FineGrained {
        mp: ratio(c.missed, c.active),
        op: ratio(c.over, c.none),
        none_accuracy: ratio(c.activeness_agree, c.records),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub jga: f64,
    pub mp: Option<f64>,
    pub op: Option<f64>,
    pub none_accuracy: Option<f64>,
    pub slot_accuracy: f64,
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jga: f64,
    pub mp: Option<f64>,
    pub op: Option<f64>,
    pub none_accuracy: Option<f64>,
    pub slot_accuracy: f64,
    pub counts: Counts,
    pub per_domain: BTreeMap<String, DomainMetrics>,
}

fn domain_metrics(records: &[PredictionRecord]) -> Result<DomainMetrics> {
    let fg = fine_grained_metrics(records)?;
    Ok(DomainMetrics {
        jga: joint_goal_accuracy(records)?,
        mp: fg.mp,
        op: fg.op,
        none_accuracy: fg.none_accuracy,
        slot_accuracy: records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64,
        counts: counts(records),
    })
}

/// Headline rates over all records plus the same rates restricted to each
/// slot domain.
pub fn metrics_report(records: &[PredictionRecord]) -> Result<MetricsReport> {
    let all = domain_metrics(records)?;
    let mut by_domain: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_domain.entry(r.domain().to_string()).or_default().push(r.clone());
    }
    let per_domain = by_domain
        .into_iter()
        .map(|(d, rs)| Ok((d, domain_metrics(&rs)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(MetricsReport {
        jga: all.jga,
        mp: all.mp,
        op: all.op,
        none_accuracy: all.none_accuracy,
        slot_accuracy: all.slot_accuracy,
        counts: all.counts,
        per_domain,
    })
}

pub fn records_to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
