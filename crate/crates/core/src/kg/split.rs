//! Train / validation / test / prompt-subset partitioning with entity closure.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::store::{KgStore, Triple};
use crate::error::{Error, Result};
use crate::numerics::rng::{fork, rng};

/// How cross-lingual copies of one fact are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Each `(h, r, t, lang)` row is placed independently, so a test fact may
    /// have its content in training under another language.
    #[default]
    Surface,
    /// All language copies of one `(h, r, t)` land in the same split.
    Content,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    /// Share of the validation pool carved out as prompt/training examples.
    pub prompt_fraction: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.8, valid: 0.1, test: 0.1, prompt_fraction: 0.5, mode: SplitMode::Surface, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub prompt: Vec<Triple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitReport {
    /// Evaluation units exchanged with a training unit to restore closure.
    pub swapped: usize,
    /// Triples dropped because no exchange could restore closure.
    pub dropped: usize,
}

struct Coverage {
    entity: Vec<usize>,
    relation: Vec<usize>,
}

impl Coverage {
    fn apply(&mut self, unit: &[Triple], sign: isize) {
        for t in unit {
            for e in [t.head, t.tail] {
                self.entity[e.idx()] = (self.entity[e.idx()] as isize + sign) as usize;
            }
            self.relation[t.relation.idx()] = (self.relation[t.relation.idx()] as isize + sign) as usize;
        }
    }

    fn covers(&self, unit: &[Triple]) -> bool {
        unit.iter().all(|t| {
            self.entity[t.head.idx()] > 0 && self.entity[t.tail.idx()] > 0 && self.relation[t.relation.idx()] > 0
        })
    }

    /// True when every id in `unit` keeps at least one training occurrence after removing it.
    fn removable(&self, unit: &[Triple]) -> bool {
        let mut ent: BTreeMap<usize, usize> = BTreeMap::new();
        let mut rel: BTreeMap<usize, usize> = BTreeMap::new();
        for t in unit {
            *ent.entry(t.head.idx()).or_default() += 1;
            *ent.entry(t.tail.idx()).or_default() += 1;
            *rel.entry(t.relation.idx()).or_default() += 1;
        }
        ent.iter().all(|(e, c)| self.entity[*e] > *c) && rel.iter().all(|(r, c)| self.relation[*r] > *c)
    }
}

pub fn make_splits(store: &KgStore, cfg: &SplitConfig) -> Result<(Split, SplitReport)> {
    let total = cfg.train + cfg.valid + cfg.test;
    if (total - 1.0).abs() > 1e-9 || [cfg.train, cfg.valid, cfg.test].iter().any(|r| *r < 0.0) {
        return Err(Error::InvalidArgument(format!("split ratios must be non-negative and sum to 1, got {total}")));
    }
    if !(0.0..=1.0).contains(&cfg.prompt_fraction) {
        return Err(Error::InvalidArgument("prompt_fraction must lie in [0, 1]".into()));
    }
    let mut rng = rng(fork(cfg.seed, "split"));

    let mut units: Vec<Vec<Triple>> = match cfg.mode {
        SplitMode::Surface => store.triples().iter().map(|t| vec![*t]).collect(),
        SplitMode::Content => {
            let mut groups: BTreeMap<_, Vec<Triple>> = BTreeMap::new();
            for t in store.triples() {
                groups.entry(t.content()).or_default().push(*t);
            }
            groups.into_values().collect()
        }
    };
    units.shuffle(&mut rng);

    let n = store.triples().len();
    let n_train = (cfg.train * n as f64).round() as usize;
    let n_valid = (cfg.valid * n as f64).round() as usize;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut placed = 0;
    for u in units {
        let len = u.len();
        if placed < n_train {
            train.push(u);
        } else if placed < n_train + n_valid {
            valid.push(u);
        } else {
            test.push(u);
        }
        placed += len;
    }

    let mut cov = Coverage { entity: vec![0; store.n_entities()], relation: vec![0; store.n_relations()] };
    for u in &train {
        cov.apply(u, 1);
    }
    let mut report = SplitReport::default();
    let mut cursor = 0;
    for pool in [&mut valid, &mut test] {
        let mut kept = Vec::with_capacity(pool.len());
        for unit in pool.drain(..) {
            if cov.covers(&unit) {
                kept.push(unit);
                continue;
            }
            // Exchange with a training unit of the same size whose ids stay covered.
            let mut swapped = None;
            for step in 0..train.len() {
                let j = (cursor + step) % train.len();
                let cand = &train[j];
                if cand.len() != unit.len() || !cov.removable(cand) {
                    continue;
                }
                cov.apply(&unit, 1);
                cov.apply(cand, -1);
                if cov.covers(cand) {
                    swapped = Some(j);
                    break;
                }
                cov.apply(cand, 1);
                cov.apply(&unit, -1);
            }
            match swapped {
                Some(j) => {
                    cursor = j + 1;
                    let out = std::mem::replace(&mut train[j], unit);
                    kept.push(out);
                    report.swapped += 1;
                }
                None => report.dropped += unit.len(),
            }
        }
        *pool = kept;
    }
    if report.dropped > 0 {
        warn!("split closure dropped {} evaluation triples with unseen entities", report.dropped);
    }

    let n_prompt = (cfg.prompt_fraction * valid.len() as f64).round() as usize;
    let prompt_units: Vec<Vec<Triple>> = valid.drain(..n_prompt).collect();

    let flatten = |units: Vec<Vec<Triple>>| {
        let mut v: Vec<Triple> = units.into_iter().flatten().collect();
        v.sort_by_key(|t| (t.lang, t.head, t.relation, t.tail));
        v
    };
    Ok((
        Split { train: flatten(train), valid: flatten(valid), test: flatten(test), prompt: flatten(prompt_units) },
        report,
    ))
}
