//! Training examples from retrieved candidate lists.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kg::{EntityIx, Query, Triple};
use crate::kge::CandidateList;
use crate::numerics::rng::{fork, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub m_min: usize,
    pub m_max: usize,
    pub seed: u64,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self { m_min: 25, m_max: 30, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: Query,
    pub candidates: Vec<EntityIx>,
    /// 0-based index of the gold tail in `candidates`.
    pub gold: usize,
}

/// Cuts each retrieved list to a uniform length in `[m_min, m_max]` and moves
/// the gold tail to a uniform position, so position carries no signal.
/// Lists that miss the gold are dropped; the count is returned.
pub fn build_examples(
    sources: &[(Triple, CandidateList)],
    cfg: &ExampleConfig,
) -> Result<(Vec<TrainingExample>, usize)> {
    if sources.is_empty() {
        return Err(Error::Config("no candidate lists to build examples from".into()));
    }
    if cfg.m_min == 0 || cfg.m_min > cfg.m_max {
        return Err(invalid!("need 1 <= m_min <= m_max, got {}..{}", cfg.m_min, cfg.m_max));
    }
    let mut r = rng(fork(cfg.seed, "examples"));
    let mut out = Vec::with_capacity(sources.len());
    let mut dropped = 0;
    for (triple, list) in sources {
        let m = r.gen_range(cfg.m_min..=cfg.m_max).min(list.len());
        let mut cands: Vec<EntityIx> = list.entities[..m].to_vec();
        let Some(at) = cands.iter().position(|e| *e == triple.tail) else {
            dropped += 1;
            continue;
        };
        cands.remove(at);
        let gold = r.gen_range(0..m);
        cands.insert(gold, triple.tail);
        out.push(TrainingExample { query: triple.query(), candidates: cands, gold });
    }
    out.shuffle(&mut r);
    Ok((out, dropped))
}
