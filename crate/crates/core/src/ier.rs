//! Iterative entity reranking.
//!
//! Round `t` (1-based) asks the scorer for one entity among the remaining
//! candidates `M(t)`, removes it, and moves it to position `t` of the running
//! list `L(t)`. After `N_t` rounds the first `N_t` positions hold the picks in
//! order and the rest keep their initial relative order.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kg::{EntityIx, KgStore, Query};

/// Chooses one entity from the remaining candidates of a query.
pub trait Scorer {
    fn pick(&mut self, query: &Query, remaining: &[EntityIx]) -> Result<EntityIx>;
}

impl<F> Scorer for F
where
    F: FnMut(&Query, &[EntityIx]) -> Result<EntityIx>,
{
    fn pick(&mut self, query: &Query, remaining: &[EntityIx]) -> Result<EntityIx> {
        self(query, remaining)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub entities: Vec<EntityIx>,
    /// Index of the list: `N_t + 1` for a final ranking.
    pub round: usize,
}

/// State entering round `t` and the entity picked in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub t: usize,
    pub remaining: Vec<EntityIx>,
    pub list: Vec<EntityIx>,
    pub pick: EntityIx,
}

impl Round {
    /// `L(t+1)`: the list after this round's insertion.
    pub fn list_after(&self) -> Vec<EntityIx> {
        let mut out: Vec<EntityIx> = self.list.iter().copied().filter(|e| *e != self.pick).collect();
        out.insert(self.t - 1, self.pick);
        out
    }
}

fn check(initial: &[EntityIx], n_t: usize) -> Result<()> {
    if n_t == 0 || n_t > initial.len() {
        return Err(invalid!("N_t must lie in [1, {}], got {n_t}", initial.len()));
    }
    let mut seen = std::collections::HashSet::with_capacity(initial.len());
    if let Some(dup) = initial.iter().find(|e| !seen.insert(**e)) {
        return Err(invalid!("candidate {} appears twice", dup.0));
    }
    Ok(())
}

/// Runs `n_t` rounds and returns every intermediate state.
pub fn rerank_trace<S: Scorer + ?Sized>(
    query: &Query,
    initial: &[EntityIx],
    scorer: &mut S,
    n_t: usize,
) -> Result<(RankedList, Vec<Round>)> {
    check(initial, n_t)?;
    let mut remaining = initial.to_vec();
    let mut list = initial.to_vec();
    let mut rounds = Vec::with_capacity(n_t);
    for t in 1..=n_t {
        let pick = scorer.pick(query, &remaining)?;
        let Some(at) = remaining.iter().position(|e| *e == pick) else {
            return Err(Error::ContractViolation(format!(
                "scorer picked entity {} outside the {} remaining candidates in round {t}",
                pick.0,
                remaining.len()
            )));
        };
        let round = Round { t, remaining: remaining.clone(), list: list.clone(), pick };
        remaining.remove(at);
        list = round.list_after();
        rounds.push(round);
    }
    Ok((RankedList { entities: list, round: n_t + 1 }, rounds))
}

pub fn rerank<S: Scorer + ?Sized>(
    query: &Query,
    initial: &[EntityIx],
    scorer: &mut S,
    n_t: usize,
) -> Result<RankedList> {
    rerank_trace(query, initial, scorer, n_t).map(|(list, _)| list)
}

/// Rank of `gold` in a reranked list; when the candidates missed it, the
/// retriever's own rank (necessarily beyond the list) stands in.
pub fn final_rank(list: &[EntityIx], gold: EntityIx, retriever_rank: usize) -> usize {
    match list.iter().position(|e| *e == gold) {
        Some(p) => p + 1,
        None => retriever_rank.max(list.len() + 1),
    }
}

/// One line of the rerank JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub query: QueryRecord,
    pub final_order: Vec<u64>,
    pub picks: Vec<u64>,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub h: u64,
    pub r: u64,
    pub lang: String,
}

impl QueryRecord {
    pub fn new(store: &KgStore, q: &Query) -> Self {
        Self { h: store.entity_id(q.head), r: store.relation_id(q.relation), lang: store.lang_name(q.lang).to_string() }
    }
}

impl RerankRecord {
    pub fn new(store: &KgStore, query: &Query, list: &RankedList, rounds: &[Round]) -> Self {
        Self {
            query: QueryRecord::new(store, query),
            final_order: list.entities.iter().map(|e| store.entity_id(*e)).collect(),
            picks: rounds.iter().map(|r| store.entity_id(r.pick)).collect(),
            n_t: rounds.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{LangIx, RelationIx};

    fn q() -> Query {
        Query { head: EntityIx(0), relation: RelationIx(0), lang: LangIx(0) }
    }

    fn ents(xs: &[u32]) -> Vec<EntityIx> {
        xs.iter().map(|x| EntityIx(*x)).collect()
    }

    #[test]
    fn first_pick_is_fixed_point() {
        let init = ents(&[5, 3, 9, 1]);
        let mut first = |_: &Query, rem: &[EntityIx]| Ok(rem[0]);
        for n_t in 1..=4 {
            assert_eq!(rerank(&q(), &init, &mut first, n_t).unwrap().entities, init);
        }
    }

    #[test]
    fn last_pick_reverses() {
        let mut last = |_: &Query, rem: &[EntityIx]| Ok(*rem.last().unwrap());
        let (list, rounds) = rerank_trace(&q(), &ents(&[1, 2, 3]), &mut last, 3).unwrap();
        assert_eq!(list.entities, ents(&[3, 2, 1]));
        assert_eq!(list.round, 4);
        assert_eq!(rounds.iter().map(|r| r.pick).collect::<Vec<_>>(), ents(&[3, 2, 1]));
        // Middle state: c moved to the front, b still after a.
        assert_eq!(rounds[1].list, ents(&[3, 1, 2]));
    }

    #[test]
    fn contract_and_argument_errors() {
        let init = ents(&[1, 2, 3]);
        let mut rogue = |_: &Query, _: &[EntityIx]| Ok(EntityIx(77));
        assert!(matches!(rerank(&q(), &init, &mut rogue, 1), Err(Error::ContractViolation(_))));
        let mut first = |_: &Query, rem: &[EntityIx]| Ok(rem[0]);
        assert!(matches!(rerank(&q(), &init, &mut first, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(rerank(&q(), &init, &mut first, 0), Err(Error::InvalidArgument(_))));
        assert!(rerank(&q(), &ents(&[1, 1]), &mut first, 1).is_err());
        // A picked entity is no longer available.
        let mut again = |_: &Query, _: &[EntityIx]| Ok(EntityIx(2));
        assert!(matches!(rerank(&q(), &init, &mut again, 2), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn gold_absent_uses_retriever_rank() {
        assert_eq!(final_rank(&ents(&[4, 5]), EntityIx(5), 9), 2);
        assert_eq!(final_rank(&ents(&[4, 5]), EntityIx(6), 40), 40);
    }
}
