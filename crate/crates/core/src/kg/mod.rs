//! Knowledge-graph data model, file formats, synthetic generation and splits.

mod io;
mod split;
mod store;
pub mod synth;

use std::collections::HashMap;

use rand::seq::index::sample;

pub use io::{
    export, ingest, read_jsonl, read_triples, write_jsonl, write_labels, write_triples, IngestConfig, IngestReport,
    LabelKind, LabelRecord,
};
pub use split::{make_splits, Split, SplitConfig, SplitMode, SplitReport};
pub use store::{Entity, EntityIx, KgStore, LangIx, Query, Relation, RelationIx, Triple, TripleRecord};
pub use synth::{gen_synthetic, ShareRecord, SynthConfig, Synthetic};

use crate::error::{Error, Result};
use crate::numerics::rng::rng;

/// Training triples indexed by the entities they mention.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    n_entities: usize,
    triples: Vec<Triple>,
    by_entity: HashMap<EntityIx, Vec<usize>>,
}

impl NeighborIndex {
    pub fn new(store: &KgStore, train: &[Triple]) -> Self {
        let mut by_entity: HashMap<EntityIx, Vec<usize>> = HashMap::new();
        for (i, t) in train.iter().enumerate() {
            by_entity.entry(t.head).or_default().push(i);
            if t.tail != t.head {
                by_entity.entry(t.tail).or_default().push(i);
            }
        }
        Self { n_entities: store.n_entities(), triples: train.to_vec(), by_entity }
    }

    /// Up to `k` training triples containing `entity`, sampled without
    /// replacement; the same seed gives the same list.
    pub fn neighbors(&self, entity: EntityIx, k: usize, seed: u64) -> Result<Vec<Triple>> {
        if entity.idx() >= self.n_entities {
            return Err(Error::NotFound(format!("entity index {}", entity.0)));
        }
        let Some(all) = self.by_entity.get(&entity) else { return Ok(Vec::new()) };
        if all.len() <= k {
            return Ok(all.iter().map(|i| self.triples[*i]).collect());
        }
        let mut rng = rng(seed);
        Ok(sample(&mut rng, all.len(), k).into_iter().map(|j| self.triples[all[j]]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (KgStore, Vec<Triple>) {
        let cfg = SynthConfig { n_entities: 40, facts_per_entity: 4.0, seed: 1, ..Default::default() };
        let s = gen_synthetic(&cfg).unwrap().store;
        let train = s.triples().to_vec();
        (s, train)
    }

    #[test]
    fn fewer_than_k_returns_all() {
        let (s, _) = tiny();
        let train = vec![s.triples()[0], s.triples()[1]];
        let e = train[0].head;
        let idx = NeighborIndex::new(&s, &train);
        let expected = train.iter().filter(|t| t.head == e || t.tail == e).count();
        assert_eq!(idx.neighbors(e, 6, 0).unwrap().len(), expected);
    }

    #[test]
    fn k_zero_and_determinism() {
        let (s, train) = tiny();
        let idx = NeighborIndex::new(&s, &train);
        let e = train[0].head;
        assert!(idx.neighbors(e, 0, 4).unwrap().is_empty());
        let a = idx.neighbors(e, 3, 4).unwrap();
        assert_eq!(a, idx.neighbors(e, 3, 4).unwrap());
        assert!(a.len() <= 3);
        assert!(a.iter().all(|t| t.head == e || t.tail == e));
        assert!(matches!(idx.neighbors(EntityIx(10_000), 3, 0), Err(Error::NotFound(_))));
    }
}
