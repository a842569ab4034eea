use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense handle of an entity inside a [`KgStore`] (row index in embedding tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityIx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationIx(pub u32);

/// Index into [`KgStore::languages`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LangIx(pub u16);

impl EntityIx {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl RelationIx {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl LangIx {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Stable external id, as it appears in data files.
    pub id: u64,
    pub labels: BTreeMap<String, String>,
    pub descriptions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: u64,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityIx,
    pub relation: RelationIx,
    pub tail: EntityIx,
    pub lang: LangIx,
}

impl Triple {
    /// Language-free content of the fact.
    pub fn content(&self) -> (EntityIx, RelationIx, EntityIx) {
        (self.head, self.relation, self.tail)
    }

    pub fn query(&self) -> Query {
        Query { head: self.head, relation: self.relation, lang: self.lang }
    }
}

/// Tail-masked form `(h, r, ?)` of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub head: EntityIx,
    pub relation: RelationIx,
    pub lang: LangIx,
}

/// External-id view of a triple used in JSON exports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub h: u64,
    pub r: u64,
    pub t: u64,
    pub lang: String,
}

/// Immutable multilingual knowledge graph. Entities and relations are kept in
/// ascending external-id order and triples in ascending
/// `(lang, head, relation, tail)` order, so two stores built from the same
/// facts compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct KgStore {
    languages: Vec<String>,
    entities: Vec<Entity>,
    relations: Vec<Relation>,
    triples: Vec<Triple>,
    entity_lookup: HashMap<u64, EntityIx>,
    relation_lookup: HashMap<u64, RelationIx>,
}

impl KgStore {
    /// Builds a store from already-resolved parts. Triples are sorted and
    /// deduplicated; the number of dropped duplicates is returned.
    pub fn new(
        languages: Vec<String>,
        mut entities: Vec<Entity>,
        mut relations: Vec<Relation>,
        triples: Vec<(u64, u64, u64, String)>,
    ) -> Result<(Self, usize)> {
        if languages.is_empty() {
            return Err(Error::Config("at least one language is required".into()));
        }
        entities.sort_by_key(|e| e.id);
        relations.sort_by_key(|r| r.id);
        for w in entities.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Config(format!("duplicate entity id {}", w[0].id)));
            }
        }
        for w in relations.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Config(format!("duplicate relation id {}", w[0].id)));
            }
        }
        if let Some(e) = entities.iter().find(|e| e.labels.is_empty()) {
            return Err(Error::Config(format!("entity {} has no label", e.id)));
        }
        let entity_lookup: HashMap<u64, EntityIx> =
            entities.iter().enumerate().map(|(i, e)| (e.id, EntityIx(i as u32))).collect();
        let relation_lookup: HashMap<u64, RelationIx> =
            relations.iter().enumerate().map(|(i, r)| (r.id, RelationIx(i as u32))).collect();

        let mut store = KgStore { languages, entities, relations, triples: Vec::new(), entity_lookup, relation_lookup };
        let mut resolved = Vec::with_capacity(triples.len());
        for (h, r, t, lang) in triples {
            let triple = Triple {
                head: store.entity(h)?,
                relation: store.relation(r)?,
                tail: store.entity(t)?,
                lang: store.lang(&lang)?,
            };
            resolved.push(triple);
        }
        let before = resolved.len();
        resolved.sort_by_key(|t| (t.lang, t.head, t.relation, t.tail));
        resolved.dedup();
        let duplicates = before - resolved.len();
        store.triples = resolved;
        Ok((store, duplicates))
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn lang_name(&self, lang: LangIx) -> &str {
        &self.languages[lang.idx()]
    }

    pub fn lang(&self, code: &str) -> Result<LangIx> {
        self.languages
            .iter()
            .position(|l| l == code)
            .map(|i| LangIx(i as u16))
            .ok_or_else(|| Error::Config(format!("unknown language tag {code:?}")))
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Resolves an external entity id.
    pub fn entity(&self, id: u64) -> Result<EntityIx> {
        self.entity_lookup.get(&id).copied().ok_or_else(|| Error::NotFound(format!("entity {id}")))
    }

    pub fn relation(&self, id: u64) -> Result<RelationIx> {
        self.relation_lookup.get(&id).copied().ok_or_else(|| Error::NotFound(format!("relation {id}")))
    }

    pub fn entity_info(&self, e: EntityIx) -> &Entity {
        &self.entities[e.idx()]
    }

    pub fn relation_info(&self, r: RelationIx) -> &Relation {
        &self.relations[r.idx()]
    }

    pub fn entity_id(&self, e: EntityIx) -> u64 {
        self.entities[e.idx()].id
    }

    pub fn relation_id(&self, r: RelationIx) -> u64 {
        self.relations[r.idx()].id
    }

    pub fn check_entity(&self, e: EntityIx) -> Result<()> {
        if e.idx() < self.entities.len() {
            Ok(())
        } else {
            Err(Error::NotFound(format!("entity index {}", e.0)))
        }
    }

    pub fn check_relation(&self, r: RelationIx) -> Result<()> {
        if r.idx() < self.relations.len() {
            Ok(())
        } else {
            Err(Error::NotFound(format!("relation index {}", r.0)))
        }
    }

    pub fn record(&self, t: &Triple) -> TripleRecord {
        TripleRecord {
            h: self.entity_id(t.head),
            r: self.relation_id(t.relation),
            t: self.entity_id(t.tail),
            lang: self.lang_name(t.lang).to_string(),
        }
    }

    pub fn from_record(&self, rec: &TripleRecord) -> Result<Triple> {
        Ok(Triple {
            head: self.entity(rec.h)?,
            relation: self.relation(rec.r)?,
            tail: self.entity(rec.t)?,
            lang: self.lang(&rec.lang)?,
        })
    }

    pub fn triple_counts_by_language(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.languages.iter().map(|l| (l.clone(), 0)).collect();
        for t in &self.triples {
            *counts.get_mut(self.lang_name(t.lang)).expect("language registered") += 1;
        }
        counts
    }
}

/// Picks a label in `lang`, falling back to the lexicographically first
/// language that has one. The flag is true when the fallback was used.
pub(crate) fn pick_label<'a>(labels: &'a BTreeMap<String, String>, lang: &str) -> Option<(&'a str, bool)> {
    if let Some(l) = labels.get(lang) {
        return Some((l.as_str(), false));
    }
    labels.values().next().map(|l| (l.as_str(), true))
}

impl KgStore {
    pub fn entity_label(&self, e: EntityIx, lang: &str) -> (&str, bool) {
        pick_label(&self.entities[e.idx()].labels, lang).expect("entities always carry a label")
    }

    pub fn relation_label(&self, r: RelationIx, lang: &str) -> (String, bool) {
        match pick_label(&self.relations[r.idx()].labels, lang) {
            Some((l, fb)) => (l.to_string(), fb),
            None => (format!("relation {}", self.relations[r.idx()].id), true),
        }
    }

    pub fn entity_description(&self, e: EntityIx, lang: &str) -> Option<(&str, bool)> {
        pick_label(&self.entities[e.idx()].descriptions, lang)
    }
}
