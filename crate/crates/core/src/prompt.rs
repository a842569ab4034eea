//! Text prompts `[Q; D; N; M_c]`: query, head description, neighbor triples and
//! candidate list, in the layout used for instruction tuning.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ier::QueryRecord;
use crate::kg::{EntityIx, KgStore, Query};
use crate::selector::NeighborTable;

/// Bumped whenever the rendered bytes change.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub n_neighbors: usize,
    /// Characters kept from `"label, description"`.
    pub desc_limit: usize,
    /// Render the neighbor header with an empty list when there are no neighbors.
    pub keep_empty_sections: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { n_neighbors: 6, desc_limit: 256, keep_empty_sections: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub query_text: String,
    pub description_text: String,
    pub neighbor_text: String,
    pub candidate_text: String,
    pub candidate_names: Vec<String>,
    pub rendered: String,
}

/// Display names per language, with `" (id)"` appended to labels that more
/// than one entity shares.
#[derive(Debug, Clone)]
pub struct LabelIndex {
    lang: String,
    ambiguous: HashMap<String, usize>,
}

impl LabelIndex {
    pub fn new(store: &KgStore, lang: &str) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for e in 0..store.n_entities() {
            let (label, _) = store.entity_label(EntityIx(e as u32), lang);
            *counts.entry(label.to_string()).or_default() += 1;
        }
        counts.retain(|_, c| *c > 1);
        Self { lang: lang.to_string(), ambiguous: counts }
    }

    pub fn name(&self, store: &KgStore, e: EntityIx) -> String {
        let (label, fallback) = store.entity_label(e, &self.lang);
        if fallback {
            warn!("entity {} has no {} label; using another language", store.entity_id(e), self.lang);
        }
        if self.ambiguous.contains_key(label) {
            format!("{label} ({})", store.entity_id(e))
        } else {
            label.to_string()
        }
    }

    /// Inverse of [`name`](Self::name).
    pub fn resolve(&self, store: &KgStore, name: &str) -> Result<EntityIx> {
        if let Some(open) = name.rfind(" (") {
            if let Some(id) = name[open + 2..].strip_suffix(')').and_then(|s| s.parse::<u64>().ok()) {
                if self.ambiguous.contains_key(&name[..open]) {
                    return store.entity(id);
                }
            }
        }
        if self.ambiguous.contains_key(name) {
            return Err(Error::InvalidArgument(format!("label {name:?} is ambiguous")));
        }
        (0..store.n_entities())
            .map(|e| EntityIx(e as u32))
            .find(|e| store.entity_label(*e, &self.lang).0 == name)
            .ok_or_else(|| Error::NotFound(format!("no entity named {name:?}")))
    }
}

fn truncate_chars(s: &str, limit: usize) -> String {
    s.chars().take(limit).collect()
}

pub fn build_prompt(
    query: &Query,
    store: &KgStore,
    labels: &LabelIndex,
    candidates: &[EntityIx],
    neighbors: &NeighborTable,
    cfg: &PromptConfig,
) -> Result<Prompt> {
    store.check_entity(query.head)?;
    store.check_relation(query.relation)?;
    for c in candidates {
        store.check_entity(*c)?;
    }
    let lang = store.lang_name(query.lang);
    let h = labels.name(store, query.head);
    let (r, _) = store.relation_label(query.relation, lang);

    let query_text = format!("Given a triplet with a missing tail entity t: ({h}, {r}, t).");

    let desc = match store.entity_description(query.head, lang) {
        Some((d, _)) => format!("{h}, {d}"),
        None => h.clone(),
    };
    let description_text = format!(
        "The following provides descriptive information about entity {h}:\n{}",
        truncate_chars(&desc, cfg.desc_limit)
    );

    let sampled = neighbors.get(query.head.idx()).map(|v| v.as_slice()).unwrap_or(&[]);
    let triples: Vec<String> = sampled
        .iter()
        .take(cfg.n_neighbors)
        .map(|(a, rel, b)| {
            let (rl, _) = store.relation_label(*rel, lang);
            format!("({}, {rl}, {})", labels.name(store, *a), labels.name(store, *b))
        })
        .collect();
    let neighbor_text = if triples.is_empty() && !cfg.keep_empty_sections {
        String::new()
    } else {
        format!("Here are some triplets containing entity {h}:\n[{}]", triples.join("; "))
    };

    let candidate_names: Vec<String> = candidates.iter().map(|c| labels.name(store, *c)).collect();
    let candidate_text = format!(
        "What is the entity name of t? Select one from the list of entities below: [{}]",
        candidate_names.join("; ")
    );

    let mut parts = vec![query_text.as_str(), description_text.as_str()];
    if !neighbor_text.is_empty() {
        parts.push(&neighbor_text);
    }
    parts.push(&candidate_text);
    parts.push("[Answer]: ");
    let rendered = parts.join("\n\n");
    Ok(Prompt { query_text, description_text, neighbor_text, candidate_text, candidate_names, rendered })
}

/// One line of the prompt JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub query: QueryRecord,
    pub prompt: String,
    pub gold: u64,
    pub candidates: Vec<u64>,
}

impl PromptRecord {
    pub fn new(store: &KgStore, query: &Query, prompt: &Prompt, gold: EntityIx, candidates: &[EntityIx]) -> Self {
        Self {
            query: QueryRecord::new(store, query),
            prompt: prompt.rendered.clone(),
            gold: store.entity_id(gold),
            candidates: candidates.iter().map(|c| store.entity_id(*c)).collect(),
        }
    }
}
