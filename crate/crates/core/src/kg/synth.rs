//! Synthetic multilingual knowledge graphs.
//!
//! Entities get a latent position and a type. Each relation links a head type
//! to a tail type; tails are drawn near `z_h + d_r` in latent space, so the
//! graph is learnable by translation models but noisy. Symmetric relations
//! use `d_r = 0` and are emitted in both directions. A `shared_fraction` of
//! facts is emitted in every language, the rest in exactly one.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::store::{EntityIx, KgStore, LangIx, RelationIx, Triple, TripleRecord};
use super::{Entity, Relation};
use crate::error::{Error, Result};
use crate::numerics::rng::{fork, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub languages: Vec<String>,
    pub shared_fraction: f64,
    pub seed: u64,
    /// Distinct facts per entity; total facts = round(n_entities * this).
    pub facts_per_entity: f64,
    pub latent_dim: usize,
    pub n_types: usize,
    /// Softness of tail sampling; smaller means tails closer to `z_h + d_r`.
    pub temperature: f64,
    pub symmetric_fraction: f64,
    /// Relative weight of each language for language-specific facts.
    pub language_weights: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 12,
            languages: ["en", "fr", "it", "ja", "zh"].map(String::from).to_vec(),
            shared_fraction: 0.5,
            seed: 0,
            facts_per_entity: 6.0,
            latent_dim: 6,
            n_types: 4,
            temperature: 0.5,
            symmetric_fraction: 0.25,
            language_weights: None,
        }
    }
}

/// One emitted triple and the other languages that carry the same content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareRecord {
    pub triple: TripleRecord,
    pub shared_in: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub store: KgStore,
    /// Latent entity positions used by the generator (ground truth).
    pub latent: Vec<Vec<f64>>,
    pub entity_types: Vec<usize>,
    pub symmetric_relations: Vec<bool>,
}

fn entity_word(lang: &str) -> &'static str {
    match lang {
        "en" => "entity",
        "fr" => "entité",
        "it" => "entità",
        "ja" => "エンティティ",
        "zh" => "实体",
        _ => "item",
    }
}

fn relation_word(lang: &str) -> &'static str {
    match lang {
        "en" => "relation",
        "fr" => "relation",
        "it" => "relazione",
        "ja" => "関係",
        "zh" => "关系",
        _ => "link",
    }
}

fn description(lang: &str, label: &str, kind: usize) -> String {
    match lang {
        "en" => format!("{label} is a member of category {kind}."),
        "fr" => format!("{label} appartient à la catégorie {kind}."),
        "it" => format!("{label} appartiene alla categoria {kind}."),
        "ja" => format!("{label}はカテゴリ{kind}に属する。"),
        "zh" => format!("{label}属于类别{kind}。"),
        _ => format!("{label} ({kind})"),
    }
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let err = |m: String| Err(Error::Config(m));
    if !(0.0..=1.0).contains(&cfg.shared_fraction) {
        return err(format!("shared_fraction {} outside [0, 1]", cfg.shared_fraction));
    }
    if cfg.languages.is_empty() {
        return err("at least one language is required".into());
    }
    if cfg.n_types == 0 || cfg.n_entities < 2 * cfg.n_types {
        return err(format!(
            "need at least two entities per type ({} entities, {} types)",
            cfg.n_entities, cfg.n_types
        ));
    }
    if cfg.n_relations == 0 || cfg.latent_dim == 0 {
        return err("n_relations and latent_dim must be positive".into());
    }
    if !(cfg.temperature > 0.0) || !(0.0..=1.0).contains(&cfg.symmetric_fraction) {
        return err("temperature must be > 0 and symmetric_fraction in [0, 1]".into());
    }
    if !(cfg.facts_per_entity > 0.0) {
        return err("facts_per_entity must be positive".into());
    }
    if let Some(w) = &cfg.language_weights {
        if w.len() != cfg.languages.len() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return err("language_weights must be non-negative, one per language".into());
        }
    }
    Ok(())
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Synthetic> {
    validate(cfg)?;
    let mut rng = rng(fork(cfg.seed, "synth"));
    let n = cfg.n_entities;
    let k = cfg.latent_dim;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let latent: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| normal.sample(&mut rng)).collect()).collect();
    let mut entity_types: Vec<usize> = (0..n).map(|i| i % cfg.n_types).collect();
    entity_types.shuffle(&mut rng);
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_types];
    for (e, t) in entity_types.iter().enumerate() {
        by_type[*t].push(e);
    }

    let n_symmetric = (cfg.symmetric_fraction * cfg.n_relations as f64).round() as usize;
    let symmetric_relations: Vec<bool> = (0..cfg.n_relations).map(|r| r < n_symmetric).collect();
    let mut rel_types = Vec::with_capacity(cfg.n_relations);
    let mut translations = Vec::with_capacity(cfg.n_relations);
    for &sym in &symmetric_relations {
        let ht = rng.gen_range(0..cfg.n_types);
        let tt = if sym { ht } else { rng.gen_range(0..cfg.n_types) };
        rel_types.push((ht, tt));
        translations.push(if sym {
            vec![0.0; k]
        } else {
            (0..k).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>()
        });
    }

    let target = (cfg.facts_per_entity * n as f64).round() as usize;
    let mut facts: Vec<(usize, usize, usize)> = Vec::with_capacity(target);
    let mut seen = HashSet::new();
    let max_attempts = 200 * target.max(1);
    let mut attempts = 0;
    let mut r = 0;
    while facts.len() < target {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config(format!(
                "cannot place {target} distinct facts on {n} entities; only {} found",
                facts.len()
            )));
        }
        r = (r + 1) % cfg.n_relations;
        let (ht, tt) = rel_types[r];
        let h = *by_type[ht].choose(&mut rng).expect("types are non-empty");
        let anchor: Vec<f64> = latent[h].iter().zip(&translations[r]).map(|(a, b)| a + b).collect();
        let pool: Vec<usize> = by_type[tt].iter().copied().filter(|&t| t != h).collect();
        let dists: Vec<f64> =
            pool.iter().map(|&t| latent[t].iter().zip(&anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).collect();
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = dists.iter().map(|d| (-(d - min) / cfg.temperature).exp()).collect();
        let t = pool[WeightedIndex::new(&weights).expect("at least one finite weight").sample(&mut rng)];
        if seen.contains(&(h, r, t)) {
            continue;
        }
        seen.insert((h, r, t));
        facts.push((h, r, t));
        if symmetric_relations[r] && facts.len() < target && seen.insert((t, r, h)) {
            facts.push((t, r, h));
        }
    }

    let n_langs = cfg.languages.len();
    let mut order: Vec<usize> = (0..facts.len()).collect();
    order.shuffle(&mut rng);
    let n_shared = (cfg.shared_fraction * facts.len() as f64).round() as usize;
    let weights = cfg.language_weights.clone().unwrap_or_else(|| vec![1.0; n_langs]);
    let lang_dist = WeightedIndex::new(&weights).expect("validated weights");
    let mut emitted = Vec::new();
    for (rank, &f) in order.iter().enumerate() {
        let (h, r, t) = facts[f];
        if rank < n_shared {
            for lang in &cfg.languages {
                emitted.push((h as u64, r as u64, t as u64, lang.clone()));
            }
        } else {
            let lang = &cfg.languages[lang_dist.sample(&mut rng)];
            emitted.push((h as u64, r as u64, t as u64, lang.clone()));
        }
    }

    let entities = (0..n)
        .map(|e| {
            let mut labels = BTreeMap::new();
            let mut descriptions = BTreeMap::new();
            for lang in &cfg.languages {
                let label = format!("{} {e}", entity_word(lang));
                descriptions.insert(lang.clone(), description(lang, &label, entity_types[e]));
                labels.insert(lang.clone(), label);
            }
            Entity { id: e as u64, labels, descriptions }
        })
        .collect();
    let relations = (0..cfg.n_relations)
        .map(|r| Relation {
            id: r as u64,
            labels: cfg.languages.iter().map(|l| (l.clone(), format!("{} {r}", relation_word(l)))).collect(),
        })
        .collect();
    let (store, _) = KgStore::new(cfg.languages.clone(), entities, relations, emitted)?;
    Ok(Synthetic { store, latent, entity_types, symmetric_relations })
}

/// For every triple, the other languages in which the same content appears.
pub fn language_manifest(store: &KgStore) -> Vec<ShareRecord> {
    let mut langs: BTreeMap<(EntityIx, RelationIx, EntityIx), Vec<LangIx>> = BTreeMap::new();
    for t in store.triples() {
        langs.entry(t.content()).or_default().push(t.lang);
    }
    store
        .triples()
        .iter()
        .map(|t| ShareRecord {
            triple: store.record(t),
            shared_in: langs[&t.content()]
                .iter()
                .filter(|l| **l != t.lang)
                .map(|l| store.lang_name(*l).to_string())
                .collect(),
        })
        .collect()
}

/// For each `query` triple, the languages whose `train` list carries the same content.
pub fn share_manifest(store: &KgStore, train: &[Triple], queries: &[Triple]) -> Vec<ShareRecord> {
    let mut langs: BTreeMap<(EntityIx, RelationIx, EntityIx), Vec<LangIx>> = BTreeMap::new();
    for t in train {
        langs.entry(t.content()).or_default().push(t.lang);
    }
    queries
        .iter()
        .map(|t| {
            let mut shared: Vec<LangIx> = langs.get(&t.content()).cloned().unwrap_or_default();
            shared.sort();
            shared.dedup();
            ShareRecord {
                triple: store.record(t),
                shared_in: shared.iter().map(|l| store.lang_name(*l).to_string()).collect(),
            }
        })
        .collect()
}

/// Fraction of distinct `(h, r, t)` contents emitted in more than one language.
pub fn measured_shared_ratio(store: &KgStore) -> f64 {
    let mut langs: BTreeMap<(EntityIx, RelationIx, EntityIx), usize> = BTreeMap::new();
    for t in store.triples() {
        *langs.entry(t.content()).or_default() += 1;
    }
    if langs.is_empty() {
        return 0.0;
    }
    langs.values().filter(|c| **c > 1).count() as f64 / langs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(shared: f64) -> SynthConfig {
        SynthConfig { n_entities: 200, shared_fraction: shared, seed: 11, ..Default::default() }
    }

    #[test]
    fn fully_shared_has_equal_language_counts() {
        let s = gen_synthetic(&cfg(1.0)).unwrap();
        let counts = s.store.triple_counts_by_language();
        let first = *counts.values().next().unwrap();
        assert!(first > 0);
        assert!(counts.values().all(|c| *c == first));
        assert_eq!(first, 1200);
    }

    #[test]
    fn unshared_content_appears_once() {
        let s = gen_synthetic(&cfg(0.0)).unwrap();
        let mut seen = HashSet::new();
        for t in s.store.triples() {
            assert!(seen.insert(t.content()), "content repeated across languages");
        }
        assert_eq!(measured_shared_ratio(&s.store), 0.0);
    }

    #[test]
    fn half_shared_ratio_is_measured() {
        let s = gen_synthetic(&cfg(0.5)).unwrap();
        let ratio = measured_shared_ratio(&s.store);
        assert!((ratio - 0.5).abs() <= 0.05, "{ratio}");
    }

    #[test]
    fn same_seed_same_graph() {
        let a = gen_synthetic(&cfg(0.3)).unwrap();
        let b = gen_synthetic(&cfg(0.3)).unwrap();
        assert_eq!(a.store, b.store);
        let c = gen_synthetic(&SynthConfig { seed: 12, ..cfg(0.3) }).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn infeasible_configs_rejected() {
        let bad = SynthConfig { n_entities: 3, ..cfg(0.5) };
        assert!(matches!(gen_synthetic(&bad), Err(Error::Config(_))));
        let bad = SynthConfig { shared_fraction: 1.5, ..cfg(0.5) };
        assert!(matches!(gen_synthetic(&bad), Err(Error::Config(_))));
        let dense = SynthConfig { n_entities: 8, n_relations: 1, facts_per_entity: 50.0, ..cfg(0.5) };
        assert!(matches!(gen_synthetic(&dense), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_lists_other_languages() {
        let s = gen_synthetic(&cfg(1.0)).unwrap();
        let m = language_manifest(&s.store);
        assert!(m.iter().all(|r| r.shared_in.len() == 4 && !r.shared_in.contains(&r.triple.lang)));
    }
}
