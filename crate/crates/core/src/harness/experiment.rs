//! End-to-end experiment: data, split, TransE, example construction, selector
//! training, reranking and scoring. Every stage seed comes from one master
//! seed, so configurations that differ in one toggle share everything else.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{compute_metrics, LangMetrics, MetricsReport};
use crate::error::{Error, Result};
use crate::ier::{final_rank, rerank_trace, RerankRecord};
use crate::kg::{
    gen_synthetic, ingest, make_splits, IngestConfig, KgStore, SplitConfig, SplitReport, SynthConfig, Triple,
};
use crate::kge::{train as train_kge, CandidateList, EmbeddingTable, Filter, KnownTails, TransEConfig};
use crate::numerics::rng::{fork, rng};
use crate::prompt::PromptConfig;
use crate::selector::{
    build_examples, hex, sample_neighbors, train_selector, ExampleConfig, RoutingRecord, SelectorConfig, SelectorModel,
    SelectorScorer, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// TSV triples; synthetic data is generated when unset.
    pub triples: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Candidates retrieved per test query.
    pub m: usize,
    pub n_t: usize,
    /// Languages scored; empty means all.
    pub languages: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { m: 30, n_t: 10, languages: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Grouped experts; off swaps in one plain low-rank adapter.
    pub kg: bool,
    /// Iterative reranking; off keeps a single round.
    pub ier: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { kg: true, ier: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub kge: TransEConfig,
    pub examples: ExampleConfig,
    pub selector: SelectorConfig,
    pub train: TrainConfig,
    pub prompt: PromptConfig,
    pub eval: EvalConfig,
    pub ablation: Ablation,
    /// Languages whose examples train the selector; empty means all.
    pub train_languages: Vec<String>,
    /// Target share of each training language; empty keeps the natural mix.
    pub language_mix: BTreeMap<String, f64>,
    /// Training-example total under `language_mix`; defaults to the pool size.
    pub mix_total: Option<usize>,
}

impl ExperimentConfig {
    /// Desk-scale synthetic benchmark: two languages, most facts shared.
    pub fn benchmark() -> Self {
        Self {
            synth: SynthConfig {
                n_entities: 150,
                n_relations: 10,
                languages: vec!["en".into(), "fr".into()],
                shared_fraction: 0.7,
                facts_per_entity: 6.0,
                ..Default::default()
            },
            split: SplitConfig { train: 0.7, valid: 0.2, test: 0.1, prompt_fraction: 0.75, ..Default::default() },
            kge: TransEConfig { dim: 32, epochs: 100, ..Default::default() },
            train: TrainConfig { lr: 3e-2, epochs: 30, batch_size: 16, seed: 0 },
            ..Default::default()
        }
    }

    /// Copy with every stage seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.synth.seed = fork(s, "synth");
        c.split.seed = fork(s, "split");
        c.kge.seed = fork(s, "kge");
        c.examples.seed = fork(s, "examples");
        c.selector.seed = fork(s, "selector");
        c.train.seed = fork(s, "train");
        if !c.ablation.kg {
            c.selector.n_groups = 1;
            c.selector.n_experts = 1;
        }
        if !c.ablation.ier {
            c.eval.n_t = 1;
        }
        c
    }

    /// SHA-256 of the resolved configuration's JSON.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(&self.resolved()).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let c = self.resolved();
        c.selector.validate()?;
        if c.eval.m == 0 || c.eval.n_t == 0 || c.eval.n_t > c.eval.m {
            return Err(Error::Config(format!("need 1 <= n_t <= m, got n_t={} m={}", c.eval.n_t, c.eval.m)));
        }
        if c.examples.m_min == 0 || c.examples.m_min > c.examples.m_max {
            return Err(Error::Config("need 1 <= examples.m_min <= examples.m_max".into()));
        }
        if !self.language_mix.is_empty() {
            let total: f64 = self.language_mix.values().sum();
            if (total - 1.0).abs() > 1e-9 || self.language_mix.values().any(|p| !(*p >= 0.0)) {
                return Err(Error::Config(format!("language_mix must be non-negative and sum to 1, got {total}")));
            }
            if !self.train_languages.is_empty() {
                if let Some(l) = self.language_mix.keys().find(|l| !self.train_languages.contains(l)) {
                    return Err(Error::Config(format!("language_mix names {l}, which is not a training language")));
                }
            }
        }
        if self.mix_total == Some(0) {
            return Err(Error::Config("mix_total must be positive".into()));
        }
        if self.data.triples.is_some() != self.data.labels.is_some() {
            return Err(Error::Config("data.triples and data.labels must be given together".into()));
        }
        Ok(())
    }

    /// Checks against the loaded store's languages.
    pub fn validate_languages(&self, store: &KgStore) -> Result<()> {
        let known: BTreeSet<&str> = store.languages().iter().map(|s| s.as_str()).collect();
        let named = self.train_languages.iter().chain(self.language_mix.keys()).chain(&self.eval.languages);
        for l in named {
            if !known.contains(l.as_str()) {
                return Err(Error::Config(format!("language {l} is not in the data")));
            }
        }
        Ok(())
    }
}

pub fn load_store(cfg: &ExperimentConfig) -> Result<KgStore> {
    let c = cfg.resolved();
    match (&c.data.triples, &c.data.labels) {
        (Some(t), Some(l)) => {
            let mut ic = IngestConfig::default();
            if !c.data.languages.is_empty() {
                ic.languages = c.data.languages.clone();
            }
            Ok(ingest(t, l, &ic)?.0)
        }
        _ => Ok(gen_synthetic(&c.synth)?.store),
    }
}

/// Top-`m` candidates per triple, skipping other known tails but never the gold.
pub fn gen_candidates(
    kge: &EmbeddingTable,
    triples: &[Triple],
    known: &KnownTails,
    m: usize,
) -> Result<Vec<(Triple, CandidateList)>> {
    triples
        .iter()
        .map(|t| Ok((*t, kge.retrieve(&t.query(), m, Filter::Known { known, keep: Some(t.tail) })?)))
        .collect()
}

/// Largest-remainder split of `total` by `shares`.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|a, b| (raw[*b] - raw[*b].floor()).total_cmp(&(raw[*a] - raw[*a].floor())).then(a.cmp(b)));
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Training triples after the language filter and optional resampling, with per-language counts.
pub fn training_triples(
    cfg: &ExperimentConfig,
    store: &KgStore,
    pool: &[Triple],
) -> Result<(Vec<Triple>, BTreeMap<String, usize>)> {
    let c = cfg.resolved();
    let allowed =
        |t: &Triple| c.train_languages.is_empty() || c.train_languages.iter().any(|l| l == store.lang_name(t.lang));
    let mut by_lang: BTreeMap<String, Vec<Triple>> = BTreeMap::new();
    for t in pool.iter().filter(|t| allowed(t)) {
        by_lang.entry(store.lang_name(t.lang).to_string()).or_default().push(*t);
    }
    let out: Vec<Triple> = if c.language_mix.is_empty() {
        by_lang.values().flatten().copied().collect()
    } else {
        let total = c.mix_total.unwrap_or_else(|| by_lang.values().map(Vec::len).sum());
        let langs: Vec<&String> = c.language_mix.keys().collect();
        let shares: Vec<f64> = langs.iter().map(|l| c.language_mix[*l]).collect();
        let mut out = Vec::with_capacity(total);
        for (lang, n) in langs.iter().zip(apportion(total, &shares)) {
            if n == 0 {
                continue;
            }
            let mut items = by_lang.get(*lang).cloned().unwrap_or_default();
            if items.is_empty() {
                return Err(Error::Config(format!("language_mix asks for {n} {lang} examples but none exist")));
            }
            items.shuffle(&mut rng(fork(c.seed, &format!("mix/{lang}"))));
            out.extend(items.iter().cycle().take(n).copied());
        }
        out
    };
    let mut counts = BTreeMap::new();
    for t in &out {
        *counts.entry(store.lang_name(t.lang).to_string()).or_default() += 1;
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub avg: LangMetrics,
    pub metrics: BTreeMap<String, LangMetrics>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOutcome {
    /// Final ranks with their query language.
    pub ranks: Vec<(usize, String)>,
    /// Retriever ranks for the same queries.
    pub kge_ranks: Vec<(usize, String)>,
    /// `by_round[t-1]` holds the ranks after `t` rounds.
    pub by_round: Vec<Vec<(usize, String)>>,
    pub records: Vec<RerankRecord>,
    pub routing: Vec<RoutingRecord>,
}

pub fn evaluate(
    model: &SelectorModel,
    kge: &EmbeddingTable,
    store: &KgStore,
    test: &[(Triple, CandidateList)],
    known: &KnownTails,
    n_t: usize,
) -> Result<EvalOutcome> {
    let mut out = EvalOutcome { by_round: vec![Vec::new(); n_t], ..Default::default() };
    for (sample, (t, list)) in test.iter().enumerate() {
        let q = t.query();
        let lang = store.lang_name(t.lang).to_string();
        let kge_rank = kge.rank_of(&q, t.tail, Filter::Known { known, keep: Some(t.tail) })?;
        let mut scorer = SelectorScorer::logging(model);
        let rounds_here = n_t.min(list.len());
        let (final_list, rounds) = rerank_trace(&q, &list.entities, &mut scorer, rounds_here)?;
        for (i, round) in rounds.iter().enumerate() {
            out.by_round[i].push((final_rank(&round.list_after(), t.tail, kge_rank), lang.clone()));
        }
        for i in rounds.len()..n_t {
            out.by_round[i].push((final_rank(&final_list.entities, t.tail, kge_rank), lang.clone()));
        }
        out.ranks.push((final_rank(&final_list.entities, t.tail, kge_rank), lang.clone()));
        out.kge_ranks.push((kge_rank, lang));
        out.records.push(RerankRecord::new(store, &q, &final_list, &rounds));
        if let Some((_, first)) = scorer.log.as_ref().and_then(|l| l.first()) {
            for (layer, d) in first.iter().enumerate() {
                out.routing.push(RoutingRecord::new(store, sample, layer, &q, d));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: MetricsReport,
    pub kge_report: MetricsReport,
    pub curve: Vec<CurvePoint>,
    pub loss_curve: Vec<f64>,
    pub training_counts: BTreeMap<String, usize>,
    pub n_examples: usize,
    pub dropped_examples: usize,
    pub split_report: SplitReport,
    pub routing: Vec<RoutingRecord>,
    pub records: Vec<RerankRecord>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let c = cfg.resolved();
    let digest = cfg.digest();
    let store = load_store(&c)?;
    c.validate_languages(&store)?;

    let (split, split_report) = make_splits(&store, &c.split)?;
    let (kge, _) = train_kge(&store, &split.train, &c.kge)?;
    let known = KnownTails::new(store.triples());

    let (train_triples, training_counts) = training_triples(&c, &store, &split.prompt)?;
    if train_triples.is_empty() {
        return Err(Error::Config("no training examples for the selected languages".into()));
    }
    let sources = gen_candidates(&kge, &train_triples, &known, c.examples.m_max)?;
    let (examples, dropped_examples) = build_examples(&sources, &c.examples)?;
    if examples.is_empty() {
        return Err(Error::Config("every training candidate list missed its gold tail".into()));
    }

    let neighbors = sample_neighbors(&store, &split.train, c.selector.n_neighbors, c.selector.seed)?;
    let mut model = SelectorModel::new(c.selector.clone(), &kge, store.languages().len(), neighbors)?;
    let loss_curve = train_selector(&mut model, &examples, &c.train)?;
    info!("selector trained on {} examples ({} dropped)", examples.len(), dropped_examples);

    let eval_langs = &c.eval.languages;
    let test: Vec<Triple> = split
        .test
        .iter()
        .filter(|t| eval_langs.is_empty() || eval_langs.iter().any(|l| l == store.lang_name(t.lang)))
        .copied()
        .collect();
    let test_sources = gen_candidates(&kge, &test, &known, c.eval.m)?;
    let outcome = evaluate(&model, &kge, &store, &test_sources, &known, c.eval.n_t)?;

    let mut report = compute_metrics(&outcome.ranks)?;
    report.config_digest = digest.clone();
    let mut kge_report = compute_metrics(&outcome.kge_ranks)?;
    kge_report.config_digest = digest;
    let curve = outcome
        .by_round
        .iter()
        .enumerate()
        .map(|(i, ranks)| {
            let r = compute_metrics(ranks)?;
            Ok(CurvePoint { t: i + 1, avg: r.avg, metrics: r.metrics })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentResult {
        report,
        kge_report,
        curve,
        loss_curve,
        training_counts,
        n_examples: examples.len(),
        dropped_examples,
        split_report,
        routing: outcome.routing,
        records: outcome.records,
    })
}

/// `t,lang,h1,h3,h10,mrr` rows, with `avg` as a language.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("t,lang,h1,h3,h10,mrr\n");
    for p in curve {
        for (lang, m) in p.metrics.iter().chain(std::iter::once((&"avg".to_string(), &p.avg))) {
            s.push_str(&format!("{},{lang},{},{},{},{}\n", p.t, m.h1, m.h3, m.h10, m.mrr));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_keeps_total() {
        for total in [0, 1, 7, 100, 333] {
            for shares in [vec![0.5, 0.5], vec![0.1, 0.2, 0.7], vec![1.0 / 3.0; 3]] {
                assert_eq!(apportion(total, &shares).iter().sum::<usize>(), total);
            }
        }
        assert_eq!(apportion(10, &[0.25, 0.75]), vec![3, 7]);
    }

    #[test]
    fn inconsistent_configs_fail_early() {
        let mut c = ExperimentConfig::benchmark();
        c.language_mix = BTreeMap::from([("en".into(), 0.5), ("fr".into(), 0.4)]);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::benchmark();
        c.eval.n_t = 31;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::benchmark();
        c.train_languages = vec!["de".into()];
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_changes_only_model_path() {
        let base = ExperimentConfig::benchmark();
        let off = ExperimentConfig { ablation: Ablation { kg: false, ier: false }, ..base.clone() };
        let (a, b) = (base.resolved(), off.resolved());
        assert_eq!((a.synth.seed, a.kge.seed, a.train.seed), (b.synth.seed, b.kge.seed, b.train.seed));
        assert_eq!((b.selector.n_groups, b.selector.n_experts, b.eval.n_t), (1, 1, 1));
        assert_ne!(base.digest(), off.digest());
    }
}
