//! File-backed pipeline stages. Each stage reads its inputs from an output
//! directory, writes its artifacts next to them and records the config digest,
//! so running the stages in order reproduces [`run_experiment`] exactly.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.json                      resolved config with its digest
//! kg/triples.tsv, kg/labels.jsonl  the store
//! split/{train,valid,test,prompt}.tsv, split/report.json
//! kge/transe.bin (+ .json sidecar)
//! candidates/prompt.jsonl, candidates/test.jsonl
//! prompts/train.jsonl, prompts/test.jsonl
//! selector/ (checkpoint), selector/loss.csv, selector/report.json
//! rerank/records.jsonl, rerank/routing.jsonl
//! eval/metrics.json, eval/kge_metrics.json, eval/curve.csv
//! routing/by_language.csv, routing/by_relation.csv
//! ablate/ablation.json, flops/flops.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{curve_csv, evaluate, gen_candidates, run_experiment, training_triples};
use super::flops::{report_flops, FlopsConfig, FlopsReport};
use super::metrics::{compute_metrics, MetricsReport};
use super::routing::export_routing_analysis;
use super::{Ablation, CurvePoint, ExperimentConfig};
use crate::error::{Error, Result};
use crate::ier::{final_rank, rerank_trace, RerankRecord};
use crate::kg::{
    export, gen_synthetic, ingest, make_splits, read_jsonl, read_triples, write_jsonl, write_triples, EntityIx,
    IngestConfig, KgStore, Query, Triple,
};
use crate::kge::{
    load_checkpoint, save_checkpoint, train as train_kge, CandidateList, CandidateRecord, CheckpointSidecar,
    EmbeddingTable, Filter, KnownTails,
};
use crate::prompt::{build_prompt, LabelIndex, PromptRecord};
use crate::selector::{
    build_examples, load_selector, loss_curve_csv, sample_neighbors, save_selector, train_selector, RoutingRecord,
    SelectorModel, N_FEATURES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Synth,
    Split,
    TrainKge,
    GenCandidates,
    BuildPrompts,
    TrainAdapter,
    Rerank,
    Eval,
    Ablate,
    RouteAnalyze,
    Flops,
}

impl Stage {
    /// Stages from data to metrics, in dependency order. `Ingest` replaces
    /// `Synth` when the config names data files.
    pub const PIPELINE: [Stage; 8] = [
        Stage::Synth,
        Stage::Split,
        Stage::TrainKge,
        Stage::GenCandidates,
        Stage::TrainAdapter,
        Stage::Rerank,
        Stage::Eval,
        Stage::RouteAnalyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Split => "split",
            Stage::TrainKge => "train-kge",
            Stage::GenCandidates => "gen-candidates",
            Stage::BuildPrompts => "build-prompts",
            Stage::TrainAdapter => "train-adapter",
            Stage::Rerank => "rerank",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
            Stage::RouteAnalyze => "route-analyze",
            Stage::Flops => "flops",
        }
    }
}

/// Knobs that belong to one invocation rather than to the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOptions {
    /// Consecutive master seeds swept by `ablate`.
    pub seeds: usize,
    /// Average tokens per sample for `flops`.
    pub tokens: f64,
}

impl Default for StageOptions {
    fn default() -> Self {
        Self { seeds: 1, tokens: 3.0 }
    }
}

/// Reads a TOML or JSON config, chosen by extension (`.json` is JSON).
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct ConfigFile<'a> {
    digest: String,
    config: &'a ExperimentConfig,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct Dir(PathBuf);

impl Dir {
    fn at(&self, rel: &str) -> PathBuf {
        self.0.join(rel)
    }

    fn store(&self) -> Result<KgStore> {
        let langs: Vec<String> = read_json(&self.at("kg/languages.json"))?;
        let cfg = IngestConfig { languages: langs };
        Ok(ingest(&self.at("kg/triples.tsv"), &self.at("kg/labels.jsonl"), &cfg)?.0)
    }

    fn split_part(&self, store: &KgStore, part: &str) -> Result<Vec<Triple>> {
        read_triples(store, &self.at(&format!("split/{part}.tsv")))
    }

    fn kge(&self) -> Result<EmbeddingTable> {
        Ok(load_checkpoint(&self.at("kge/transe.bin"))?.0)
    }

    fn candidates(&self, store: &KgStore, part: &str) -> Result<Vec<(Triple, CandidateList)>> {
        let recs: Vec<CandidateRecord> = read_jsonl(&self.at(&format!("candidates/{part}.jsonl")))?;
        recs.iter().map(|r| from_candidate_record(store, r)).collect()
    }
}

fn to_candidate_record(store: &KgStore, t: &Triple, list: &CandidateList) -> CandidateRecord {
    let rec = store.record(t);
    CandidateRecord {
        h: rec.h,
        r: rec.r,
        lang: rec.lang,
        gold: rec.t,
        candidates: list.entities.iter().map(|e| store.entity_id(*e)).collect(),
        scores: list.scores.clone(),
    }
}

fn from_candidate_record(store: &KgStore, r: &CandidateRecord) -> Result<(Triple, CandidateList)> {
    let t = store.from_record(&crate::kg::TripleRecord { h: r.h, r: r.r, t: r.gold, lang: r.lang.clone() })?;
    let entities = r.candidates.iter().map(|id| store.entity(*id)).collect::<Result<Vec<EntityIx>>>()?;
    Ok((t, CandidateList { query: t.query(), entities, scores: r.scores.clone() }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelectorReport {
    config_digest: String,
    n_examples: usize,
    dropped_examples: usize,
    training_counts: BTreeMap<String, usize>,
}

/// One ablation setting across the seed sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub ablation: Ablation,
    /// Average MRR per seed.
    pub mrr: Vec<f64>,
    pub reports: Vec<MetricsReport>,
}

/// Paired difference `a - b` over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// Mean difference over its standard deviation; zero when the deviation is.
    pub dz: f64,
}

pub fn paired_effect(a: &[f64], b: &[f64]) -> Result<Effect> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument("paired effect needs equal, non-empty samples".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean_diff = d.iter().sum::<f64>() / n;
    let sd_diff =
        if d.len() > 1 { (d.iter().map(|x| (x - mean_diff).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let dz = if sd_diff > 0.0 { mean_diff / sd_diff } else { 0.0 };
    Ok(Effect { mean_diff, sd_diff, dz })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    /// Full minus `w/o kg`, and `w/o kg` minus `w/o kg+ier`, on average MRR.
    pub effects: BTreeMap<String, Effect>,
}

/// Runs the full pipeline and both ablations for `n_seeds` consecutive master seeds.
pub fn run_ablation(cfg: &ExperimentConfig, n_seeds: usize) -> Result<AblationReport> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let settings = [
        ("full", Ablation { kg: true, ier: true }),
        ("w/o kg", Ablation { kg: false, ier: true }),
        ("w/o kg+ier", Ablation { kg: false, ier: false }),
    ];
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| cfg.seed + i).collect();
    let mut runs = Vec::new();
    for (name, ablation) in settings {
        let mut run = AblationRun { name: name.into(), ablation, mrr: Vec::new(), reports: Vec::new() };
        for seed in &seeds {
            let c = ExperimentConfig { seed: *seed, ablation, ..cfg.clone() };
            let report = run_experiment(&c)?.report;
            run.mrr.push(report.avg.mrr);
            run.reports.push(report);
        }
        runs.push(run);
    }
    let effects = BTreeMap::from([
        ("full - w/o kg".to_string(), paired_effect(&runs[0].mrr, &runs[1].mrr)?),
        ("w/o kg - w/o kg+ier".to_string(), paired_effect(&runs[1].mrr, &runs[2].mrr)?),
    ]);
    Ok(AblationReport { seeds, runs, effects })
}

/// FLOP model of the configured selector host.
pub fn flops_config(cfg: &ExperimentConfig) -> FlopsConfig {
    let c = cfg.resolved();
    let features = if c.selector.features { N_FEATURES } else { 0 };
    FlopsConfig {
        n_layers: c.selector.n_blocks,
        hidden: c.kge.dim + features,
        ffn_mult: 1,
        mixing: true,
        rank: c.selector.rank,
        n_groups: c.selector.n_groups,
        n_experts: c.selector.n_experts,
    }
}

#[derive(Serialize)]
struct FlopsFile {
    config_digest: String,
    config: FlopsConfig,
    avg_tokens: f64,
    report: FlopsReport,
}

/// Runs one stage against `out`.
pub fn run_stage(stage: Stage, cfg: &ExperimentConfig, out: &Path, opts: &StageOptions) -> Result<()> {
    cfg.validate()?;
    let c = cfg.resolved();
    let digest = cfg.digest();
    let dir = Dir(out.to_path_buf());
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&dir.at("config.json"), &ConfigFile { digest: digest.clone(), config: &c })?;

    match stage {
        Stage::Ingest | Stage::Synth => {
            let store = if stage == Stage::Ingest {
                let (Some(t), Some(l)) = (&c.data.triples, &c.data.labels) else {
                    return Err(Error::Config("ingest needs data.triples and data.labels".into()));
                };
                let mut ic = IngestConfig::default();
                if !c.data.languages.is_empty() {
                    ic.languages = c.data.languages.clone();
                }
                let (store, report) = ingest(t, l, &ic)?;
                write_json(&dir.at("kg/report.json"), &report)?;
                store
            } else {
                gen_synthetic(&c.synth)?.store
            };
            export(&store, &dir.at("kg/triples.tsv"), &dir.at("kg/labels.jsonl"))?;
            write_json(&dir.at("kg/languages.json"), store.languages())
        }
        Stage::Split => {
            let store = dir.store()?;
            c.validate_languages(&store)?;
            let (split, report) = make_splits(&store, &c.split)?;
            for (part, triples) in
                [("train", &split.train), ("valid", &split.valid), ("test", &split.test), ("prompt", &split.prompt)]
            {
                write_triples(&store, triples.iter(), &dir.at(&format!("split/{part}.tsv")))?;
            }
            write_json(&dir.at("split/report.json"), &report)
        }
        Stage::TrainKge => {
            let store = dir.store()?;
            let train = dir.split_part(&store, "train")?;
            let (kge, report) = train_kge(&store, &train, &c.kge)?;
            let sidecar = CheckpointSidecar {
                config: c.kge.clone(),
                seed: c.kge.seed,
                dim: kge.dim(),
                n_entities: kge.n_entities(),
                n_relations: kge.n_relations(),
                epoch_loss: report.epoch_loss,
            };
            let path = dir.at("kge/transe.bin");
            fs::create_dir_all(dir.at("kge")).map_err(|e| Error::io(dir.at("kge"), e))?;
            save_checkpoint(&kge, &sidecar, &path)
        }
        Stage::GenCandidates => {
            let store = dir.store()?;
            let kge = dir.kge()?;
            let known = KnownTails::new(store.triples());
            let prompt = dir.split_part(&store, "prompt")?;
            let (train_triples, _) = training_triples(&c, &store, &prompt)?;
            let sources = gen_candidates(&kge, &train_triples, &known, c.examples.m_max)?;
            write_jsonl(
                &dir.at("candidates/prompt.jsonl"),
                sources.iter().map(|(t, l)| to_candidate_record(&store, t, l)),
            )?;
            let test: Vec<Triple> = dir
                .split_part(&store, "test")?
                .into_iter()
                .filter(|t| {
                    c.eval.languages.is_empty() || c.eval.languages.iter().any(|l| l == store.lang_name(t.lang))
                })
                .collect();
            let test_sources = gen_candidates(&kge, &test, &known, c.eval.m)?;
            write_jsonl(
                &dir.at("candidates/test.jsonl"),
                test_sources.iter().map(|(t, l)| to_candidate_record(&store, t, l)),
            )
        }
        Stage::BuildPrompts => {
            let store = dir.store()?;
            let train = dir.split_part(&store, "train")?;
            let neighbors = sample_neighbors(&store, &train, c.prompt.n_neighbors, c.selector.seed)?;
            let labels: Vec<LabelIndex> = store.languages().iter().map(|l| LabelIndex::new(&store, l)).collect();
            let render = |q: &Query, cands: &[EntityIx], gold: EntityIx| -> Result<PromptRecord> {
                let p = build_prompt(q, &store, &labels[q.lang.idx()], cands, &neighbors, &c.prompt)?;
                Ok(PromptRecord::new(&store, q, &p, gold, cands))
            };
            let (examples, _) = build_examples(&dir.candidates(&store, "prompt")?, &c.examples)?;
            let train_prompts = examples
                .iter()
                .map(|e| render(&e.query, &e.candidates, e.candidates[e.gold]))
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&dir.at("prompts/train.jsonl"), &train_prompts)?;
            let test_prompts = dir
                .candidates(&store, "test")?
                .iter()
                .map(|(t, l)| render(&t.query(), &l.entities, t.tail))
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&dir.at("prompts/test.jsonl"), &test_prompts)
        }
        Stage::TrainAdapter => {
            let store = dir.store()?;
            let kge = dir.kge()?;
            let train = dir.split_part(&store, "train")?;
            let sources = dir.candidates(&store, "prompt")?;
            if sources.is_empty() {
                return Err(Error::Config("no training examples for the selected languages".into()));
            }
            let mut training_counts = BTreeMap::new();
            for (t, _) in &sources {
                *training_counts.entry(store.lang_name(t.lang).to_string()).or_insert(0) += 1;
            }
            let (examples, dropped_examples) = build_examples(&sources, &c.examples)?;
            if examples.is_empty() {
                return Err(Error::Config("every training candidate list missed its gold tail".into()));
            }
            let neighbors = sample_neighbors(&store, &train, c.selector.n_neighbors, c.selector.seed)?;
            let mut model = SelectorModel::new(c.selector.clone(), &kge, store.languages().len(), neighbors)?;
            let loss = train_selector(&mut model, &examples, &c.train)?;
            save_selector(&model, &dir.at("selector"))?;
            write_text(&dir.at("selector/loss.csv"), &loss_curve_csv(&loss))?;
            let report =
                SelectorReport { config_digest: digest, n_examples: examples.len(), dropped_examples, training_counts };
            write_json(&dir.at("selector/report.json"), &report)
        }
        Stage::Rerank => {
            let store = dir.store()?;
            let kge = dir.kge()?;
            let model = load_selector(&dir.at("selector"))?;
            let known = KnownTails::new(store.triples());
            let test = dir.candidates(&store, "test")?;
            let outcome = evaluate(&model, &kge, &store, &test, &known, c.eval.n_t)?;
            write_jsonl(&dir.at("rerank/records.jsonl"), &outcome.records)?;
            write_jsonl(&dir.at("rerank/routing.jsonl"), &outcome.routing)
        }
        Stage::Eval => {
            let store = dir.store()?;
            let kge = dir.kge()?;
            let known = KnownTails::new(store.triples());
            let test = dir.candidates(&store, "test")?;
            let records: Vec<RerankRecord> = read_jsonl(&dir.at("rerank/records.jsonl"))?;
            let (report, kge_report, curve) = score_records(&store, &kge, &known, &test, &records, c.eval.n_t)?;
            let stamp = |mut r: MetricsReport| {
                r.config_digest = digest.clone();
                r
            };
            write_json(&dir.at("eval/metrics.json"), &stamp(report))?;
            write_json(&dir.at("eval/kge_metrics.json"), &stamp(kge_report))?;
            write_text(&dir.at("eval/curve.csv"), &curve_csv(&curve))
        }
        Stage::RouteAnalyze => {
            let records: Vec<RoutingRecord> = read_jsonl(&dir.at("rerank/routing.jsonl"))?;
            let tables = export_routing_analysis(&records)?;
            write_text(&dir.at("routing/by_language.csv"), &tables.by_language.to_csv())?;
            write_text(&dir.at("routing/by_relation.csv"), &tables.by_relation.to_csv())
        }
        Stage::Ablate => write_json(&dir.at("ablate/ablation.json"), &run_ablation(cfg, opts.seeds)?),
        Stage::Flops => {
            let fc = flops_config(cfg);
            let report = report_flops(&fc, opts.tokens)?;
            write_json(
                &dir.at("flops/flops.json"),
                &FlopsFile { config_digest: digest, config: fc, avg_tokens: opts.tokens, report },
            )
        }
    }
}

/// Runs every pipeline stage in order, ingesting instead of synthesizing when
/// the config names data files.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let opts = StageOptions::default();
    for stage in Stage::PIPELINE {
        let stage = if stage == Stage::Synth && cfg.data.triples.is_some() { Stage::Ingest } else { stage };
        run_stage(stage, cfg, out, &opts)?;
    }
    Ok(())
}

/// Final, retriever and per-round metrics from rerank records, replaying the
/// recorded picks against the candidate lists.
fn score_records(
    store: &KgStore,
    kge: &EmbeddingTable,
    known: &KnownTails,
    test: &[(Triple, CandidateList)],
    records: &[RerankRecord],
    n_t: usize,
) -> Result<(MetricsReport, MetricsReport, Vec<CurvePoint>)> {
    if records.len() != test.len() {
        return Err(Error::ContractViolation(format!(
            "{} rerank records for {} test queries",
            records.len(),
            test.len()
        )));
    }
    let mut ranks = Vec::with_capacity(test.len());
    let mut kge_ranks = Vec::with_capacity(test.len());
    let mut by_round = vec![Vec::with_capacity(test.len()); n_t];
    for ((t, list), rec) in test.iter().zip(records) {
        let q = t.query();
        if rec.query.h != store.entity_id(q.head) || rec.query.r != store.relation_id(q.relation) {
            return Err(Error::ContractViolation("rerank records are not aligned with the test candidates".into()));
        }
        let lang = store.lang_name(t.lang).to_string();
        let kge_rank = kge.rank_of(&q, t.tail, Filter::Known { known, keep: Some(t.tail) })?;
        let picks = rec.picks.iter().map(|id| store.entity(*id)).collect::<Result<Vec<_>>>()?;
        let mut replay = picks.iter().copied();
        let mut scorer = |_: &Query, _: &[EntityIx]| {
            replay.next().ok_or_else(|| Error::ContractViolation("rerank record has too few picks".into()))
        };
        let (final_list, rounds) = rerank_trace(&q, &list.entities, &mut scorer, picks.len())?;
        let final_ids: Vec<u64> = final_list.entities.iter().map(|e| store.entity_id(*e)).collect();
        if final_ids != rec.final_order {
            return Err(Error::ContractViolation("replayed order differs from the recorded one".into()));
        }
        for (i, slot) in by_round.iter_mut().enumerate() {
            let list_t = rounds.get(i).map_or(final_list.entities.clone(), |r| r.list_after());
            slot.push((final_rank(&list_t, t.tail, kge_rank), lang.clone()));
        }
        ranks.push((final_rank(&final_list.entities, t.tail, kge_rank), lang.clone()));
        kge_ranks.push((kge_rank, lang));
    }
    let curve = by_round
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let m = compute_metrics(r)?;
            Ok(CurvePoint { t: i + 1, avg: m.avg, metrics: m.metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((compute_metrics(&ranks)?, compute_metrics(&kge_ranks)?, curve))
}
