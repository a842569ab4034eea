//! Candidate selection with a small frozen host carrying KL-GMoE adapters.
//!
//! Each sample has three component states: the head entity, the relation, and
//! the mean of the candidate block. They pass through `n_blocks` residual
//! blocks `x <- x + FFN(tanh(M x))`, where `M` is a frozen orthogonal mixing map
//! and `FFN` is a frozen `W0` plus the adapter.
//!
//! Candidate rows `c_i` are the frozen TransE entity embeddings followed by a
//! few evidence channels read off the neighbor block a prompt would show:
//! whether the candidate is the head itself, and whether `(h, r, c)` or
//! `(c, r, h)` appears among the sampled training triples. The query vector is
//! `q = a z_h + b z_r` with trainable scalars `a`, `b`, where `z` takes its
//! embedding coordinates from the frozen TransE row and its evidence
//! coordinates from the adapted state (`Readout::Full` uses the adapted state
//! throughout). Candidate `i` scores `q . c_i`, so the
//! adapters decide how much each channel counts for the query at hand while
//! the embedding term keeps the TransE ordering. With a zero adapter and
//! `W0 = 0` the evidence weights vanish and the scores rank like TransE.

mod checkpoint;
mod examples;

use std::collections::HashSet;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_selector, save_selector};
pub use examples::{build_examples, ExampleConfig, TrainingExample};

use crate::error::{invalid, Error, Result};
use crate::ier::Scorer;
use crate::kg::{EntityIx, KgStore, NeighborIndex, Query, RelationIx, Triple};
use crate::kge::EmbeddingTable;
use crate::klgmoe::{AdapterShape, KlgmoeLayer, LayerVars, RoutingDecision, RoutingMode};
use crate::numerics::rng::{fork, rng};
use crate::numerics::{argmax_det, Adam, Matrix, Tape, Var, Vector};

/// Evidence channels appended to every entity row.
pub const N_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    #[default]
    Identity,
    Zero,
}

/// Where the query vector takes its embedding coordinates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Frozen TransE rows; the adapters only reach the evidence channels.
    #[default]
    Evidence,
    /// The adapted states in every coordinate.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub n_blocks: usize,
    pub n_groups: usize,
    pub n_experts: usize,
    pub rank: usize,
    pub mode: RoutingMode,
    /// Standard deviation of the frozen `W0` entries, times `1/sqrt(hidden)`.
    pub w0_scale: f64,
    pub readout: Readout,
    pub head_init: HeadInit,
    pub train_head: bool,
    pub features: bool,
    pub language_embedding: bool,
    pub n_neighbors: usize,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            n_blocks: 2,
            n_groups: 4,
            n_experts: 2,
            rank: 4,
            mode: RoutingMode::Gated,
            w0_scale: 0.05,
            readout: Readout::Evidence,
            head_init: HeadInit::Identity,
            train_head: true,
            features: true,
            language_embedding: false,
            n_neighbors: 6,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be at least 1".into()));
        }
        if !(self.w0_scale >= 0.0 && self.w0_scale.is_finite()) {
            return Err(Error::Config(format!("w0_scale must be finite and >= 0, got {}", self.w0_scale)));
        }
        AdapterShape { n_groups: self.n_groups, n_experts: self.n_experts, rank: self.rank, din: 1, dout: 1 }.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 2e-5, epochs: 10, batch_size: 16, seed: 0 }
    }
}

/// Per-layer routing of one sample, as written to the routing log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub sample: usize,
    pub layer: usize,
    pub lang: String,
    pub relation: u64,
    pub group: usize,
    pub expert: usize,
    pub group_scores: Vec<f64>,
    pub sk: Vec<f64>,
    pub sl: Vec<f64>,
}

impl RoutingRecord {
    pub fn new(store: &KgStore, sample: usize, layer: usize, query: &Query, d: &RoutingDecision) -> Self {
        Self {
            sample,
            layer,
            lang: store.lang_name(query.lang).to_string(),
            relation: store.relation_id(query.relation),
            group: d.group,
            expert: d.expert,
            group_scores: d.group_scores.clone(),
            sk: d.sk.clone(),
            sl: d.sl.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: EntityIx,
    pub probabilities: Vector,
    pub routing: Vec<RoutingDecision>,
}

/// Neighbor triples of every entity, as `(head, relation, tail)` contents.
pub type NeighborTable = Vec<Vec<(EntityIx, RelationIx, EntityIx)>>;

/// Samples the prompt neighbor block of every entity from distinct training contents.
pub fn sample_neighbors(store: &KgStore, train: &[Triple], k: usize, seed: u64) -> Result<NeighborTable> {
    let mut seen = HashSet::new();
    let unique: Vec<Triple> = train.iter().filter(|t| seen.insert(t.content())).copied().collect();
    let index = NeighborIndex::new(store, &unique);
    (0..store.n_entities())
        .map(|e| {
            let e = EntityIx(e as u32);
            let seed = fork(seed, &format!("neighbors/{}", e.0));
            Ok(index.neighbors(e, k, seed)?.iter().map(|t| t.content()).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    pub config: SelectorConfig,
    /// Frozen TransE entity rows.
    pub entities: Matrix,
    /// Frozen TransE relation rows.
    pub relations: Matrix,
    /// Frozen per-language offsets added to the component states.
    pub languages: Option<Matrix>,
    pub mixing: Vec<Matrix>,
    pub adapters: Vec<KlgmoeLayer>,
    pub p_h: Matrix,
    pub p_r: Matrix,
    pub neighbors: NeighborTable,
}

struct ModelVars {
    mixing: Vec<Var>,
    adapters: Vec<LayerVars>,
    p_h: Var,
    p_r: Var,
}

fn padded(row: &[f64], hidden: usize) -> Vec<f64> {
    let mut v = row.to_vec();
    v.resize(hidden, 0.0);
    v
}

impl SelectorModel {
    pub fn new(
        config: SelectorConfig,
        kge: &EmbeddingTable,
        n_languages: usize,
        neighbors: NeighborTable,
    ) -> Result<Self> {
        config.validate()?;
        if neighbors.len() != kge.n_entities() {
            return Err(invalid!("neighbor table covers {} of {} entities", neighbors.len(), kge.n_entities()));
        }
        let dim = kge.dim();
        let hidden = dim + if config.features { N_FEATURES } else { 0 };
        let mut r = rng(fork(config.seed, "selector-init"));
        let shape = AdapterShape {
            n_groups: config.n_groups,
            n_experts: config.n_experts,
            rank: config.rank,
            din: hidden,
            dout: hidden,
        };
        let mut mixing = Vec::with_capacity(config.n_blocks);
        let mut adapters = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            mixing.push(Matrix::random_orthogonal(hidden, &mut r));
            let w0 = Matrix::random_normal(hidden, hidden, config.w0_scale / (hidden as f64).sqrt(), &mut r);
            adapters.push(KlgmoeLayer::init(&shape, w0, config.mode, &mut r)?);
        }
        let languages = config
            .language_embedding
            .then(|| Matrix::random_normal(n_languages.max(1), hidden, 0.1 / (hidden as f64).sqrt(), &mut r));
        let head = match config.head_init {
            HeadInit::Identity => Matrix::identity(1),
            HeadInit::Zero => Matrix::zeros(1, 1),
        };
        Ok(Self {
            config,
            entities: kge.entities.clone(),
            relations: kge.relations.clone(),
            languages,
            mixing,
            adapters,
            p_h: head.clone(),
            p_r: head,
            neighbors,
        })
    }

    pub fn hidden(&self) -> usize {
        self.mixing[0].rows()
    }

    fn check_ids(&self, query: &Query, candidates: &[EntityIx]) -> Result<()> {
        let n_e = self.entities.rows();
        if query.head.idx() >= n_e {
            return Err(Error::NotFound(format!("entity index {}", query.head.0)));
        }
        if query.relation.idx() >= self.relations.rows() {
            return Err(Error::NotFound(format!("relation index {}", query.relation.0)));
        }
        if let Some(c) = candidates.iter().find(|c| c.idx() >= n_e) {
            return Err(Error::NotFound(format!("entity index {}", c.0)));
        }
        if let Some(l) = &self.languages {
            if query.lang.idx() >= l.rows() {
                return Err(Error::NotFound(format!("language index {}", query.lang.0)));
            }
        }
        if candidates.is_empty() {
            return Err(invalid!("candidate list is empty"));
        }
        Ok(())
    }

    /// Evidence channels of `c` for the query, from the head's neighbor block.
    pub fn features(&self, query: &Query, c: EntityIx) -> [f64; N_FEATURES] {
        let (h, r) = (query.head, query.relation);
        let mut f = [0.0; N_FEATURES];
        f[0] = f64::from(u8::from(c == h));
        for &(nh, nr, nt) in &self.neighbors[h.idx()] {
            if nh == h && nt == c && nr == r {
                f[1] = 1.0;
            }
            if nh == c && nt == h && nr == r {
                f[2] = 1.0;
            }
        }
        f
    }

    fn candidate_rows(&self, query: &Query, candidates: &[EntityIx]) -> Matrix {
        let hidden = self.hidden();
        let mut data = Vec::with_capacity(candidates.len() * hidden);
        for c in candidates {
            data.extend_from_slice(self.entities.row(c.idx()));
            if self.config.features {
                data.extend_from_slice(&self.features(query, *c));
            }
        }
        Matrix::from_parts(candidates.len(), hidden, data)
    }

    fn bind(&self, tape: &mut Tape) -> ModelVars {
        let head = |tape: &mut Tape, m: &Matrix| if self.config.train_head { tape.param(m) } else { tape.constant(m) };
        ModelVars {
            mixing: self.mixing.iter().map(|m| tape.constant(m)).collect(),
            adapters: self.adapters.iter().map(|a| a.bind(tape)).collect(),
            p_h: head(tape, &self.p_h),
            p_r: head(tape, &self.p_r),
        }
    }

    /// Logit column over `candidates` and the routing of every block.
    fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        query: &Query,
        candidates: &[EntityIx],
    ) -> Result<(Var, Vec<RoutingDecision>)> {
        self.check_ids(query, candidates)?;
        let hidden = self.hidden();
        let rows = self.candidate_rows(query, candidates);
        let mut pooled = vec![0.0; hidden];
        for i in 0..rows.rows() {
            for (p, v) in pooled.iter_mut().zip(rows.row(i)) {
                *p += v;
            }
        }
        let inv = 1.0 / rows.rows() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        let mut init = [
            padded(self.entities.row(query.head.idx()), hidden),
            padded(self.relations.row(query.relation.idx()), hidden),
            pooled,
        ];
        if let Some(l) = &self.languages {
            for comp in &mut init {
                for (x, o) in comp.iter_mut().zip(l.row(query.lang.idx())) {
                    *x += o;
                }
            }
        }
        let mut x = init.map(|c| tape.constant(&Matrix::from_parts(hidden, 1, c)));

        let mut routing = Vec::with_capacity(self.adapters.len());
        for ((adapter, avars), mix) in self.adapters.iter().zip(&vars.adapters).zip(&vars.mixing) {
            let mut u = x;
            for (ui, xi) in u.iter_mut().zip(x) {
                let mixed = tape.matmul(*mix, xi)?;
                *ui = tape.tanh(mixed)?;
            }
            let (y, decision) = adapter.forward_tape(tape, avars, u)?;
            for (xi, yi) in x.iter_mut().zip(y) {
                *xi = tape.add(*xi, yi)?;
            }
            routing.push(decision);
        }
        // Embedding coordinates come from the frozen TransE rows, evidence
        // coordinates from the adapted states.
        let dim = self.entities.cols();
        let evidence: Vec<usize> = (dim..hidden).collect();
        let frozen = [self.entities.row(query.head.idx()), self.relations.row(query.relation.idx())];
        let mut read = [x[0], x[1]];
        for ((out, row), xi) in read.iter_mut().zip(frozen).zip(x) {
            if self.config.readout == Readout::Full {
                break;
            }
            let base = tape.constant(&Matrix::from_parts(dim, 1, row.to_vec()));
            *out = if evidence.is_empty() {
                base
            } else {
                let ev = tape.gather_rows(xi, &evidence)?;
                tape.vstack(&[base, ev])?
            };
        }
        let qh = tape.mul_scalar(read[0], vars.p_h)?;
        let qr = tape.mul_scalar(read[1], vars.p_r)?;
        let q = tape.add(qh, qr)?;
        let c = tape.constant(&rows);
        Ok((tape.matmul(c, q)?, routing))
    }

    pub fn select(&self, query: &Query, candidates: &[EntityIx]) -> Result<Selection> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (logits, routing) = self.forward_tape(&mut tape, &vars, query, candidates)?;
        let probs = tape.softmax(logits)?;
        let probabilities = tape.vector(probs);
        let chosen = candidates[argmax_det(&tape.vector(logits))?];
        Ok(Selection { chosen, probabilities, routing })
    }

    fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let train_head = self.config.train_head;
        let mut out: Vec<&mut Matrix> = self.adapters.iter_mut().flat_map(|a| a.trainable_mut()).collect();
        if train_head {
            out.push(&mut self.p_h);
            out.push(&mut self.p_r);
        }
        out
    }

    fn gradients(&self, vars: &ModelVars, grads: &crate::numerics::Gradients) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = vars.adapters.iter().flat_map(|v| v.gradients(grads)).collect();
        if self.config.train_head {
            out.push(grads.get(vars.p_h));
            out.push(grads.get(vars.p_r));
        }
        out
    }

    /// SHA-256 over every tensor that training must not touch.
    pub fn frozen_digest(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |m: &Matrix| {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for x in m.data() {
                h.update(x.to_le_bytes());
            }
        };
        feed(&self.entities);
        feed(&self.relations);
        if let Some(l) = &self.languages {
            feed(l);
        }
        for m in &self.mixing {
            feed(m);
        }
        for a in &self.adapters {
            feed(&a.w0);
        }
        if !self.config.train_head {
            feed(&self.p_h);
            feed(&self.p_r);
        }
        hex(&h.finalize())
    }

    /// Zeroes every `A`, so the adapters add nothing to the host.
    pub fn zero_adapters(&mut self) {
        for a in &mut self.adapters {
            for g in &mut a.groups {
                g.a = Matrix::zeros(g.a.rows(), g.a.cols());
            }
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Makes a selector usable as the reranking scorer.
pub struct SelectorScorer<'a> {
    pub model: &'a SelectorModel,
    /// Routing of every call, in call order.
    pub log: Option<Vec<(Query, Vec<RoutingDecision>)>>,
}

impl<'a> SelectorScorer<'a> {
    pub fn new(model: &'a SelectorModel) -> Self {
        Self { model, log: None }
    }

    pub fn logging(model: &'a SelectorModel) -> Self {
        Self { model, log: Some(Vec::new()) }
    }
}

impl Scorer for SelectorScorer<'_> {
    fn pick(&mut self, query: &Query, remaining: &[EntityIx]) -> Result<EntityIx> {
        let s = self.model.select(query, remaining)?;
        if let Some(log) = &mut self.log {
            log.push((*query, s.routing));
        }
        Ok(s.chosen)
    }
}

/// Cross-entropy training with Adam. Returns the mean loss of every epoch.
pub fn train_selector(model: &mut SelectorModel, examples: &[TrainingExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config("batch_size must be positive and lr finite and >= 0".into()));
    }
    for ex in examples {
        if ex.gold >= ex.candidates.len() {
            return Err(invalid!("gold index {} outside {} candidates", ex.gold, ex.candidates.len()));
        }
    }
    let shapes: Vec<(usize, usize)> = model.trainable_mut().iter().map(|m| m.shape()).collect();
    let mut adam = Adam::new(cfg.lr, &shapes);
    let mut r = rng(fork(cfg.seed, "selector-train"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Matrix> = shapes.iter().map(|(a, b)| Matrix::zeros(*a, *b)).collect();
            for &i in batch {
                let ex = &examples[i];
                let abort = |e: Error| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("step {step}, sample {i}: {msg}")),
                    other => other,
                };
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape);
                let (logits, _) = model.forward_tape(&mut tape, &vars, &ex.query, &ex.candidates).map_err(abort)?;
                let lp = tape.log_softmax(logits).map_err(abort)?;
                let pick = tape.pick(lp, ex.gold)?;
                let loss = tape.scale(pick, -1.0 / batch.len() as f64).map_err(abort)?;
                let value = tape.scalar(loss) * batch.len() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("step {step}, sample {i}: loss {value}")));
                }
                total += value;
                let grads = tape.backward(loss)?;
                for (a, g) in acc.iter_mut().zip(model.gradients(&vars, &grads)) {
                    a.add_assign(&g)?;
                }
            }
            adam.step(&mut model.trainable_mut(), &acc)?;
            step += 1;
        }
        let mean = total / examples.len() as f64;
        debug!("selector epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}

/// `epoch,loss` lines with a header.
pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}
