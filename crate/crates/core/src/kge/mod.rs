//! TransE candidate retrieval.
//!
//! Score is `-||e_h + e_r - e_t||_2`; training minimizes the margin ranking
//! loss `max(0, margin + s(neg) - s(pos))` with uniform head-or-tail
//! corruption, and entity rows are projected back to the unit sphere after
//! every epoch.

mod checkpoint;

use std::collections::{HashMap, HashSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CandidateRecord, CheckpointSidecar};

use crate::error::{Error, Result};
use crate::kg::{EntityIx, KgStore, Query, RelationIx, Triple};
use crate::numerics::rng::{fork, rng};
use crate::numerics::Matrix;

/// Rows whose norm is within this of 1 are left untouched by renormalization.
const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self { dim: 64, margin: 1.0, lr: 0.01, epochs: 200, negatives_per_positive: 1, seed: 0 }
    }
}

impl TransEConfig {
    /// Width implied by a 106.1M-parameter table over 351,299 entities and
    /// 2,264 relations.
    pub fn large_scale() -> Self {
        Self { dim: 300, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("TransE dim must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("TransE margin must be positive".into()));
        }
        if !(self.lr >= 0.0) || self.negatives_per_positive == 0 {
            return Err(Error::Config("lr must be >= 0 and negatives_per_positive >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub entities: Matrix,
    pub relations: Matrix,
}

/// Raw ranks every entity; filtered drops other tails already known true for `(h, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    Raw,
    #[default]
    Filtered,
}

/// Known-true tails per `(head, relation)`, language-agnostic.
#[derive(Debug, Clone, Default)]
pub struct KnownTails {
    tails: HashMap<(EntityIx, RelationIx), HashSet<EntityIx>>,
}

impl KnownTails {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut tails: HashMap<_, HashSet<_>> = HashMap::new();
        for t in triples {
            tails.entry((t.head, t.relation)).or_default().insert(t.tail);
        }
        Self { tails }
    }

    pub fn contains(&self, head: EntityIx, relation: RelationIx, tail: EntityIx) -> bool {
        self.tails.get(&(head, relation)).is_some_and(|s| s.contains(&tail))
    }
}

/// How to exclude entities when ranking.
#[derive(Debug, Clone, Copy)]
pub enum Filter<'a> {
    Raw,
    /// Skip known tails of `(h, r)` except `keep` (the gold answer, when known).
    Known {
        known: &'a KnownTails,
        keep: Option<EntityIx>,
    },
}

impl Filter<'_> {
    fn excludes(&self, q: &Query, e: EntityIx) -> bool {
        match self {
            Filter::Raw => false,
            Filter::Known { known, keep } => Some(e) != *keep && known.contains(q.head, q.relation, e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub query: Query,
    pub entities: Vec<EntityIx>,
    pub scores: Vec<f64>,
}

impl CandidateList {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// 1-based position of `e`, if present.
    pub fn position(&self, e: EntityIx) -> Option<usize> {
        self.entities.iter().position(|x| *x == e).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean margin loss per positive, one entry per epoch.
    pub epoch_loss: Vec<f64>,
}

fn l2_distance(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..h.len() {
        let d = h[i] + r[i] - t[i];
        acc += d * d;
    }
    acc.sqrt()
}

fn normalize_row(row: &mut [f64]) {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && (norm - 1.0).abs() > UNIT_NORM_TOL {
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
}

impl EmbeddingTable {
    /// Uniform(-6/sqrt(dim), 6/sqrt(dim)) rows; relations normalized once,
    /// entities projected to unit norm.
    pub fn init(n_entities: usize, n_relations: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng(fork(seed, "transe-init"));
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |rows: usize| {
            let data: Vec<f64> = (0..rows * dim).map(|_| rng.gen_range(-bound..bound)).collect();
            let mut m = Matrix::from_vec(rows, dim, data).expect("finite draws");
            for r in 0..rows {
                normalize_row(m.row_mut(r));
            }
            m
        };
        let entities = draw(n_entities);
        let relations = draw(n_relations);
        Self { entities, relations }
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn n_entities(&self) -> usize {
        self.entities.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.rows()
    }

    fn check(&self, h: EntityIx, r: RelationIx, t: EntityIx) -> Result<()> {
        for e in [h, t] {
            if e.idx() >= self.n_entities() {
                return Err(Error::NotFound(format!("entity index {}", e.0)));
            }
        }
        if r.idx() >= self.n_relations() {
            return Err(Error::NotFound(format!("relation index {}", r.0)));
        }
        Ok(())
    }

    pub fn score(&self, h: EntityIx, r: RelationIx, t: EntityIx) -> Result<f64> {
        self.check(h, r, t)?;
        Ok(-l2_distance(self.entities.row(h.idx()), self.relations.row(r.idx()), self.entities.row(t.idx())))
    }

    /// Scores of every entity as a tail of `(h, r)`.
    pub fn score_all_tails(&self, h: EntityIx, r: RelationIx) -> Result<Vec<f64>> {
        self.check(h, r, h)?;
        let (hv, rv) = (self.entities.row(h.idx()), self.relations.row(r.idx()));
        Ok((0..self.n_entities()).map(|t| -l2_distance(hv, rv, self.entities.row(t))).collect())
    }

    /// Top-`m` tails by score, ties to the lower index.
    pub fn retrieve(&self, query: &Query, m: usize, filter: Filter<'_>) -> Result<CandidateList> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let scores = self.score_all_tails(query.head, query.relation)?;
        let mut order: Vec<usize> =
            (0..scores.len()).filter(|e| !filter.excludes(query, EntityIx(*e as u32))).collect();
        if m > order.len() {
            warn!("requested {m} candidates but only {} entities are rankable; clamping", order.len());
        }
        let take = m.min(order.len());
        let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
        if take < order.len() {
            order.select_nth_unstable_by(take, cmp);
            order.truncate(take);
        }
        order.sort_by(cmp);
        Ok(CandidateList {
            query: *query,
            entities: order.iter().map(|e| EntityIx(*e as u32)).collect(),
            scores: order.iter().map(|e| scores[*e]).collect(),
        })
    }

    /// 1-based rank of `gold`, consistent with [`retrieve`](Self::retrieve) ordering.
    pub fn rank_of(&self, query: &Query, gold: EntityIx, filter: Filter<'_>) -> Result<usize> {
        self.check(query.head, query.relation, gold)?;
        let scores = self.score_all_tails(query.head, query.relation)?;
        let g = scores[gold.idx()];
        let better = scores
            .iter()
            .enumerate()
            .filter(|(e, s)| {
                let e_ix = EntityIx(*e as u32);
                e_ix != gold && !filter.excludes(query, e_ix) && (**s > g || (**s == g && *e < gold.idx()))
            })
            .count();
        Ok(better + 1)
    }

    /// Margin loss and its gradient for one (positive, negative) pair; the
    /// gradient is returned as (d h, d r, d t) for each triple.
    pub fn margin_loss_grad(&self, pos: (usize, usize, usize), neg: (usize, usize, usize), margin: f64) -> PairGrad {
        let dist_and_unit = |(h, r, t): (usize, usize, usize)| {
            let (hv, rv, tv) = (self.entities.row(h), self.relations.row(r), self.entities.row(t));
            let diff: Vec<f64> = (0..hv.len()).map(|i| hv[i] + rv[i] - tv[i]).collect();
            let d = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            let unit: Vec<f64> = if d > 0.0 { diff.iter().map(|x| x / d).collect() } else { vec![0.0; diff.len()] };
            (d, unit)
        };
        let (dp, up) = dist_and_unit(pos);
        let (dn, un) = dist_and_unit(neg);
        let loss = (margin + dp - dn).max(0.0);
        if loss == 0.0 {
            return PairGrad { loss, pos_unit: None, neg_unit: None };
        }
        PairGrad { loss, pos_unit: Some(up), neg_unit: Some(un) }
    }
}

/// `d loss / d e_h = pos_unit`, `d / d e_t = -pos_unit`, `d / d e_r = pos_unit`
/// for the positive; the negative enters with the opposite sign.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub loss: f64,
    pub pos_unit: Option<Vec<f64>>,
    pub neg_unit: Option<Vec<f64>>,
}

fn apply(table: &mut EmbeddingTable, (h, r, t): (usize, usize, usize), unit: &[f64], step: f64) {
    for (x, u) in table.entities.row_mut(h).iter_mut().zip(unit) {
        *x -= step * u;
    }
    for (x, u) in table.relations.row_mut(r).iter_mut().zip(unit) {
        *x -= step * u;
    }
    for (x, u) in table.entities.row_mut(t).iter_mut().zip(unit) {
        *x += step * u;
    }
}

/// Trains TransE on `train` with per-example SGD. Single-threaded and
/// deterministic for a given config.
pub fn train(store: &KgStore, train: &[Triple], cfg: &TransEConfig) -> Result<(EmbeddingTable, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let n_e = store.n_entities();
    let mut table = EmbeddingTable::init(n_e, store.n_relations(), cfg.dim, cfg.seed);
    let mut rng = rng(fork(cfg.seed, "transe-train"));
    // Language copies of one fact carry the same signal; train on content.
    let mut facts: Vec<(usize, usize, usize)> =
        train.iter().map(|t| (t.head.idx(), t.relation.idx(), t.tail.idx())).collect();
    facts.sort_unstable();
    facts.dedup();
    let known: HashSet<(usize, usize, usize)> = facts.iter().copied().collect();

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        facts.shuffle(&mut rng);
        let mut total = 0.0;
        for &pos in &facts {
            for _ in 0..cfg.negatives_per_positive {
                let neg = corrupt(pos, n_e, &known, &mut rng);
                let g = table.margin_loss_grad(pos, neg, cfg.margin);
                total += g.loss;
                if let (Some(up), Some(un)) = (g.pos_unit, g.neg_unit) {
                    apply(&mut table, pos, &up, cfg.lr);
                    apply(&mut table, neg, &un, -cfg.lr);
                }
            }
        }
        for r in 0..n_e {
            normalize_row(table.entities.row_mut(r));
        }
        epoch_loss.push(total / (facts.len() * cfg.negatives_per_positive) as f64);
    }
    Ok((table, TrainReport { epoch_loss }))
}

/// Replaces head or tail (fair coin) with a uniform entity, avoiding known
/// facts when a few redraws allow it.
fn corrupt<R: Rng>(
    (h, r, t): (usize, usize, usize),
    n_e: usize,
    known: &HashSet<(usize, usize, usize)>,
    rng: &mut R,
) -> (usize, usize, usize) {
    let head_side = rng.gen_bool(0.5);
    let mut cand = (h, r, t);
    for _ in 0..10 {
        let e = rng.gen_range(0..n_e);
        cand = if head_side { (e, r, t) } else { (h, r, e) };
        if !known.contains(&cand) {
            break;
        }
    }
    cand
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, LangIx, Relation};
    use crate::numerics::{grad_check, Tape};
    use std::collections::BTreeMap;

    fn table(entities: &[Vec<f64>], relations: &[Vec<f64>]) -> EmbeddingTable {
        EmbeddingTable {
            entities: Matrix::from_rows(entities).unwrap(),
            relations: Matrix::from_rows(relations).unwrap(),
        }
    }

    fn q(h: u32, r: u32) -> Query {
        Query { head: EntityIx(h), relation: RelationIx(r), lang: LangIx(0) }
    }

    #[test]
    fn score_hand_cases() {
        let t = table(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]], &[vec![0.0, 1.0]]);
        assert_eq!(t.score(EntityIx(0), RelationIx(0), EntityIx(1)).unwrap(), -(2f64.sqrt()));
        assert_eq!(t.score(EntityIx(0), RelationIx(0), EntityIx(2)).unwrap(), 0.0);
        assert!(matches!(t.score(EntityIx(5), RelationIx(0), EntityIx(1)), Err(Error::NotFound(_))));
        assert!(matches!(t.score(EntityIx(0), RelationIx(3), EntityIx(1)), Err(Error::NotFound(_))));
    }

    #[test]
    fn translation_identity_retrieves_gold_first() {
        let t = table(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]], &[vec![0.0, 1.0]]);
        let c = t.retrieve(&q(0, 0), 2, Filter::Raw).unwrap();
        assert_eq!(c.entities[0], EntityIx(2));
        assert_eq!(c.scores[0], 0.0);
        assert_eq!(t.rank_of(&q(0, 0), EntityIx(2), Filter::Raw).unwrap(), 1);
    }

    #[test]
    fn full_raw_retrieval_is_permutation_and_clamps() {
        let t = EmbeddingTable::init(7, 2, 4, 1);
        let c = t.retrieve(&q(3, 1), 100, Filter::Raw).unwrap();
        let mut ids: Vec<u32> = c.entities.iter().map(|e| e.0).collect();
        ids.sort();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
        assert!(c.scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(t.retrieve(&q(3, 1), 0, Filter::Raw).is_err());
    }

    #[test]
    fn filtered_rank_drops_one_known_competitor() {
        // Entity 1 beats gold 2 and is a known tail of (0, r0).
        let t = table(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.9, 0.0], vec![-1.0, 0.0]], &[vec![1.0, 0.0]]);
        let known = KnownTails::new(&[Triple {
            head: EntityIx(0),
            relation: RelationIx(0),
            tail: EntityIx(1),
            lang: LangIx(0),
        }]);
        let raw = t.rank_of(&q(0, 0), EntityIx(2), Filter::Raw).unwrap();
        let filt = t.rank_of(&q(0, 0), EntityIx(2), Filter::Known { known: &known, keep: Some(EntityIx(2)) }).unwrap();
        assert_eq!(raw, 2);
        assert_eq!(filt, 1);
    }

    #[test]
    fn ties_rank_by_lower_index() {
        let t = table(&[vec![0.0], vec![1.0], vec![1.0]], &[vec![1.0]]);
        let c = t.retrieve(&q(0, 0), 3, Filter::Raw).unwrap();
        assert_eq!(c.entities, vec![EntityIx(1), EntityIx(2), EntityIx(0)]);
        assert_eq!(t.rank_of(&q(0, 0), EntityIx(2), Filter::Raw).unwrap(), 2);
    }

    #[test]
    fn margin_gradient_matches_finite_differences() {
        let t = EmbeddingTable::init(4, 1, 3, 5);
        let (pos, neg) = ((0, 0, 1), (0, 0, 2));
        let g = t.margin_loss_grad(pos, neg, 1.0);
        assert!(g.loss > 0.0);
        // Flattened [e_h, e_r, e_t(pos), e_t(neg)] on a tape.
        let point: Vec<f64> = [t.entities.row(0), t.relations.row(0), t.entities.row(1), t.entities.row(2)].concat();
        let f = |tape: &mut Tape, x: crate::numerics::Var| {
            let m = tape.reshape(x, 4, 3)?;
            let h = tape.gather_rows(m, &[0])?;
            let r = tape.gather_rows(m, &[1])?;
            let tp = tape.gather_rows(m, &[2])?;
            let tn = tape.gather_rows(m, &[3])?;
            let hr = tape.add(h, r)?;
            let dp = tape.sub(hr, tp)?;
            let dn = tape.sub(hr, tn)?;
            let np = tape.norm(dp)?;
            let nn = tape.norm(dn)?;
            let diff = tape.sub(np, nn)?;
            let one = tape.constant(&Matrix::from_vec(1, 1, vec![1.0])?);
            tape.add(one, diff)
        };
        let report = grad_check(f, &point, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
        let up = g.pos_unit.unwrap();
        let un = g.neg_unit.unwrap();
        for i in 0..3 {
            assert!((report.analytic[i] - (up[i] - un[i])).abs() < 1e-12);
            assert!((report.analytic[6 + i] + up[i]).abs() < 1e-12);
            assert!((report.analytic[9 + i] - un[i]).abs() < 1e-12);
        }
    }

    fn chain_store() -> KgStore {
        let ent = |id| Entity {
            id,
            labels: BTreeMap::from([("en".into(), format!("e{id}"))]),
            descriptions: BTreeMap::new(),
        };
        let rel = Relation { id: 0, labels: BTreeMap::new() };
        KgStore::new(
            vec!["en".into()],
            vec![ent(0), ent(1), ent(2)],
            vec![rel],
            vec![(0, 0, 1, "en".into()), (1, 0, 2, "en".into())],
        )
        .unwrap()
        .0
    }

    #[test]
    fn chain_overfits() {
        let s = chain_store();
        let train = s.triples().to_vec();
        let cfg = TransEConfig { dim: 8, epochs: 200, seed: 2, ..Default::default() };
        let (t, report) = super::train(&s, &train, &cfg).unwrap();
        for tr in &train {
            assert_eq!(t.rank_of(&tr.query(), tr.tail, Filter::Raw).unwrap(), 1);
        }
        assert!(report.epoch_loss.last().unwrap() <= report.epoch_loss.first().unwrap());
        for r in 0..t.n_entities() {
            let n = t.entities.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n > 0.0 && n <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn zero_lr_leaves_init_untouched() {
        let s = chain_store();
        let cfg = TransEConfig { dim: 8, epochs: 5, lr: 0.0, seed: 4, ..Default::default() };
        let (t, _) = super::train(&s, s.triples(), &cfg).unwrap();
        assert_eq!(t, EmbeddingTable::init(3, 1, 8, 4));
    }

    #[test]
    fn bad_config_rejected() {
        let s = chain_store();
        for cfg in [TransEConfig { dim: 0, ..Default::default() }, TransEConfig { margin: 0.0, ..Default::default() }] {
            assert!(matches!(super::train(&s, s.triples(), &cfg), Err(Error::Config(_))));
        }
        assert!(super::train(&s, &[], &TransEConfig::default()).is_err());
    }

    #[test]
    fn large_scale_dim_back_solves_table_size() {
        // 106.1M parameters over (351,299 + 2,264) rows.
        let implied: f64 = 106.1e6 / (351_299.0 + 2_264.0);
        assert!((implied - 300.0).abs() < 0.5, "{implied}");
        assert_eq!(TransEConfig::large_scale().dim, 300);
    }
}
