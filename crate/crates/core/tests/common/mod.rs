//! Independent oracles shared by the integration suites. Nothing here calls
//! the library code it is used to check.

#![allow(dead_code)]

use mkgc::kg::{EntityIx, LangIx, Query, RelationIx};
use mkgc::klgmoe::KlgmoeLayer;
use mkgc::numerics::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn query() -> Query {
    Query { head: EntityIx(0), relation: RelationIx(0), lang: LangIx(0) }
}

pub fn ents(xs: &[u32]) -> Vec<EntityIx> {
    xs.iter().map(|x| EntityIx(*x)).collect()
}

/// Final list after picking `picks` in order: the picks, then every other
/// initial candidate in its initial relative order.
pub fn oracle_rerank(initial: &[u32], picks: &[u32]) -> Vec<u32> {
    let mut out = picks.to_vec();
    out.extend(initial.iter().filter(|e| !picks.contains(e)));
    out
}

/// A random instance: `m` distinct ids, `n_t` in `1..=m`, and a pick sequence
/// drawn without replacement.
pub struct IerInstance {
    pub initial: Vec<u32>,
    pub n_t: usize,
    pub picks: Vec<u32>,
}

pub fn ier_instance(seed: u64, max_m: usize) -> IerInstance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = r.gen_range(1..=max_m);
    let mut pool: Vec<u32> = (0..1000).collect();
    pool.shuffle(&mut r);
    let initial = pool[..m].to_vec();
    let n_t = r.gen_range(1..=m);
    let mut order = initial.clone();
    order.shuffle(&mut r);
    IerInstance { initial, n_t, picks: order[..n_t].to_vec() }
}

fn stable_softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn mat_vec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|k| m.get(i, k) * x[k]).sum()).collect()
}

fn softmax_sum(w: &Matrix, xs: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; w.rows()];
    for x in xs {
        for (a, p) in acc.iter_mut().zip(stable_softmax(&mat_vec(w, x))) {
            *a += p;
        }
    }
    acc
}

/// First index holding the maximum.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug)]
pub struct OracleRoute {
    pub group: usize,
    pub expert: usize,
    pub group_scores: Vec<f64>,
    pub sk: Vec<f64>,
    pub sl: Vec<f64>,
}

pub fn oracle_route(layer: &KlgmoeLayer, xs: &[Vec<f64>]) -> OracleRoute {
    let group_scores = softmax_sum(&layer.wg, xs);
    let group = first_argmax(&group_scores);
    let a = &layer.groups[group].a;
    let projected: Vec<Vec<f64>> = xs.iter().map(|x| mat_vec(a, x)).collect();
    let sk = softmax_sum(&layer.wk, xs);
    let sl = softmax_sum(&layer.wl, &projected);
    let combined: Vec<f64> = sk.iter().zip(&sl).map(|(a, b)| a + b).collect();
    OracleRoute { group, expert: first_argmax(&combined), group_scores, sk, sl }
}

/// Trainable and per-sample activated scalars, counted from the tensors.
pub fn param_census(layer: &KlgmoeLayer) -> (u64, u64) {
    let routers = layer.wg.len() + layer.wk.len() + layer.wl.len();
    let mut trainable = routers;
    for g in &layer.groups {
        trainable += g.a.len() + g.b.iter().map(|b| b.len()).sum::<usize>();
    }
    let activated = routers + layer.groups[0].a.len() + layer.groups[0].b[0].len();
    (trainable as u64, activated as u64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
