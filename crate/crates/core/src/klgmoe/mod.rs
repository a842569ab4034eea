//! Knowledge-level grouped mixture of low-rank experts.
//!
//! A layer holds `N_g` groups; group `i` owns one down-projection `A_i`
//! (`r x din`) and `N_b` up-projections `B_ij` (`dout x r`). Expert `E_ij` is
//! the pair `(A_i, B_ij)`. For a sample `X = [x_h : x_r : x_t]`:
//!
//! ```text
//! group_scores = sum_m softmax(Wg x_m)            i = argmax group_scores
//! Sk           = sum_m softmax(Wk x_m)
//! Sl           = sum_m softmax(Wl (A_i x_m))      j = argmax (Sk + Sl)
//! y_m          = W0 x_m + g * B_ij (A_i x_m)
//! ```
//!
//! One expert handles all three components of a sample. `g = 1` in
//! [`RoutingMode::Ungated`]; in [`RoutingMode::Gated`] it is
//! `(group_scores[i] / 3) * ((Sk + Sl)[j] / 6)`, which lets the routers learn.
//! Ties in every argmax go to the lowest index.

mod checkpoint;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_adapters, save_adapters, AdapterManifest};

use crate::error::{invalid, Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::{argmax_det, softmax, Gradients, Matrix, Tape, Var, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    Ungated,
    #[default]
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterShape {
    pub n_groups: usize,
    pub n_experts: usize,
    pub rank: usize,
    pub din: usize,
    pub dout: usize,
}

impl Default for AdapterShape {
    fn default() -> Self {
        Self { n_groups: 4, n_experts: 2, rank: 4, din: 64, dout: 64 }
    }
}

impl AdapterShape {
    /// A single plain low-rank adapter (one group, one expert).
    pub fn plain(rank: usize, din: usize, dout: usize) -> Self {
        Self { n_groups: 1, n_experts: 1, rank, din, dout }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.n_experts == 0 || self.rank == 0 || self.din == 0 || self.dout == 0 {
            return Err(Error::Config(format!("adapter dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: u64,
    pub activated: u64,
}

/// Trainable tensors of `n_layers` adapters, and the subset touched by one
/// sample (one `A`, one `B`, every router).
pub fn count_params(shape: &AdapterShape, n_layers: usize) -> ParamCount {
    let (g, b, r, din, dout) =
        (shape.n_groups as u64, shape.n_experts as u64, shape.rank as u64, shape.din as u64, shape.dout as u64);
    let routers = g * din + b * din + b * r;
    let l = n_layers as u64;
    ParamCount {
        trainable: l * (g * din * r + g * b * r * dout + routers),
        activated: l * (din * r + r * dout + routers),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertGroup {
    /// `rank x din`, shared by every expert of the group.
    pub a: Matrix,
    /// `N_b` matrices of shape `dout x rank`.
    pub b: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlgmoeLayer {
    /// Frozen `dout x din` feed-forward weight.
    pub w0: Matrix,
    pub groups: Vec<ExpertGroup>,
    /// `N_g x din`
    pub wg: Matrix,
    /// `N_b x din`
    pub wk: Matrix,
    /// `N_b x rank`
    pub wl: Matrix,
    pub mode: RoutingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeInput {
    pub x_h: Vector,
    pub x_r: Vector,
    pub x_t: Vector,
}

impl KnowledgeInput {
    pub fn new(x_h: Vector, x_r: Vector, x_t: Vector) -> Result<Self> {
        if x_h.dim() != x_r.dim() || x_h.dim() != x_t.dim() {
            return Err(invalid!("knowledge components differ in size: {}, {}, {}", x_h.dim(), x_r.dim(), x_t.dim()));
        }
        Ok(Self { x_h, x_r, x_t })
    }

    pub fn components(&self) -> [&Vector; 3] {
        [&self.x_h, &self.x_r, &self.x_t]
    }

    pub fn dim(&self) -> usize {
        self.x_h.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub group: usize,
    pub expert: usize,
    pub group_scores: Vec<f64>,
    pub sk: Vec<f64>,
    pub sl: Vec<f64>,
}

impl RoutingDecision {
    /// `(group_scores[i] / 3) * ((Sk + Sl)[j] / 6)`; 1 when there is one group and one expert.
    pub fn gate(&self) -> f64 {
        (self.group_scores[self.group] / 3.0) * ((self.sk[self.expert] + self.sl[self.expert]) / 6.0)
    }
}

fn softmax_sum(w: &Matrix, xs: &[&Vector]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; w.rows()];
    for x in xs {
        let s = softmax(&w.matvec(x)?)?;
        for (a, v) in acc.iter_mut().zip(s.data()) {
            *a += v;
        }
    }
    Ok(acc)
}

impl KlgmoeLayer {
    /// LoRA-style init: `A` and routers small Gaussian, `B` zero, so the
    /// adapter starts as the identity on `W0`.
    pub fn init(shape: &AdapterShape, w0: Matrix, mode: RoutingMode, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        if w0.shape() != (shape.dout, shape.din) {
            return Err(invalid!("W0 is {:?}, expected {}x{}", w0.shape(), shape.dout, shape.din));
        }
        let a_std = 1.0 / (shape.din as f64).sqrt();
        let groups = (0..shape.n_groups)
            .map(|_| ExpertGroup {
                a: Matrix::random_normal(shape.rank, shape.din, a_std, rng),
                b: (0..shape.n_experts).map(|_| Matrix::zeros(shape.dout, shape.rank)).collect(),
            })
            .collect();
        Ok(Self {
            w0,
            groups,
            wg: Matrix::random_normal(shape.n_groups, shape.din, a_std, rng),
            wk: Matrix::random_normal(shape.n_experts, shape.din, a_std, rng),
            wl: Matrix::random_normal(shape.n_experts, shape.rank, 1.0 / (shape.rank as f64).sqrt(), rng),
            mode,
        })
    }

    pub fn shape(&self) -> AdapterShape {
        AdapterShape {
            n_groups: self.groups.len(),
            n_experts: self.wk.rows(),
            rank: self.wl.cols(),
            din: self.w0.cols(),
            dout: self.w0.rows(),
        }
    }

    /// Checks every tensor against the shapes implied by `W0`, `Wk` and `Wl`.
    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        s.validate()?;
        let bad = |what: &str| Err(invalid!("{what} has an inconsistent shape"));
        if self.wg.shape() != (s.n_groups, s.din) {
            return bad("Wg");
        }
        if self.wk.shape() != (s.n_experts, s.din) || self.wl.shape() != (s.n_experts, s.rank) {
            return bad("Wk/Wl");
        }
        for g in &self.groups {
            if g.a.shape() != (s.rank, s.din) || g.b.len() != s.n_experts {
                return bad("expert group");
            }
            if g.b.iter().any(|b| b.shape() != (s.dout, s.rank)) {
                return bad("B matrix");
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &KnowledgeInput) -> Result<()> {
        if input.dim() != self.w0.cols() {
            return Err(invalid!("input dim {} != layer din {}", input.dim(), self.w0.cols()));
        }
        Ok(())
    }

    pub fn route_group(&self, input: &KnowledgeInput) -> Result<(usize, Vec<f64>)> {
        self.check_input(input)?;
        let scores = softmax_sum(&self.wg, &input.components())?;
        let idx = argmax_det(&Vector::from_vec(scores.clone())?)?;
        Ok((idx, scores))
    }

    /// Expert choice inside `group`; returns `(j, Sk, Sl)`.
    pub fn route_expert(&self, input: &KnowledgeInput, group: usize) -> Result<(usize, Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        let g = self.groups.get(group).ok_or_else(|| invalid!("group {group} out of range"))?;
        let sk = softmax_sum(&self.wk, &input.components())?;
        let projected: Vec<Vector> = input.components().iter().map(|x| g.a.matvec(x)).collect::<Result<_>>()?;
        let sl = softmax_sum(&self.wl, &projected.iter().collect::<Vec<_>>())?;
        let combined: Vec<f64> = sk.iter().zip(&sl).map(|(a, b)| a + b).collect();
        let idx = argmax_det(&Vector::from_vec(combined)?)?;
        Ok((idx, sk, sl))
    }

    pub fn route(&self, input: &KnowledgeInput) -> Result<RoutingDecision> {
        let (group, group_scores) = self.route_group(input)?;
        let (expert, sk, sl) = self.route_expert(input, group)?;
        Ok(RoutingDecision { group, expert, group_scores, sk, sl })
    }

    /// Outputs `[y_h, y_r, y_t]` and the routing record.
    pub fn forward(&self, input: &KnowledgeInput) -> Result<([Vector; 3], RoutingDecision)> {
        let decision = self.route(input)?;
        let gate = match self.mode {
            RoutingMode::Ungated => 1.0,
            RoutingMode::Gated => decision.gate(),
        };
        let grp = &self.groups[decision.group];
        let b = &grp.b[decision.expert];
        let mut outs = Vec::with_capacity(3);
        for x in input.components() {
            let base = self.w0.matvec(x)?;
            let delta = b.matvec(&grp.a.matvec(x)?)?.scale(gate);
            outs.push(base.add(&delta)?);
        }
        let outs: [Vector; 3] = outs.try_into().expect("three components");
        Ok((outs, decision))
    }

    /// Places the layer's tensors on `tape`: `W0` frozen, the rest trainable.
    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            w0: tape.constant(&self.w0),
            a: self.groups.iter().map(|g| tape.param(&g.a)).collect(),
            b: self.groups.iter().map(|g| g.b.iter().map(|b| tape.param(b)).collect()).collect(),
            wg: tape.param(&self.wg),
            wk: tape.param(&self.wk),
            wl: tape.param(&self.wl),
        }
    }

    /// Differentiable forward over column nodes `x = [x_h, x_r, x_t]`.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &LayerVars, x: [Var; 3]) -> Result<([Var; 3], RoutingDecision)> {
        for v in x {
            if tape.value(v).shape() != (self.w0.cols(), 1) {
                return Err(invalid!("component shape {:?} != ({}, 1)", tape.value(v).shape(), self.w0.cols()));
            }
        }
        let softmax_sum_tape = |tape: &mut Tape, w: Var, xs: &[Var]| -> Result<Var> {
            let mut parts = Vec::with_capacity(xs.len());
            for x in xs {
                let logits = tape.matmul(w, *x)?;
                parts.push(tape.softmax(logits)?);
            }
            tape.sum(&parts)
        };

        let group_scores = softmax_sum_tape(tape, vars.wg, &x)?;
        let group = crate::numerics::argmax_slice(tape.value(group_scores).data());
        let projected: Vec<Var> = x.iter().map(|xm| tape.matmul(vars.a[group], *xm)).collect::<Result<_>>()?;
        let sk = softmax_sum_tape(tape, vars.wk, &x)?;
        let sl = softmax_sum_tape(tape, vars.wl, &projected)?;
        let combined: Vec<f64> = tape.value(sk).data().iter().zip(tape.value(sl).data()).map(|(a, b)| a + b).collect();
        let expert = crate::numerics::argmax_slice(&combined);
        let decision = RoutingDecision {
            group,
            expert,
            group_scores: tape.value(group_scores).data().to_vec(),
            sk: tape.value(sk).data().to_vec(),
            sl: tape.value(sl).data().to_vec(),
        };

        let gate = match self.mode {
            RoutingMode::Ungated => None,
            RoutingMode::Gated => {
                let gs = tape.pick(group_scores, group)?;
                let gs = tape.scale(gs, 1.0 / 3.0)?;
                let ek = tape.pick(sk, expert)?;
                let el = tape.pick(sl, expert)?;
                let es = tape.add(ek, el)?;
                let es = tape.scale(es, 1.0 / 6.0)?;
                Some(tape.mul_scalar(gs, es)?)
            }
        };

        let b = vars.b[group][expert];
        let mut outs = Vec::with_capacity(3);
        for (xm, pm) in x.iter().zip(&projected) {
            let base = tape.matmul(vars.w0, *xm)?;
            let mut delta = tape.matmul(b, *pm)?;
            if let Some(g) = gate {
                delta = tape.mul_scalar(delta, g)?;
            }
            outs.push(tape.add(base, delta)?);
        }
        Ok(([outs[0], outs[1], outs[2]], decision))
    }

    /// Tensor references in the fixed order used by optimizers and checkpoints:
    /// `Wg, Wk, Wl`, then per group `A_i, B_i0 .. B_i(N_b-1)`.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.wg, &mut self.wk, &mut self.wl];
        for g in &mut self.groups {
            out.push(&mut g.a);
            out.extend(g.b.iter_mut());
        }
        out
    }

    pub fn trainable(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = vec![&self.wg, &self.wk, &self.wl];
        for g in &self.groups {
            out.push(&g.a);
            out.extend(g.b.iter());
        }
        out
    }
}

/// Tape handles of one layer's tensors.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub w0: Var,
    pub a: Vec<Var>,
    pub b: Vec<Vec<Var>>,
    pub wg: Var,
    pub wk: Var,
    pub wl: Var,
}

impl LayerVars {
    /// Gradients in [`KlgmoeLayer::trainable`] order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        let mut out = vec![grads.get(self.wg), grads.get(self.wk), grads.get(self.wl)];
        for (a, bs) in self.a.iter().zip(&self.b) {
            out.push(grads.get(*a));
            out.extend(bs.iter().map(|b| grads.get(*b)));
        }
        out
    }
}

/// Integer `(N_g, N_b)` pairs whose accounting lands closest to reported
/// trainable/activated totals, by summed relative error.
pub fn search_group_counts(
    target: ParamCount,
    rank: usize,
    projections: &[(usize, usize)],
    n_layers: usize,
    max: usize,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for g in 1..=max {
        for b in 1..=max {
            let (mut tr, mut ac) = (0u64, 0u64);
            for (din, dout) in projections {
                let c =
                    count_params(&AdapterShape { n_groups: g, n_experts: b, rank, din: *din, dout: *dout }, n_layers);
                tr += c.trainable;
                ac += c.activated;
            }
            let err =
                (tr as f64 / target.trainable as f64 - 1.0).abs() + (ac as f64 / target.activated as f64 - 1.0).abs();
            out.push((g, b, err));
        }
    }
    out.sort_by(|x, y| x.2.total_cmp(&y.2));
    out
}
