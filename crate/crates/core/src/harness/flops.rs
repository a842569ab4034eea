//! Analytic multiply-add counts for one forward pass.
//!
//! Per layer and token: `hidden^2` for the mixing map (when present) plus
//! `hidden * ffn` for the dense feed-forward weight. The adapter adds
//! `hidden * r + r * ffn` per token for the one active expert, and the routers
//! cost `3 * (N_g * hidden + N_b * hidden + N_b * r)` per sample, since they
//! read the three pooled components. A rank of zero removes the adapter.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlopsConfig {
    pub n_layers: usize,
    pub hidden: usize,
    /// Output width of the dense weight, as a multiple of `hidden`.
    pub ffn_mult: usize,
    pub mixing: bool,
    pub rank: usize,
    pub n_groups: usize,
    pub n_experts: usize,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        Self { n_layers: 2, hidden: 68, ffn_mult: 1, mixing: true, rank: 4, n_groups: 4, n_experts: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub dense: f64,
    pub mixing: f64,
    pub adapter: f64,
    pub routers: f64,
    pub host: f64,
    pub total: f64,
}

pub fn report_flops(cfg: &FlopsConfig, avg_tokens: f64) -> Result<FlopsReport> {
    if cfg.n_layers == 0 || cfg.hidden == 0 || cfg.ffn_mult == 0 || !(avg_tokens > 0.0) {
        return Err(invalid!("flop estimate needs positive dimensions and token count"));
    }
    let l = cfg.n_layers as f64;
    let d = cfg.hidden as f64;
    let f = (cfg.hidden * cfg.ffn_mult) as f64;
    let r = cfg.rank as f64;
    let dense = l * avg_tokens * d * f;
    let mixing = if cfg.mixing { l * avg_tokens * d * d } else { 0.0 };
    let (adapter, routers) = if cfg.rank == 0 {
        (0.0, 0.0)
    } else {
        let (g, b) = (cfg.n_groups as f64, cfg.n_experts as f64);
        (l * avg_tokens * (d * r + r * f), l * 3.0 * (g * d + b * d + b * r))
    };
    let host = dense + mixing;
    Ok(FlopsReport { dense, mixing, adapter, routers, host, total: host + adapter + routers })
}
