//! Adapter stacks on disk: `adapter.json` (manifest) next to `adapter.bin`.
//!
//! The binary holds little-endian f64 tensors with no header, per layer in the
//! order `W0, Wg, Wk, Wl, A_0, B_00 .. B_0(N_b-1), A_1, ...`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterShape, ExpertGroup, KlgmoeLayer, RoutingMode};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub shape: AdapterShape,
    pub n_layers: usize,
    pub mode: RoutingMode,
    pub tensor_order: Vec<String>,
    pub n_floats: usize,
}

const MANIFEST: &str = "adapter.json";
const PAYLOAD: &str = "adapter.bin";

fn order(shape: &AdapterShape) -> Vec<String> {
    let mut names: Vec<String> = ["W0", "Wg", "Wk", "Wl"].iter().map(|s| s.to_string()).collect();
    for i in 0..shape.n_groups {
        names.push(format!("A_{i}"));
        for j in 0..shape.n_experts {
            names.push(format!("B_{i}{j}"));
        }
    }
    names
}

pub fn save_adapters(layers: &[KlgmoeLayer], dir: &Path) -> Result<AdapterManifest> {
    let first = layers.first().ok_or_else(|| Error::InvalidArgument("no adapter layers to save".into()))?;
    let shape = first.shape();
    let mut buf = Vec::new();
    for layer in layers {
        layer.validate()?;
        if layer.shape() != shape || layer.mode != first.mode {
            return Err(Error::InvalidArgument("adapter layers differ in shape or mode".into()));
        }
        for m in std::iter::once(&layer.w0).chain(layer.trainable()) {
            for x in m.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let manifest = AdapterManifest {
        shape,
        n_layers: layers.len(),
        mode: first.mode,
        tensor_order: order(&shape),
        n_floats: buf.len() / 8,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let payload = dir.join(PAYLOAD);
    fs::write(&payload, buf).map_err(|e| Error::io(&payload, e))?;
    let man = dir.join(MANIFEST);
    fs::write(&man, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&man, e))?;
    Ok(manifest)
}

pub fn load_adapters(dir: &Path) -> Result<(Vec<KlgmoeLayer>, AdapterManifest)> {
    let man = dir.join(MANIFEST);
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let manifest: AdapterManifest = serde_json::from_str(&text)?;
    manifest.shape.validate()?;
    let payload = dir.join(PAYLOAD);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    if bytes.len() != manifest.n_floats * 8 {
        return Err(Error::Parse {
            path: payload,
            line: 0,
            msg: format!("payload has {} bytes, manifest says {} floats", bytes.len(), manifest.n_floats),
        });
    }
    let mut floats = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let s = manifest.shape;
    let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
        let data: Vec<f64> = floats.by_ref().take(rows * cols).collect();
        if data.len() != rows * cols {
            return Err(Error::Parse { path: dir.join(PAYLOAD), line: 0, msg: "payload too short".into() });
        }
        Matrix::from_vec(rows, cols, data)
    };
    let mut layers = Vec::with_capacity(manifest.n_layers);
    for _ in 0..manifest.n_layers {
        let w0 = take(s.dout, s.din)?;
        let wg = take(s.n_groups, s.din)?;
        let wk = take(s.n_experts, s.din)?;
        let wl = take(s.n_experts, s.rank)?;
        let mut groups = Vec::with_capacity(s.n_groups);
        for _ in 0..s.n_groups {
            let a = take(s.rank, s.din)?;
            let b = (0..s.n_experts).map(|_| take(s.dout, s.rank)).collect::<Result<_>>()?;
            groups.push(ExpertGroup { a, b });
        }
        layers.push(KlgmoeLayer { w0, groups, wg, wk, wl, mode: manifest.mode });
    }
    Ok((layers, manifest))
}
