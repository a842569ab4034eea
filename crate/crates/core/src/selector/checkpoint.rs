//! Selector checkpoints: `selector.json` plus `selector.bin`, with the
//! adapters stored alongside in the adapter format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeighborTable, SelectorConfig, SelectorModel};
use crate::error::{Error, Result};
use crate::klgmoe::{load_adapters, save_adapters};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: SelectorConfig,
    hidden: usize,
    dim: usize,
    n_entities: usize,
    n_relations: usize,
    n_languages: usize,
    frozen_digest: String,
    neighbors: Vec<Vec<(u32, u32, u32)>>,
}

pub fn save_selector(model: &SelectorModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_adapters(&model.adapters, &dir.join("adapters"))?;
    let manifest = Manifest {
        config: model.config.clone(),
        hidden: model.hidden(),
        dim: model.entities.cols(),
        n_entities: model.entities.rows(),
        n_relations: model.relations.rows(),
        n_languages: model.languages.as_ref().map_or(0, |l| l.rows()),
        frozen_digest: model.frozen_digest(),
        neighbors: model.neighbors.iter().map(|ns| ns.iter().map(|(h, r, t)| (h.0, r.0, t.0)).collect()).collect(),
    };
    let mut buf = Vec::new();
    let tensors = [&model.entities, &model.relations]
        .into_iter()
        .chain(model.languages.as_ref())
        .chain(&model.mixing)
        .chain([&model.p_h, &model.p_r]);
    for m in tensors {
        for x in m.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let bin = dir.join("selector.bin");
    fs::write(&bin, buf).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join("selector.json");
    fs::write(&man, serde_json::to_string(&manifest)?).map_err(|e| Error::io(&man, e))
}

pub fn load_selector(dir: &Path) -> Result<SelectorModel> {
    let man = dir.join("selector.json");
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let (adapters, _) = load_adapters(&dir.join("adapters"))?;
    let bin = dir.join("selector.bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let bad = |msg: String| Error::Parse { path: bin.clone(), line: 0, msg };
    let mut floats = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
        let data: Vec<f64> = floats.by_ref().take(rows * cols).collect();
        if data.len() != rows * cols {
            return Err(bad("payload too short".into()));
        }
        Matrix::from_vec(rows, cols, data)
    };
    let entities = take(m.n_entities, m.dim)?;
    let relations = take(m.n_relations, m.dim)?;
    let languages = if m.n_languages > 0 { Some(take(m.n_languages, m.hidden)?) } else { None };
    let mixing = (0..m.config.n_blocks).map(|_| take(m.hidden, m.hidden)).collect::<Result<Vec<_>>>()?;
    let p_h = take(1, 1)?;
    let p_r = take(1, 1)?;
    if bytes.len() % 8 != 0 || floats.next().is_some() {
        return Err(bad("payload has trailing bytes".into()));
    }
    let neighbors: NeighborTable = m
        .neighbors
        .iter()
        .map(|ns| {
            ns.iter()
                .map(|(h, r, t)| (crate::kg::EntityIx(*h), crate::kg::RelationIx(*r), crate::kg::EntityIx(*t)))
                .collect()
        })
        .collect();
    let model =
        SelectorModel { config: m.config, entities, relations, languages, mixing, adapters, p_h, p_r, neighbors };
    if model.frozen_digest() != m.frozen_digest {
        return Err(bad("frozen tensors do not match the recorded digest".into()));
    }
    Ok(model)
}
