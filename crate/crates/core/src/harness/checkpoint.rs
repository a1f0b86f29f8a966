use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::model::Model;
use crate::autodiff::ctns;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};

pub const CONFIG_LOCK: &str = "config.lock.json";
pub const MANIFEST: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.jsonl";
const PARAM_DIR: &str = "params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub trainable: bool,
    pub dims: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: usize,
    #[serde(default)]
    pub final_loss: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_config_lock(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(CONFIG_LOCK), &cfg.locked()?)
}

/// Parameters as one CTNS file each, plus a manifest and the locked config.
pub fn save_checkpoint(dir: &Path, cfg: &RunConfig, model: &Model, step: usize, final_loss: Option<f64>) -> Result<()> {
    let pdir = dir.join(PARAM_DIR);
    std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut tensors = Vec::with_capacity(model.store.len());
    for id in model.store.ids() {
        let name = model.store.name(id).to_string();
        let file = format!("{PARAM_DIR}/{name}.ctns");
        ctns::save(&dir.join(&file), model.store.get(id))?;
        tensors.push(TensorEntry {
            trainable: model.store.kind(id) == ParamKind::Trainable,
            dims: model.store.get(id).dims().to_vec(),
            name,
            file,
        });
    }
    write_config_lock(dir, cfg)?;
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            step,
            final_loss,
            tensors,
        },
    )
}

/// Rebuild the model described by the locked config and fill in its
/// parameters.
pub fn load_checkpoint(dir: &Path) -> Result<(RunConfig, Model, Manifest)> {
    let lock = dir.join(CONFIG_LOCK);
    let text = std::fs::read_to_string(&lock).map_err(|e| Error::io(&lock, e))?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    let mpath = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;

    let world = cfg.world()?;
    let mut model = Model::new(&cfg, &world, &cfg.pairing(&world))?;
    let mut saved = ParamStore::new();
    for e in &manifest.tensors {
        let t = ctns::load(&dir.join(&e.file))?;
        if t.dims() != e.dims.as_slice() {
            return Err(Error::Format {
                kind: "checkpoint",
                detail: format!("{} has dims {:?}, manifest says {:?}", e.name, t.dims(), e.dims),
            });
        }
        let kind = if e.trainable { ParamKind::Trainable } else { ParamKind::Buffer };
        saved.add(e.name.clone(), kind, t);
    }
    if saved.len() != model.store.len() {
        return Err(Error::Format {
            kind: "checkpoint",
            detail: format!("{} tensors saved, model has {}", saved.len(), model.store.len()),
        });
    }
    model.store.load_from(&saved)?;
    Ok((cfg, model, manifest))
}
