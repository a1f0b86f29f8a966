use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AdapterConfig, RunConfig};
use super::eval::evaluate;
use super::metrics::MetricsRecord;
use super::train::{train_model, Benchmark};
use crate::dads::DadsConfig;
use crate::error::{Error, Result};

pub const FULL_ROW: &str = "LSCR+DADS+DAMI";

/// Component grid: none, LSCR, LSCR+DADS, LSCR+DAMI, and all three.
pub fn component_grid() -> Vec<(&'static str, AdapterConfig)> {
    let lscr = AdapterConfig {
        use_lscr: true,
        ..AdapterConfig::hete()
    };
    vec![
        ("none", AdapterConfig::hete()),
        ("LSCR", lscr.clone()),
        (
            "LSCR+DADS",
            AdapterConfig {
                dads: Some(DadsConfig::canonical()),
                ..lscr.clone()
            },
        ),
        (
            "LSCR+DAMI",
            AdapterConfig {
                use_dami: true,
                ..lscr
            },
        ),
        (FULL_ROW, AdapterConfig::full()),
    ]
}

/// Stacking grid, each with LSCR and DAMI on.
pub fn stacking_grid() -> Vec<(&'static str, AdapterConfig)> {
    DadsConfig::grid()
        .into_iter()
        .map(|(label, d)| {
            (
                label,
                AdapterConfig {
                    dads: Some(d),
                    ..AdapterConfig::full()
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: String,
    pub row: String,
    pub use_lscr: bool,
    pub dads: String,
    pub use_dami: bool,
    pub seed: u64,
    pub ap50: f64,
    pub ap70: f64,
    pub ego_ap50: f64,
    pub final_loss: f64,
}

/// Trains and evaluates both grids with the base config's seed, world and
/// optimizer settings. A config that appears in both tables is trained
/// once. Every row is evaluated on the same eval scenes.
pub fn ablate(base: &RunConfig, out_dir: Option<&Path>) -> Result<Vec<AblationRow>> {
    let world = base.world()?;
    let bench = Benchmark::new(&world, &base.pairing(&world))?;
    let mut done: BTreeMap<String, (MetricsRecord, f64)> = BTreeMap::new();
    let mut rows = Vec::new();
    for (table, grid) in [("components", component_grid()), ("dads_stacking", stacking_grid())] {
        for (label, adapter) in grid {
            let key = serde_json::to_string(&adapter)?;
            if !done.contains_key(&key) {
                let mut cfg = base.clone();
                cfg.adapter = adapter.clone();
                let run = train_model(&cfg, &bench, None)?;
                let m = evaluate(&run.model, &bench.eval, &cfg.noise, cfg.eval_scenes)?;
                let tail = run.losses.len().min(50);
                let final_loss = if tail == 0 {
                    f64::NAN
                } else {
                    run.losses[run.losses.len() - tail..].iter().sum::<f64>() / tail as f64
                };
                done.insert(key.clone(), (m, final_loss));
            }
            let (m, final_loss) = &done[&key];
            rows.push(AblationRow {
                table: table.into(),
                row: label.into(),
                use_lscr: adapter.use_lscr,
                dads: adapter.dads.as_ref().map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
                use_dami: adapter.use_dami,
                seed: base.seed,
                ap50: m.ap50,
                ap70: m.ap70,
                ego_ap50: m.ego_ap50,
                final_loss: *final_loss,
            });
        }
    }
    if let Some(dir) = out_dir {
        write_csv(&dir.join("results.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        kind: "csv",
        detail: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            kind: "csv",
            detail: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
