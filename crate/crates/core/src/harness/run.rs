use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ablate::{ablate, write_csv, AblationRow};
use super::bench::{bench, BenchOptions, BenchResult};
use super::checkpoint::{load_checkpoint, save_checkpoint, write_config_lock, METRICS};
use super::config::RunConfig;
use super::eval::evaluate;
use super::metrics::{Event, MetricsRecord, MetricsWriter};
use super::noise::noise_sweep;
use super::train::{train_model, Benchmark};
use crate::error::{Error, Result};
use crate::world::{Dataset, Split};

pub const BENCH_DIR: &str = "bench";
pub const NOISE_DIR: &str = "noise_sweep";
pub const RESULTS: &str = "results.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub steps: usize,
    /// Mean total loss over the last 50 steps.
    pub final_loss: Option<f64>,
}

fn tail_mean(losses: &[f64]) -> Option<f64> {
    let n = losses.len().min(50);
    (n > 0).then(|| losses[losses.len() - n..].iter().sum::<f64>() / n as f64)
}

/// Train one config into `out_dir`: `config.lock.json` first, a metrics
/// record per step, and the final checkpoint.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    write_config_lock(out_dir, cfg)?;
    let world = cfg.world()?;
    let bench = Benchmark::new(&world, &cfg.pairing(&world))?;
    let mut sink = MetricsWriter::create(&out_dir.join(METRICS))?;
    let run = train_model(cfg, &bench, Some(&mut sink));
    sink.flush()?;
    let run = run?;
    let final_loss = tail_mean(&run.losses);
    save_checkpoint(out_dir, cfg, &run.model, run.steps, final_loss)?;
    Ok(TrainReport {
        out_dir: out_dir.to_path_buf(),
        steps: run.steps,
        final_loss,
    })
}

fn eval_split(cfg: &RunConfig) -> Result<Dataset> {
    let world = cfg.world()?;
    let p = cfg.pairing(&world);
    Dataset::build(&world, Split::Eval, &p.ego, &p.neighbor)
}

/// Evaluate a checkpoint with its locked config and append the record to
/// its `metrics.jsonl`.
pub fn run_eval(ckpt: &Path) -> Result<MetricsRecord> {
    let (cfg, model, _) = load_checkpoint(ckpt)?;
    let data = eval_split(&cfg)?;
    let m = evaluate(&model, &data, &cfg.noise, cfg.eval_scenes)?;
    let mut w = MetricsWriter::append(&ckpt.join(METRICS))?;
    w.write(&Event::Eval(m.clone()))?;
    w.flush()?;
    Ok(m)
}

pub fn run_bench(ckpt: &Path, agents: &[usize], opts: &BenchOptions) -> Result<Vec<BenchResult>> {
    if agents.is_empty() {
        return Err(Error::Config("no agent counts given".into()));
    }
    let (cfg, model, _) = load_checkpoint(ckpt)?;
    let world = cfg.world()?;
    let rows = bench(&model, &world, &cfg.pairing(&world), agents, opts)?;
    write_csv(&ckpt.join(BENCH_DIR).join(RESULTS), &rows)?;
    Ok(rows)
}

pub fn run_noise_sweep(ckpt: &Path, sigma_p: &[f64], sigma_r: &[f64]) -> Result<Vec<MetricsRecord>> {
    let (cfg, model, _) = load_checkpoint(ckpt)?;
    let data = eval_split(&cfg)?;
    let rows = noise_sweep(&model, &data, cfg.noise.seed, sigma_p, sigma_r, cfg.eval_scenes)?;
    write_csv(&ckpt.join(NOISE_DIR).join(RESULTS), &rows)?;
    Ok(rows)
}

/// Both ablation grids; `results.csv` lands in `out_dir`.
pub fn run_ablate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    write_config_lock(out_dir, cfg)?;
    ablate(cfg, Some(out_dir))
}
