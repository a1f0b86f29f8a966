use std::path::PathBuf;

use anyhow::{Context, Result};
use bevadapt::harness::{run_ablate, run_bench, run_eval, run_noise_sweep, run_train, BenchOptions, RunConfig, BENCH_DIR, NOISE_DIR, RESULTS};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bevadapt", version, about = "Heterogeneous BEV feature adapters on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one config; writes config.lock.json, metrics.jsonl and a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint and append the record to its metrics.jsonl.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Inference throughput per collaboration size.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
        agents: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
    },
    /// Component and domain-separation stacking grids.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's out_dir, then ./ablation.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint across pose-noise levels.
    NoiseSweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6")]
        sigma_p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4")]
        sigma_r: Vec<f64>,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { config, seed, out, steps } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.optim.steps = n;
            }
            let out = out.or_else(|| cfg.out_dir.clone()).context("no --out given and the config has no out_dir")?;
            cfg.out_dir = Some(out.clone());
            let report = run_train(&cfg, &out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Cmd::Eval { ckpt } => {
            let m = run_eval(&ckpt).with_context(|| format!("evaluating {}", ckpt.display()))?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Cmd::Bench { ckpt, agents, warmup, iterations } => {
            let rows = run_bench(&ckpt, &agents, &BenchOptions { warmup, iterations })?;
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
            eprintln!("wrote {}", ckpt.join(BENCH_DIR).join(RESULTS).display());
        }
        Cmd::Ablate { config, out } => {
            let cfg = load(&config)?;
            let out = out.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("ablation"));
            let rows = run_ablate(&cfg, &out)?;
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
            eprintln!("wrote {}", out.join(RESULTS).display());
        }
        Cmd::NoiseSweep { ckpt, sigma_p, sigma_r } => {
            let rows = run_noise_sweep(&ckpt, &sigma_p, &sigma_r)?;
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
            eprintln!("wrote {}", ckpt.join(NOISE_DIR).join(RESULTS).display());
        }
    }
    Ok(())
}
