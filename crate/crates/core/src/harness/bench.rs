use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::Pairing;
use super::model::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{Mode, Session};
use crate::world::{mix_seed, project_to_ego, SceneBuilder, SceneSample, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            warmup: 20,
            iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub agents: usize,
    pub fps: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Projection + resize + neighbor-branch separation, per neighbor.
    pub adapter_ms_per_neighbor: f64,
    /// Ego branch, fusion and head.
    pub fusion_head_ms: f64,
}

/// Fixed scene with exactly `agents` agents.
pub fn bench_scene(world: &WorldConfig, pairing: &Pairing, agents: usize) -> Result<SceneSample> {
    let mut w = world.clone();
    w.n_agents = [agents, agents];
    let builder = SceneBuilder::new(&w, &pairing.ego, &pairing.neighbor)?;
    for attempt in 0..100u64 {
        let seed = mix_seed(0xbe_c4, attempt);
        let s = builder.generate(attempt, seed)?;
        if s.n_nei + 1 == agents {
            return Ok(s);
        }
    }
    Err(Error::Config(format!("could not place {agents} agents in one scene")))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// One inference pass, returning (adapter seconds, fusion+head seconds).
fn infer_once(model: &Model, scene: &SceneSample) -> Result<(f64, f64)> {
    let t0 = Instant::now();
    let mut s = Session::new(&model.store, Mode::Eval, false);
    let mut nei = None;
    if scene.n_nei > 0 {
        let projected: Vec<Tensor<f32>> = scene
            .neighbor_features
            .iter()
            .enumerate()
            .map(|(j, f)| project_to_ego(f, &scene.poses[j + 1], &scene.poses[0]).data)
            .collect();
        let refs: Vec<&Tensor<f32>> = projected.iter().collect();
        let x = model.resize_neighbors(&mut s, &Tensor::stack(&refs)?)?;
        nei = Some(match &model.dads {
            Some(d) => d.nei.forward(&mut s, x)?,
            None => x,
        });
    }
    let t1 = Instant::now();
    let ego = s.input(Tensor::stack(&[&scene.ego_feature.data])?)?;
    let ego = match &model.dads {
        Some(d) => d.ego.forward(&mut s, ego)?,
        None => ego,
    };
    let mut agents = vec![s.graph.select(ego, 0)?];
    if let Some(n) = nei {
        for j in 0..scene.n_nei {
            agents.push(s.graph.select(n, j)?);
        }
    }
    let fused = s.graph.attention_fuse(&agents)?;
    let fused = s.graph.stack(&[fused])?;
    let out = model.head.forward(&mut s, fused)?;
    std::hint::black_box(s.graph.value(out));
    let t2 = Instant::now();
    Ok(((t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64()))
}

/// Timed iterations are split into this many rounds, cycling through the
/// agent counts, so slow drift of the host hits every count alike.
const ROUNDS: usize = 10;

/// Single-threaded inference throughput per collaboration size. Scene
/// generation and encoding are excluded; projection, adapter, fusion and
/// head are timed.
pub fn bench(model: &Model, world: &WorldConfig, pairing: &Pairing, agent_counts: &[usize], opts: &BenchOptions) -> Result<Vec<BenchResult>> {
    if opts.iterations == 0 {
        return Err(Error::Config("bench needs at least one timed iteration".into()));
    }
    let scenes = agent_counts
        .iter()
        .map(|&n| bench_scene(world, pairing, n))
        .collect::<Result<Vec<_>>>()?;
    for scene in &scenes {
        for _ in 0..opts.warmup {
            infer_once(model, scene)?;
        }
    }
    let mut totals = vec![Vec::with_capacity(opts.iterations); scenes.len()];
    let mut parts = vec![(0.0, 0.0); scenes.len()];
    for round in 0..ROUNDS {
        let per_round = opts.iterations * (round + 1) / ROUNDS - opts.iterations * round / ROUNDS;
        for (i, scene) in scenes.iter().enumerate() {
            for _ in 0..per_round {
                let (a, r) = infer_once(model, scene)?;
                parts[i].0 += a;
                parts[i].1 += r;
                totals[i].push((a + r) * 1e3);
            }
        }
    }
    let mut out = Vec::with_capacity(scenes.len());
    for ((scene, &agents), (mut totals, (adapter, rest))) in scenes.iter().zip(agent_counts).zip(totals.into_iter().zip(parts)) {
        let n = opts.iterations as f64;
        let mean_ms = totals.iter().sum::<f64>() / n;
        totals.sort_by(f64::total_cmp);
        out.push(BenchResult {
            agents,
            fps: 1e3 / mean_ms,
            mean_ms,
            p50_ms: percentile(&totals, 0.5),
            p95_ms: percentile(&totals, 0.95),
            adapter_ms_per_neighbor: if scene.n_nei > 0 { adapter * 1e3 / n / scene.n_nei as f64 } else { 0.0 },
            fusion_head_ms: rest * 1e3 / n,
        });
    }
    Ok(out)
}
