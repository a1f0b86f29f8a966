use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Pairing, RunConfig};
use crate::autodiff::{Tensor, Var};
use crate::dads::DadsParams;
use crate::dami::{contrast_loss, plan_pairs, DamiReport, DiscriminatorParams, NegativeSource, ScoreAggregation};
use crate::detection::{build_targets, decode, detection_loss, DecodeConfig, DetLossParts, DetectionBox, Grid, HeadParams};
use crate::error::Result;
use crate::lscr::{hete_resize_tensor, LscrParams};
use crate::params::{Mode, ParamStore, Session};
use crate::world::{mix_seed, perturb_pose, project_to_ego, GroundTruthBox, PoseNoiseConfig, SceneSample, WorldConfig};

/// Everything trainable for one pairing, plus the frozen geometry it was
/// built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore<f32>,
    pub ego_dims: [usize; 3],
    pub nei_dims: [usize; 3],
    pub grid: Grid,
    pub lscr: Option<LscrParams>,
    pub dads: Option<DadsParams>,
    pub disc: Option<DiscriminatorParams>,
    pub head: HeadParams,
    pub aggregation: ScoreAggregation,
}

fn component_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let h = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    ChaCha8Rng::seed_from_u64(mix_seed(seed, h))
}

impl Model {
    /// Each component draws from its own seeded stream, so runs that share
    /// a seed share the initialization of every component they have in
    /// common.
    pub fn new(cfg: &RunConfig, world: &WorldConfig, pairing: &Pairing) -> Result<Self> {
        let e = world.encoder(&pairing.ego)?;
        let n = world.encoder(&pairing.neighbor)?;
        let ego_dims = [e.out_channels, e.out_h, e.out_w];
        let nei_dims = [n.out_channels, n.out_h, n.out_w];
        let c = ego_dims[0];
        let mut store = ParamStore::new();
        let lscr = cfg
            .adapter
            .use_lscr
            .then(|| LscrParams::new(&mut store, "lscr", nei_dims[0], ego_dims, &mut component_rng(cfg.seed, "lscr")));
        let dads = cfg
            .adapter
            .dads
            .as_ref()
            .map(|d| DadsParams::new(&mut store, "dads", d, c, &mut component_rng(cfg.seed, "dads")))
            .transpose()?;
        let disc = if cfg.adapter.use_dami {
            Some(DiscriminatorParams::new(&mut store, "disc", c, &mut component_rng(cfg.seed, "disc"))?)
        } else {
            None
        };
        let head = HeadParams::new(&mut store, "head", c, &mut component_rng(cfg.seed, "head"));
        Ok(Self {
            store,
            ego_dims,
            nei_dims,
            grid: Grid::new(ego_dims[1], ego_dims[2], world.extent_m),
            lscr,
            dads,
            disc,
            head,
            aggregation: cfg.adapter.score_aggregation,
        })
    }

    pub fn reset_head(&mut self, seed: u64) {
        self.head.reset(&mut self.store, &mut component_rng(seed, "head"));
    }
}

/// Encoded, projected and stacked inputs for a batch of scenes.
#[derive(Clone, Debug)]
pub struct BatchInput {
    pub scene_ids: Vec<u64>,
    /// `[B, C, H, W]`.
    pub ego: Tensor<f32>,
    /// `[M, C', H', W']` neighbor maps in the ego frame, scene-major.
    pub neighbors: Option<Tensor<f32>>,
    pub n_nei: Vec<usize>,
    pub gts: Vec<Vec<GroundTruthBox>>,
}

/// Draw index for the noise on neighbor `j` of a scene; `salt` varies it
/// between training steps.
fn noise_draw(scene_id: u64, neighbor: usize, salt: u64) -> u64 {
    mix_seed(mix_seed(scene_id, neighbor as u64), salt)
}

/// Project every neighbor into its ego frame, perturbing the neighbor's
/// transmitted pose when noise is configured. Ego poses are exact.
pub fn prepare_batch(samples: &[&SceneSample], noise: &PoseNoiseConfig, salt: u64) -> Result<BatchInput> {
    let egos: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.ego_feature.data).collect();
    let mut projected = Vec::new();
    for s in samples {
        for (j, f) in s.neighbor_features.iter().enumerate() {
            let pose = perturb_pose(&s.poses[j + 1], noise, noise_draw(s.scene_id, j, salt));
            projected.push(project_to_ego(f, &pose, &s.poses[0]).data);
        }
    }
    let refs: Vec<&Tensor<f32>> = projected.iter().collect();
    Ok(BatchInput {
        scene_ids: samples.iter().map(|s| s.scene_id).collect(),
        ego: Tensor::stack(&egos)?,
        neighbors: if refs.is_empty() { None } else { Some(Tensor::stack(&refs)?) },
        n_nei: samples.iter().map(|s| s.n_nei).collect(),
        gts: samples.iter().map(|s| s.gt_boxes.clone()).collect(),
    })
}

/// Intermediate nodes of one forward pass.
pub struct Forward {
    pub head: Var,
    pub ego_aligned: Var,
    pub nei_aligned: Option<Var>,
}

impl Model {
    /// Neighbors brought to the ego geometry, before domain separation.
    pub fn resize_neighbors(&self, s: &mut Session<f32>, neighbors: &Tensor<f32>) -> Result<Var> {
        match &self.lscr {
            Some(l) => {
                let x = s.input(neighbors.clone())?;
                l.forward(s, x)
            }
            None => s.input(hete_resize_tensor(neighbors, self.ego_dims)?),
        }
    }

    /// Adapter, fusion and head. With `use_neighbors = false` the ego maps
    /// go through their branch and the head alone.
    pub fn forward(&self, s: &mut Session<f32>, batch: &BatchInput, use_neighbors: bool) -> Result<Forward> {
        let ego = s.input(batch.ego.clone())?;
        let nei = match (&batch.neighbors, use_neighbors) {
            (Some(n), true) => Some(self.resize_neighbors(s, n)?),
            _ => None,
        };
        let (ego, nei) = match &self.dads {
            Some(d) => d.forward(s, ego, nei)?,
            None => (ego, nei),
        };
        let mut fused = Vec::with_capacity(batch.n_nei.len());
        let mut offset = 0;
        for (b, &n) in batch.n_nei.iter().enumerate() {
            let mut agents = vec![s.graph.select(ego, b)?];
            if let Some(nv) = nei {
                for j in 0..n {
                    agents.push(s.graph.select(nv, offset + j)?);
                }
            }
            offset += n;
            fused.push(if agents.len() == 1 { agents[0] } else { s.graph.attention_fuse(&agents)? });
        }
        let fused = s.graph.stack(&fused)?;
        let head = self.head.forward(s, fused)?;
        Ok(Forward {
            head,
            ego_aligned: ego,
            nei_aligned: nei,
        })
    }

    /// Contrastive term over the batch's aligned features.
    pub fn dami(&self, s: &mut Session<f32>, fwd: &Forward, n_nei: &[usize], rng: &mut impl Rng) -> Result<Option<(Var, DamiReport)>> {
        let (Some(disc), Some(nei)) = (&self.disc, fwd.nei_aligned) else {
            return Ok(None);
        };
        let plan = plan_pairs(n_nei, rng)?;
        let offsets: Vec<usize> = n_nei
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        let (mut a, mut p, mut n) = (Vec::new(), Vec::new(), Vec::new());
        for e in &plan {
            a.push(s.graph.select(fwd.ego_aligned, e.scene)?);
            p.push(s.graph.select(nei, offsets[e.scene] + e.neighbor)?);
            n.push(match e.negative {
                NegativeSource::NextSceneNeighbor { scene, neighbor } => s.graph.select(nei, offsets[scene] + neighbor)?,
                NegativeSource::OtherSceneEgo { scene } => s.graph.select(fwd.ego_aligned, scene)?,
            });
        }
        let (a, p, n) = (s.graph.stack(&a)?, s.graph.stack(&p)?, s.graph.stack(&n)?);
        Ok(Some(contrast_loss(s, disc, a, p, n, self.aggregation)?))
    }

    pub fn det_loss(&self, s: &mut Session<f32>, fwd: &Forward, batch: &BatchInput, weights: &crate::detection::LossWeights) -> Result<(Var, DetLossParts)> {
        let gts: Vec<&[GroundTruthBox]> = batch.gts.iter().map(Vec::as_slice).collect();
        let targets = build_targets(&self.grid, &gts);
        detection_loss(s, fwd.head, &targets, weights)
    }

    /// Inference: boxes per scene.
    pub fn detect(&self, batch: &BatchInput, use_neighbors: bool, decode_cfg: &DecodeConfig) -> Result<Vec<Vec<DetectionBox>>> {
        let mut s = Session::new(&self.store, Mode::Eval, false);
        let fwd = self.forward(&mut s, batch, use_neighbors)?;
        let out = s.graph.value(fwd.head);
        Ok((0..batch.n_nei.len())
            .map(|b| decode(&out.index_outer(b), &self.grid, decode_cfg))
            .collect())
    }
}
