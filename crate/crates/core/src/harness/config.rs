use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dads::DadsConfig;
use crate::dami::ScoreAggregation;
use crate::detection::LossWeights;
use crate::error::{Error, Result};
use crate::world::{PoseNoiseConfig, WorldConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub ego: String,
    pub neighbor: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// `None` skips domain separation entirely.
    pub dads: Option<DadsConfig>,
    pub use_lscr: bool,
    pub use_dami: bool,
    #[serde(default)]
    pub score_aggregation: ScoreAggregation,
}

impl AdapterConfig {
    pub fn full() -> Self {
        Self {
            dads: Some(DadsConfig::canonical()),
            use_lscr: true,
            use_dami: true,
            score_aggregation: ScoreAggregation::SpatialMean,
        }
    }

    /// No learned adapter: resize plus channel slice/pad.
    pub fn hete() -> Self {
        Self {
            dads: None,
            use_lscr: false,
            use_dami: false,
            score_aggregation: ScoreAggregation::SpatialMean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_scenes: usize,
    pub steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            batch_scenes: 4,
            steps: 5000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    WarmStart,
    Reinit,
}

/// Homogeneous pretraining of fusion and head before the heterogeneous run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhase {
    pub pretrain_steps: usize,
    pub head: HeadInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// World config file, relative to the run config's directory.
    #[serde(default)]
    pub world_cfg: Option<PathBuf>,
    /// Inline world config; wins over `world_cfg`. Neither means the
    /// standard benchmark world.
    #[serde(default)]
    pub world: Option<WorldConfig>,
    /// Defaults to the world's default pairing.
    #[serde(default)]
    pub pairing: Option<Pairing>,
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub noise: PoseNoiseConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub two_phase: Option<TwoPhase>,
    /// Eval scenes to use; all of the split when absent.
    #[serde(default)]
    pub eval_scenes: Option<usize>,
}

impl RunConfig {
    pub fn new(adapter: AdapterConfig) -> Self {
        Self {
            world_cfg: None,
            world: None,
            pairing: None,
            adapter,
            optim: OptimConfig::default(),
            loss: LossWeights::default(),
            noise: PoseNoiseConfig::default(),
            seed: 0,
            out_dir: None,
            two_phase: None,
            eval_scenes: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let (Some(rel), None) = (&cfg.world_cfg, &cfg.world) {
            let p = if rel.is_absolute() {
                rel.clone()
            } else {
                path.parent().unwrap_or(Path::new(".")).join(rel)
            };
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            cfg.world = Some(serde_json::from_str(&text)?);
        }
        Ok(cfg)
    }

    pub fn world(&self) -> Result<WorldConfig> {
        match (&self.world, &self.world_cfg) {
            (Some(w), _) => Ok(w.clone()),
            (None, Some(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_str(&text)?)
            }
            (None, None) => Ok(WorldConfig::standard()),
        }
    }

    pub fn pairing(&self, world: &WorldConfig) -> Pairing {
        self.pairing.clone().unwrap_or_else(|| Pairing {
            ego: world.default_pairing[0].clone(),
            neighbor: world.default_pairing[1].clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.optim.lr));
        }
        if self.optim.batch_scenes == 0 {
            return bad("batch_scenes must be at least 1".into());
        }
        if self.adapter.use_dami && self.optim.batch_scenes < 2 {
            return bad("use_dami needs batch_scenes >= 2 for cross-scene negatives".into());
        }
        if let Some(d) = &self.adapter.dads {
            d.validate()?;
        }
        self.loss.validate()?;
        self.noise.validate()?;
        let world = self.world()?;
        world.validate()?;
        let p = self.pairing(&world);
        world.encoder(&p.ego)?;
        world.encoder(&p.neighbor)?;
        if self.optim.batch_scenes > world.train_scenes {
            return bad("batch_scenes exceeds the training split".into());
        }
        Ok(())
    }

    /// Same run with every path and the world resolved inline.
    pub fn locked(&self) -> Result<RunConfig> {
        let world = self.world()?;
        Ok(RunConfig {
            world_cfg: None,
            pairing: Some(self.pairing(&world)),
            world: Some(world),
            ..self.clone()
        })
    }
}
