use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{generate_layout, mix_seed, FeatureMap, FrozenEncoder, GroundTruthBox, Pose2D, SceneLayout, WorldConfig};
use crate::autodiff::ctns;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Eval = 1,
}

impl Split {
    pub fn scene_id(self, index: usize) -> u64 {
        ((self as u64) << 32) | index as u64
    }
}

/// One collaborative frame. Neighbor features are in the neighbor's own
/// frame; projection happens downstream so pose noise can be applied.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub scene_id: u64,
    pub ego_feature: FeatureMap,
    pub neighbor_features: Vec<FeatureMap>,
    /// World poses, ego first.
    pub poses: Vec<Pose2D>,
    /// Objects seen by at least one agent, in the ego frame.
    pub gt_boxes: Vec<GroundTruthBox>,
    pub n_nei: usize,
}

/// JSON side of an exported scene; feature maps sit next to it as CTNS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: u64,
    pub extent_m: [f64; 2],
    pub poses: Vec<Pose2D>,
    pub gt_boxes: Vec<GroundTruthBox>,
    pub ego: String,
    pub neighbors: Vec<String>,
}

pub const SCENE_MANIFEST: &str = "scene.json";

impl SceneSample {
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = SceneManifest {
            scene_id: self.scene_id,
            extent_m: self.ego_feature.extent_m,
            poses: self.poses.clone(),
            gt_boxes: self.gt_boxes.clone(),
            ego: "ego.ctns".into(),
            neighbors: (0..self.n_nei).map(|j| format!("neighbor_{j}.ctns")).collect(),
        };
        ctns::save(&dir.join(&m.ego), &self.ego_feature.data)?;
        for (f, name) in self.neighbor_features.iter().zip(&m.neighbors) {
            ctns::save(&dir.join(name), &f.data)?;
        }
        let path = dir.join(SCENE_MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let path = dir.join(SCENE_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: SceneManifest = serde_json::from_str(&text)?;
        if m.poses.len() != m.neighbors.len() + 1 {
            return Err(Error::Format {
                kind: "scene",
                detail: format!("{} poses for {} agents", m.poses.len(), m.neighbors.len() + 1),
            });
        }
        let load = |name: &str| Ok(FeatureMap::new(ctns::load(&dir.join(name))?, m.extent_m));
        Ok(Self {
            scene_id: m.scene_id,
            ego_feature: load(&m.ego)?,
            neighbor_features: m.neighbors.iter().map(|n| load(n)).collect::<Result<_>>()?,
            poses: m.poses,
            gt_boxes: m.gt_boxes,
            n_nei: m.neighbors.len(),
        })
    }
}

/// Turns layouts into samples for one (ego, neighbor) encoder pairing.
#[derive(Clone, Debug)]
pub struct SceneBuilder {
    cfg: WorldConfig,
    ego: FrozenEncoder,
    nei: FrozenEncoder,
}

impl SceneBuilder {
    pub fn new(cfg: &WorldConfig, ego_id: &str, nei_id: &str) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            ego: FrozenEncoder::new(cfg.encoder(ego_id)?, 2)?,
            nei: FrozenEncoder::new(cfg.encoder(nei_id)?, 2)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn ego_encoder(&self) -> &FrozenEncoder {
        &self.ego
    }

    pub fn nei_encoder(&self) -> &FrozenEncoder {
        &self.nei
    }

    pub fn build(&self, layout: &SceneLayout) -> Result<SceneSample> {
        let extent = self.cfg.extent_m;
        let ego_feature = self.ego.encode(&layout.raster(0, &self.cfg), extent)?;
        let neighbor_features = (1..layout.n_agents())
            .map(|a| self.nei.encode(&layout.raster(a, &self.cfg), extent))
            .collect::<Result<Vec<_>>>()?;
        let gt_boxes = layout
            .objects
            .iter()
            .enumerate()
            .filter(|(o, _)| layout.visible.iter().any(|v| v[*o]))
            .map(|(_, b)| *b)
            .collect();
        Ok(SceneSample {
            scene_id: layout.scene_id,
            n_nei: neighbor_features.len(),
            ego_feature,
            neighbor_features,
            poses: layout.poses.clone(),
            gt_boxes,
        })
    }

    pub fn generate(&self, scene_id: u64, seed: u64) -> Result<SceneSample> {
        self.build(&generate_layout(&self.cfg, scene_id, seed)?)
    }
}

/// Scene for `seed` under the config's default pairing.
pub fn generate_scene(cfg: &WorldConfig, seed: u64) -> Result<SceneSample> {
    let [ego, nei] = &cfg.default_pairing;
    SceneBuilder::new(cfg, ego, nei)?.generate(seed, seed)
}

/// One split of the benchmark. Layouts are generated up front; features
/// are encoded on first use and kept.
#[derive(Debug)]
pub struct Dataset {
    builder: SceneBuilder,
    split: Split,
    layouts: Vec<SceneLayout>,
    cache: Vec<OnceLock<SceneSample>>,
}

impl Dataset {
    pub fn build(cfg: &WorldConfig, split: Split, ego_id: &str, nei_id: &str) -> Result<Self> {
        let n = match split {
            Split::Train => cfg.train_scenes,
            Split::Eval => cfg.eval_scenes,
        };
        Self::with_len(cfg, split, ego_id, nei_id, n)
    }

    /// The first `n` scenes of a split; prefixes of the same split agree.
    pub fn with_len(cfg: &WorldConfig, split: Split, ego_id: &str, nei_id: &str, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config(format!("{split:?} split is empty")));
        }
        let builder = SceneBuilder::new(cfg, ego_id, nei_id)?;
        let layouts = (0..n)
            .map(|i| {
                let id = split.scene_id(i);
                generate_layout(cfg, id, mix_seed(cfg.seed, id))
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = (0..layouts.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            builder,
            split,
            layouts,
            cache,
        })
    }

    pub fn len(&self) -> usize {
        self.layouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layouts.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn builder(&self) -> &SceneBuilder {
        &self.builder
    }

    pub fn layout(&self, index: usize) -> &SceneLayout {
        &self.layouts[index]
    }

    pub fn sample(&self, index: usize) -> Result<&SceneSample> {
        let cell = &self.cache[index];
        if let Some(s) = cell.get() {
            return Ok(s);
        }
        let built = self.builder.build(&self.layouts[index])?;
        Ok(cell.get_or_init(|| built))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_round_trip() {
        let cfg = WorldConfig::standard();
        let a = generate_scene(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.export(dir.path()).unwrap();
        assert_eq!(SceneSample::import(dir.path()).unwrap(), a);
    }

    #[test]
    fn seed_7_is_reproducible() {
        let cfg = WorldConfig::standard();
        let a = generate_scene(&cfg, 7).unwrap();
        let b = generate_scene(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_nei, a.poses.len() - 1);
        assert_eq!(a.ego_feature.dims(), [32, 12, 44]);
        for f in &a.neighbor_features {
            assert_eq!(f.dims(), [64, 13, 44]);
        }
    }

    #[test]
    fn zero_objects_still_well_formed() {
        let mut cfg = WorldConfig::standard();
        cfg.n_objects = [0, 0];
        let s = generate_scene(&cfg, 3).unwrap();
        assert!(s.gt_boxes.is_empty());
        assert_eq!(s.ego_feature.dims(), [32, 12, 44]);
        assert!(s.ego_feature.data.is_finite());
    }

    #[test]
    fn ego_rarely_sees_everything() {
        let cfg = WorldConfig::standard();
        let (mut eligible, mut all_seen) = (0, 0);
        for seed in 0..100 {
            let l = generate_layout(&cfg, seed, seed).unwrap();
            if l.objects.len() < 3 {
                continue;
            }
            eligible += 1;
            if l.visible[0].iter().all(|&v| v) {
                all_seen += 1;
            }
        }
        assert!(eligible > 50);
        assert!((all_seen as f64) / (eligible as f64) < 0.2, "{all_seen}/{eligible}");
    }

    #[test]
    fn splits_do_not_share_scenes() {
        let cfg = WorldConfig::standard();
        let tr = Dataset::with_len(&cfg, Split::Train, "p0", "s1", 5).unwrap();
        let ev = Dataset::with_len(&cfg, Split::Eval, "p0", "s1", 5).unwrap();
        for i in 0..5 {
            assert_ne!(tr.layout(i).seed, ev.layout(i).seed);
            assert_ne!(tr.layout(i).scene_id, ev.layout(i).scene_id);
        }
        let longer = Dataset::with_len(&cfg, Split::Train, "p0", "s1", 8).unwrap();
        assert_eq!(longer.sample(4).unwrap(), tr.sample(4).unwrap());
    }

    #[test]
    fn degenerate_extent_is_config_error() {
        let mut cfg = WorldConfig::standard();
        cfg.extent_m = [0.0, 19.2];
        assert!(matches!(generate_scene(&cfg, 1), Err(Error::Config(_))));
    }
}
