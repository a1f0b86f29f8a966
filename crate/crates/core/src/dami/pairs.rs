use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::FeatureMap;

/// Where a pair's negative sample comes from. Indices are batch positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeSource {
    /// Same-rank neighbor of the cyclically next qualifying scene.
    NextSceneNeighbor { scene: usize, neighbor: usize },
    /// Aligned ego feature of another scene (only one scene qualifies).
    OtherSceneEgo { scene: usize },
}

impl NegativeSource {
    pub fn scene(&self) -> usize {
        match *self {
            Self::NextSceneNeighbor { scene, .. } | Self::OtherSceneEgo { scene } => scene,
        }
    }
}

/// One (anchor, positive, negative) triple by batch indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    /// 1-based neighbor rank.
    pub rank: usize,
    /// Anchor and positive both come from this scene.
    pub scene: usize,
    /// Positive neighbor index (0-based, `rank - 1`).
    pub neighbor: usize,
    pub negative: NegativeSource,
}

/// Index-level pair construction for a batch with the given neighbor counts.
///
/// Rank `k` runs over `1..=max(n_nei)`; a scene qualifies at rank `k` when
/// it has at least `k` neighbors. With two or more qualifying scenes each
/// takes the next one's rank-`k` positive as its negative (cyclically); a
/// lone qualifying scene takes the ego feature of a uniformly drawn other
/// scene.
pub fn plan_pairs(n_nei: &[usize], rng: &mut impl Rng) -> Result<Vec<PairEntry>> {
    if n_nei.len() < 2 {
        return Err(Error::Pairing(format!(
            "need at least 2 scenes for cross-scene negatives, got {}",
            n_nei.len()
        )));
    }
    if let Some(b) = n_nei.iter().position(|&n| n == 0) {
        return Err(Error::Pairing(format!("scene {b} has no neighbors")));
    }
    let max_rank = n_nei.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(n_nei.iter().sum());
    for rank in 1..=max_rank {
        let qual: Vec<usize> = (0..n_nei.len()).filter(|&b| n_nei[b] >= rank).collect();
        let neighbor = rank - 1;
        if qual.len() >= 2 {
            for (i, &scene) in qual.iter().enumerate() {
                let next = qual[(i + 1) % qual.len()];
                out.push(PairEntry {
                    rank,
                    scene,
                    neighbor,
                    negative: NegativeSource::NextSceneNeighbor { scene: next, neighbor },
                });
            }
        } else {
            let scene = qual[0];
            let mut q = rng.random_range(0..n_nei.len());
            while q == scene {
                q = rng.random_range(0..n_nei.len());
            }
            out.push(PairEntry {
                rank,
                scene,
                neighbor,
                negative: NegativeSource::OtherSceneEgo { scene: q },
            });
        }
    }
    Ok(out)
}

/// Aligned features of one scene, ready for pairing.
#[derive(Clone, Debug)]
pub struct AlignedScene {
    pub scene_id: u64,
    pub ego: FeatureMap,
    pub neighbors: Vec<FeatureMap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub anchor_scene_id: u64,
    pub neighbor: usize,
    pub negative_scene_id: u64,
    pub negative: NegativeSource,
}

#[derive(Clone, Debug)]
pub struct PairBatch {
    pub anchors: Vec<FeatureMap>,
    pub positives: Vec<FeatureMap>,
    pub negatives: Vec<FeatureMap>,
    pub k: usize,
    pub provenance: Vec<Provenance>,
}

/// Materialize the plan for a batch of aligned scenes.
pub fn build_pairs(batch: &[AlignedScene], rng: &mut impl Rng) -> Result<PairBatch> {
    for (i, a) in batch.iter().enumerate() {
        if batch[..i].iter().any(|b| b.scene_id == a.scene_id) {
            return Err(Error::Pairing(format!("scene id {} appears twice in the batch", a.scene_id)));
        }
    }
    let n_nei: Vec<usize> = batch.iter().map(|s| s.neighbors.len()).collect();
    let plan = plan_pairs(&n_nei, rng)?;
    let mut pb = PairBatch {
        anchors: Vec::with_capacity(plan.len()),
        positives: Vec::with_capacity(plan.len()),
        negatives: Vec::with_capacity(plan.len()),
        k: plan.len(),
        provenance: Vec::with_capacity(plan.len()),
    };
    for e in &plan {
        let s = &batch[e.scene];
        pb.anchors.push(s.ego.clone());
        pb.positives.push(s.neighbors[e.neighbor].clone());
        let neg_scene = &batch[e.negative.scene()];
        pb.negatives.push(match e.negative {
            NegativeSource::NextSceneNeighbor { neighbor, .. } => neg_scene.neighbors[neighbor].clone(),
            NegativeSource::OtherSceneEgo { .. } => neg_scene.ego.clone(),
        });
        pb.provenance.push(Provenance {
            anchor_scene_id: s.scene_id,
            neighbor: e.neighbor,
            negative_scene_id: neg_scene.scene_id,
            negative: e.negative,
        });
    }
    Ok(pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_scenes_two_and_one_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = plan_pairs(&[2, 1], &mut rng).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan[0].negative, NegativeSource::NextSceneNeighbor { scene: 1, neighbor: 0 });
        assert_eq!(plan[1].negative, NegativeSource::NextSceneNeighbor { scene: 0, neighbor: 0 });
        assert_eq!((plan[2].scene, plan[2].neighbor), (0, 1));
        assert_eq!(plan[2].negative, NegativeSource::OtherSceneEgo { scene: 1 });
    }

    #[test]
    fn one_neighbor_each_never_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = plan_pairs(&[1, 1], &mut rng).unwrap();
        assert_eq!(plan.len(), 2);
        assert!(plan
            .iter()
            .all(|e| matches!(e.negative, NegativeSource::NextSceneNeighbor { .. })));
    }

    #[test]
    fn uniform_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(plan_pairs(&[3; 5], &mut rng).unwrap().len(), 15);
    }

    #[test]
    fn single_scene_or_empty_scene_is_pairing_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(plan_pairs(&[2], &mut rng), Err(Error::Pairing(_))));
        assert!(matches!(plan_pairs(&[2, 0], &mut rng), Err(Error::Pairing(_))));
    }
}
