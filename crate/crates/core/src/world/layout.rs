use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{normalize_angle, GroundTruthBox, Pose2D};
use super::{mix_seed, WorldConfig};
use crate::autodiff::Tensor;
use crate::error::Result;

const LANES: [f64; 4] = [-5.25, -1.75, 1.75, 5.25];
const SUPERSAMPLE: usize = 4;

/// Angular occlusion sector in an agent's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sector {
    pub bearing: f64,
    pub half_width: f64,
}

impl Sector {
    fn covers(&self, bearing: f64) -> bool {
        normalize_angle(bearing - self.bearing).abs() <= self.half_width
    }
}

/// Geometry of one collaborative frame before any encoder runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub scene_id: u64,
    pub seed: u64,
    /// World poses; index 0 is the ego.
    pub poses: Vec<Pose2D>,
    /// Objects in the ego frame.
    pub objects: Vec<GroundTruthBox>,
    pub sectors: Vec<Vec<Sector>>,
    /// `visible[agent][object]`.
    pub visible: Vec<Vec<bool>>,
}

impl SceneLayout {
    pub fn n_agents(&self) -> usize {
        self.poses.len()
    }

    /// Pose of `agent` expressed in the ego frame.
    pub fn local_pose(&self, agent: usize) -> Pose2D {
        self.poses[0].relative(&self.poses[agent])
    }

    /// Objects in `agent`'s own frame, visible or not.
    pub fn objects_in_agent_frame(&self, agent: usize) -> Vec<GroundTruthBox> {
        let local = self.local_pose(agent);
        self.objects.iter().map(|o| o.transformed(&local)).collect()
    }

    /// Two-channel occupancy raster in `agent`'s frame: box coverage and
    /// coverage of the front third of each box, plus sensor noise.
    pub fn raster(&self, agent: usize, cfg: &WorldConfig) -> Tensor<f32> {
        let [rows, cols] = cfg.cells;
        let [lx, ly] = cfg.extent_m;
        let (px, py) = (lx / cols as f64, ly / rows as f64);
        let mut cover = vec![0f64; rows * cols];
        let mut front = vec![0f64; rows * cols];
        let sub = SUPERSAMPLE as f64;
        let weight = 1.0 / (sub * sub);
        for (o, b) in self.objects_in_agent_frame(agent).iter().enumerate() {
            if !self.visible[agent][o] {
                continue;
            }
            let corners = b.corners();
            let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for [x, y] in corners {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
            let c0 = (((x0 + lx / 2.0) / px).floor().max(0.0)) as usize;
            let c1 = (((x1 + lx / 2.0) / px).ceil().max(0.0) as usize).min(cols);
            let r0 = (((y0 + ly / 2.0) / py).floor().max(0.0)) as usize;
            let r1 = (((y1 + ly / 2.0) / py).ceil().max(0.0) as usize).min(rows);
            for r in r0..r1 {
                for c in c0..c1 {
                    for sy in 0..SUPERSAMPLE {
                        for sx in 0..SUPERSAMPLE {
                            let x = (c as f64 + (sx as f64 + 0.5) / sub) * px - lx / 2.0;
                            let y = (r as f64 + (sy as f64 + 0.5) / sub) * py - ly / 2.0;
                            let [u, v] = b.local([x, y]);
                            if u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0 {
                                cover[r * cols + c] += weight;
                                if u > b.l / 6.0 {
                                    front[r * cols + c] += weight;
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0x5e45_0000 + agent as u64));
        let noise = Normal::new(0.0, cfg.visibility.raster_noise).expect("validated std");
        let mut data = Vec::with_capacity(2 * rows * cols);
        for plane in [&cover, &front] {
            for &v in plane.iter() {
                data.push((v.min(1.0) + noise.sample(&mut rng)) as f32);
            }
        }
        Tensor::new(vec![2, rows, cols], data).expect("raster dims")
    }
}

fn overlaps(a: &GroundTruthBox, b: &GroundTruthBox, margin: f64) -> bool {
    // boxes are near-axis-aligned; a circumscribed-extent test is enough
    let ra = [a.l.max(a.w) / 2.0, a.l.max(a.w) / 2.0];
    let rb = [b.l.max(b.w) / 2.0, b.l.max(b.w) / 2.0];
    (a.cx - b.cx).abs() < ra[0] + rb[0] + margin && (a.cy - b.cy).abs() < (a.w + b.w) / 2.0 + margin
}

fn visible_from(agent_obj: &GroundTruthBox, sectors: &[Sector], cfg: &WorldConfig) -> bool {
    let [lx, ly] = cfg.extent_m;
    let in_raster = agent_obj.cx.abs() < lx / 2.0 && agent_obj.cy.abs() < ly / 2.0;
    let dist = agent_obj.cx.hypot(agent_obj.cy);
    let bearing = agent_obj.cy.atan2(agent_obj.cx);
    in_raster && dist <= cfg.visibility.range_m && !sectors.iter().any(|s| s.covers(bearing))
}

/// Deterministic layout for one scene seed.
pub fn generate_layout(cfg: &WorldConfig, scene_id: u64, seed: u64) -> Result<SceneLayout> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lx, ly] = cfg.extent_m;
    let ego = Pose2D::new(
        rng.random_range(-200.0..200.0),
        rng.random_range(-200.0..200.0),
        rng.random_range(-PI..PI),
    );

    let n_agents = rng.random_range(cfg.n_agents[0]..=cfg.n_agents[1]);
    let mut local_agents = vec![Pose2D::identity()];
    let heading_jitter = Normal::new(0.0, 3f64.to_radians()).expect("std");
    let [d0, d1] = cfg.neighbor_distance_m;
    let mut tries = 0;
    while local_agents.len() < n_agents && tries < 500 {
        tries += 1;
        let dist = if d1 > d0 { rng.random_range(d0..d1) } else { d0 };
        let x = if rng.random_bool(0.5) { dist } else { -dist };
        let y = LANES[rng.random_range(0..LANES.len())];
        let flip = if rng.random_bool(0.3) { PI } else { 0.0 };
        let cand = Pose2D::new(x, y, flip + heading_jitter.sample(&mut rng));
        let clear = local_agents
            .iter()
            .all(|p| (p.x - cand.x).abs() > 7.0 || (p.y - cand.y).abs() > 2.5);
        if clear {
            local_agents.push(cand);
        }
    }

    let n_objects = rng.random_range(cfg.n_objects[0]..=cfg.n_objects[1]);
    let lateral = Normal::new(0.0, 0.25).expect("std");
    let yaw_jitter = Normal::new(0.0, 5f64.to_radians()).expect("std");
    let mut objects: Vec<GroundTruthBox> = Vec::with_capacity(n_objects);
    let mut attempts = 0;
    while objects.len() < n_objects && attempts < 400 {
        attempts += 1;
        let l = rng.random_range(4.0..5.0);
        let w = rng.random_range(1.8..2.2);
        let cx = rng.random_range(-lx / 2.0 + 3.0..lx / 2.0 - 3.0);
        let cy = (LANES[rng.random_range(0..LANES.len())] + lateral.sample(&mut rng))
            .clamp(-ly / 2.0 + 1.5, ly / 2.0 - 1.5);
        let flip = if rng.random_bool(0.5) { PI } else { 0.0 };
        let cand = GroundTruthBox {
            cx,
            cy,
            w,
            l,
            yaw: normalize_angle(flip + yaw_jitter.sample(&mut rng)),
        };
        let clear_objects = objects.iter().all(|o| !overlaps(o, &cand, 0.6));
        let clear_agents = local_agents.iter().all(|p| {
            let a = GroundTruthBox {
                cx: p.x,
                cy: p.y,
                w: 2.0,
                l: 4.6,
                yaw: p.yaw,
            };
            !overlaps(&a, &cand, 0.6)
        });
        if clear_objects && clear_agents {
            objects.push(cand);
        }
    }

    let poses: Vec<Pose2D> = local_agents.iter().map(|p| ego.compose(p)).collect();
    let mut layout = SceneLayout {
        scene_id,
        seed,
        poses,
        objects,
        sectors: Vec::new(),
        visible: Vec::new(),
    };
    let in_agent: Vec<Vec<GroundTruthBox>> = (0..n_agents.min(layout.poses.len()))
        .map(|a| layout.objects_in_agent_frame(a))
        .collect();

    let hw = cfg.visibility.sector_half_width_deg;
    for objs in &in_agent {
        let n_sec = rng.random_range(cfg.visibility.sectors[0]..=cfg.visibility.sectors[1]);
        let in_range: Vec<&GroundTruthBox> = objs
            .iter()
            .filter(|o| o.cx.hypot(o.cy) <= cfg.visibility.range_m)
            .collect();
        let mut sectors = Vec::with_capacity(n_sec);
        for k in 0..n_sec {
            let half_width = if hw[1] > hw[0] {
                rng.random_range(hw[0]..hw[1])
            } else {
                hw[0]
            }
            .to_radians();
            let bearing = if k == 0 && !in_range.is_empty() {
                let o = in_range[rng.random_range(0..in_range.len())];
                o.cy.atan2(o.cx)
            } else {
                rng.random_range(-PI..PI)
            };
            sectors.push(Sector { bearing, half_width });
        }
        layout.sectors.push(sectors);
    }
    let compute_vis = |sectors: &[Sector], objs: &[GroundTruthBox]| -> Vec<bool> {
        objs.iter().map(|o| visible_from(o, sectors, cfg)).collect()
    };
    layout.visible = in_agent
        .iter()
        .zip(&layout.sectors)
        .map(|(objs, s)| compute_vis(s, objs))
        .collect();

    // Every agent must miss at least one object that somebody else sees.
    if layout.objects.len() >= 3 && layout.n_agents() >= 2 {
        for _pass in 0..8 {
            let mut changed = false;
            for a in 0..layout.n_agents() {
                let seen_by_other =
                    |o: usize, vis: &[Vec<bool>]| (0..vis.len()).any(|b| b != a && vis[b][o]);
                let satisfied =
                    (0..layout.objects.len()).any(|o| !layout.visible[a][o] && seen_by_other(o, &layout.visible));
                if satisfied {
                    continue;
                }
                let candidates: Vec<usize> = (0..layout.objects.len())
                    .filter(|&o| layout.visible[a][o] && seen_by_other(o, &layout.visible))
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                let o = candidates[rng.random_range(0..candidates.len())];
                let target = &in_agent[a][o];
                layout.sectors[a].push(Sector {
                    bearing: target.cy.atan2(target.cx),
                    half_width: 1f64.to_radians(),
                });
                layout.visible[a] = compute_vis(&layout.sectors[a], &in_agent[a]);
                changed = true;
            }
            if !changed {
                break;
            }
        }
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WorldConfig {
        WorldConfig::standard()
    }

    #[test]
    fn same_seed_same_layout() {
        let a = generate_layout(&cfg(), 7, 7).unwrap();
        let b = generate_layout(&cfg(), 7, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.raster(0, &cfg()), b.raster(0, &cfg()));
    }

    #[test]
    fn agents_miss_objects_seen_by_others() {
        let c = cfg();
        let mut checked = 0;
        for seed in 0..200u64 {
            let l = generate_layout(&c, seed, mix_seed(99, seed)).unwrap();
            if l.objects.len() < 3 || l.n_agents() < 2 {
                continue;
            }
            let satisfiable = (0..l.n_agents()).all(|a| {
                (0..l.n_agents()).any(|b| b != a && l.visible[b].iter().any(|&v| v))
            });
            if !satisfiable {
                continue;
            }
            checked += 1;
            for a in 0..l.n_agents() {
                let ok = (0..l.objects.len())
                    .any(|o| !l.visible[a][o] && (0..l.n_agents()).any(|b| b != a && l.visible[b][o]));
                assert!(ok, "seed {seed} agent {a}");
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn empty_scene_is_well_formed() {
        let mut c = cfg();
        c.n_objects = [0, 0];
        let l = generate_layout(&c, 1, 1).unwrap();
        assert!(l.objects.is_empty());
        let r = l.raster(0, &c);
        assert_eq!(r.dims(), &[2, 24, 88]);
        assert!(r.is_finite());
    }

    #[test]
    fn raster_covers_visible_box_area() {
        let mut c = cfg();
        c.visibility.raster_noise = 0.0;
        let l = generate_layout(&c, 3, 3).unwrap();
        let r = l.raster(0, &c);
        let cell_area = 0.8 * 0.8;
        let covered: f64 = r.data()[..24 * 88].iter().map(|&v| v as f64).sum::<f64>() * cell_area;
        let want: f64 = l
            .objects
            .iter()
            .zip(&l.visible[0])
            .filter(|(_, v)| **v)
            .map(|(o, _)| o.w * o.l)
            .sum();
        assert!((covered - want).abs() < 0.1 * want.max(1.0), "{covered} vs {want}");
    }
}
