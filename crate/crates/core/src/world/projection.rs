use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::Pose2D;
use super::{mix_seed, FeatureMap};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Gaussian localization noise on transmitted neighbor poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNoiseConfig {
    /// Std of x and y noise, meters.
    pub sigma_p: f64,
    /// Std of yaw noise, radians.
    pub sigma_r: f64,
    pub seed: u64,
}

impl Default for PoseNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_p: 0.0,
            sigma_r: 0.0,
            seed: 0,
        }
    }
}

impl PoseNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p >= 0.0 && self.sigma_r >= 0.0 && self.sigma_p.is_finite() && self.sigma_r.is_finite()) {
            return Err(Error::Config("pose noise sigmas must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_p == 0.0 && self.sigma_r == 0.0
    }
}

/// Add independent Gaussian noise to x, y and yaw. The draw is a pure
/// function of `(pose, cfg.seed, draw)`.
pub fn perturb_pose(pose: &Pose2D, cfg: &PoseNoiseConfig, draw: u64) -> Pose2D {
    if cfg.is_zero() {
        return *pose;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, draw));
    let std = Normal::new(0.0, 1.0).expect("std");
    let dx = std.sample(&mut rng) * cfg.sigma_p;
    let dy = std.sample(&mut rng) * cfg.sigma_p;
    let dyaw = std.sample(&mut rng) * cfg.sigma_r;
    Pose2D::new(pose.x + dx, pose.y + dy, pose.yaw + dyaw)
}

/// Warp a neighbor map into the ego frame by inverse bilinear sampling.
/// Output keeps the input's dims and metric extent; samples that fall
/// outside the neighbor's map read as zero.
pub fn project_to_ego(f_j: &FeatureMap, xi_j: &Pose2D, xi_i: &Pose2D) -> FeatureMap {
    let dims = f_j.data.dims();
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let [lx, ly] = f_j.extent_m;
    let (px, py) = (lx / w as f64, ly / h as f64);
    let rel = xi_j.relative(xi_i); // ego pose in the neighbor frame
    let src = f_j.data.data();
    let mut out = vec![0f32; c * h * w];
    let plane = h * w;
    for r in 0..h {
        for col in 0..w {
            let x = (col as f64 + 0.5) * px - lx / 2.0;
            let y = (r as f64 + 0.5) * py - ly / 2.0;
            let [qx, qy] = rel.apply([x, y]);
            let u = (qx + lx / 2.0) / px - 0.5;
            let v = (qy + ly / 2.0) / py - 0.5;
            let (u0, v0) = (u.floor(), v.floor());
            let (fu, fv) = (u - u0, v - v0);
            let taps = [
                (v0, u0, (1.0 - fv) * (1.0 - fu)),
                (v0, u0 + 1.0, (1.0 - fv) * fu),
                (v0 + 1.0, u0, fv * (1.0 - fu)),
                (v0 + 1.0, u0 + 1.0, fv * fu),
            ];
            for (tv, tu, wt) in taps {
                if wt == 0.0 || tv < 0.0 || tu < 0.0 || tv >= h as f64 || tu >= w as f64 {
                    continue;
                }
                let s = tv as usize * w + tu as usize;
                let o = r * w + col;
                for ch in 0..c {
                    out[ch * plane + o] += (wt as f32) * src[ch * plane + s];
                }
            }
        }
    }
    FeatureMap::new(Tensor::new(dims.to_vec(), out).expect("dims"), f_j.extent_m)
}
