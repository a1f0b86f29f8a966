use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Var};
use crate::error::{dim_err, Result};
use crate::params::Session;

use super::targets::{Targets, HEAD_CHANNELS, REG_CHANNELS};
use super::LossWeights;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetLossParts {
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
    pub total: f64,
}

/// Weighted focal + smooth-L1 + direction cross-entropy over a `[N,9,H,W]`
/// head output, each normalized by the positive count (at least 1).
pub fn detection_loss<T: Real>(
    s: &mut Session<T>,
    output: Var,
    targets: &Targets,
    weights: &LossWeights,
) -> Result<(Var, DetLossParts)> {
    let dims = s.graph.dims(output).to_vec();
    if dims.len() != 4 || dims[1] != HEAD_CHANNELS {
        return Err(dim_err!("head output must be [N,{HEAD_CHANNELS},H,W], got {dims:?}"));
    }
    let cvt = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let norm = T::lit(targets.num_pos.max(1) as f64);
    let cls = s.graph.slice(output, 1, 0, 1)?;
    let reg = s.graph.slice(output, 1, 1, REG_CHANNELS)?;
    let dir = s.graph.slice(output, 1, 1 + REG_CHANNELS, 2)?;
    let l_cls = s.graph.focal_loss(cls, cvt(&targets.cls), T::lit(FOCAL_ALPHA), T::lit(FOCAL_GAMMA), norm)?;
    let l_reg = s.graph.smooth_l1_loss(reg, cvt(&targets.reg), cvt(&targets.reg_weight), T::lit(SMOOTH_L1_BETA), norm)?;
    let l_dir = s.graph.softmax_ce_loss(dir, targets.dir.clone(), cvt(&targets.dir_weight), norm)?;

    let a = s.graph.scale(l_cls, T::lit(weights.alpha_cls))?;
    let b = s.graph.scale(l_reg, T::lit(weights.alpha_reg))?;
    let c = s.graph.scale(l_dir, T::lit(weights.alpha_dir))?;
    let ab = s.graph.add(a, b)?;
    let total = s.graph.add(ab, c)?;
    let v = |s: &Session<T>, x: Var| s.graph.value(x).item().as_f64();
    let parts = DetLossParts {
        cls: v(s, l_cls),
        reg: v(s, l_reg),
        dir: v(s, l_dir),
        total: v(s, total),
    };
    Ok((total, parts))
}
