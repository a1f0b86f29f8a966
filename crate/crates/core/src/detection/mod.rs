//! Fusion of aligned features, the detection head and its loss, box
//! decoding, rotated IoU and average precision.

mod ap;
mod head;
mod iou;
mod loss;
mod targets;

pub use ap::{ap_from_matches, evaluate_ap};
pub use head::HeadParams;
pub use iou::{clip_polygon, nms, polygon_area, rotated_iou};
pub use loss::{detection_loss, DetLossParts, FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA};
pub use targets::{build_targets, decode, fold_yaw, DecodeConfig, Grid, Targets, HEAD_CHANNELS, REG_CHANNELS};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{dim_err, Result};
use crate::world::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_dami: f64,
    pub alpha_cls: f64,
    pub alpha_reg: f64,
    pub alpha_dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_dami: 1.0,
            alpha_cls: 1.0,
            alpha_reg: 2.0,
            alpha_dir: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_dami, self.alpha_cls, self.alpha_reg, self.alpha_dir];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(crate::Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

pub fn total_loss(det: f64, dami: f64, weights: &LossWeights) -> f64 {
    det + weights.beta_dami * dami
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn params(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.l, self.yaw]
    }
}

/// One scene's head output split by role.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionOutput {
    pub cls_map: Tensor<f32>,
    pub reg_map: Tensor<f32>,
    pub dir_map: Tensor<f32>,
}

impl DetectionOutput {
    pub fn from_head(out: &Tensor<f32>) -> Result<Self> {
        let d = out.dims();
        if d.len() != 3 || d[0] != HEAD_CHANNELS {
            return Err(dim_err!("head output must be [{HEAD_CHANNELS},H,W], got {d:?}"));
        }
        let hw = d[1] * d[2];
        let part = |from: usize, n: usize| Tensor::new(vec![n, d[1], d[2]], out.data()[from * hw..(from + n) * hw].to_vec());
        Ok(Self {
            cls_map: part(0, 1)?,
            reg_map: part(1, REG_CHANNELS)?,
            dir_map: part(1 + REG_CHANNELS, 2)?,
        })
    }
}

/// Per-cell attention over agents with the ego map as the query.
pub fn attention_fuse(features: &[FeatureMap]) -> Result<FeatureMap> {
    let first = features.first().ok_or_else(|| dim_err!("fusion needs at least one map"))?;
    let mut g = Graph::<f32>::new();
    let vars = features
        .iter()
        .map(|f| g.constant(f.data.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = g.attention_fuse(&vars)?;
    Ok(FeatureMap::new(g.value(out).clone(), first.extent_m))
}
