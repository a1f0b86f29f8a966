use super::metrics::MetricsRecord;
use super::model::{prepare_batch, Model};
use crate::detection::{evaluate_ap, DecodeConfig, DetectionBox};
use crate::error::Result;
use crate::world::{Dataset, GroundTruthBox, PoseNoiseConfig, SceneSample};

const EVAL_BATCH: usize = 8;
/// Eval noise draws use a fixed salt so repeated evaluations agree.
const EVAL_SALT: u64 = 0xe7a1;

/// AP of the fused pipeline and of the ego-only reference over the first
/// `scenes` eval scenes (all when `None`).
pub fn evaluate(model: &Model, data: &Dataset, noise: &PoseNoiseConfig, scenes: Option<usize>) -> Result<MetricsRecord> {
    let n = scenes.unwrap_or(data.len()).min(data.len());
    let decode_cfg = DecodeConfig::default();
    let mut fused: Vec<Vec<DetectionBox>> = Vec::with_capacity(n);
    let mut ego: Vec<Vec<DetectionBox>> = Vec::with_capacity(n);
    let mut gts: Vec<Vec<GroundTruthBox>> = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_BATCH) {
        let samples = (start..(start + EVAL_BATCH).min(n))
            .map(|i| data.sample(i))
            .collect::<Result<Vec<&SceneSample>>>()?;
        let batch = prepare_batch(&samples, noise, EVAL_SALT)?;
        fused.extend(model.detect(&batch, true, &decode_cfg)?);
        ego.extend(model.detect(&batch, false, &decode_cfg)?);
        gts.extend(batch.gts);
    }
    Ok(MetricsRecord {
        ap50: evaluate_ap(&fused, &gts, 0.5)?,
        ap70: evaluate_ap(&fused, &gts, 0.7)?,
        ego_ap50: evaluate_ap(&ego, &gts, 0.5)?,
        ego_ap70: evaluate_ap(&ego, &gts, 0.7)?,
        scenes: n,
        gt_boxes: gts.iter().map(Vec::len).sum(),
        sigma_p: noise.sigma_p,
        sigma_r: noise.sigma_r,
    })
}
