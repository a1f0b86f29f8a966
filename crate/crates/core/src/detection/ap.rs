use crate::error::{Error, Result};
use crate::world::GroundTruthBox;

use super::iou::rotated_iou;
use super::DetectionBox;

fn gt_params(b: &GroundTruthBox) -> [f64; 5] {
    [b.cx, b.cy, b.w, b.l, b.yaw]
}

/// All-point interpolated average precision. Detections from every scene
/// are ranked by score; each is matched greedily to the best-overlapping
/// ground truth of its own scene, and a ground truth matches at most once.
pub fn evaluate_ap(detections: &[Vec<DetectionBox>], gts: &[Vec<GroundTruthBox>], iou_thresh: f64) -> Result<f64> {
    if detections.len() != gts.len() {
        return Err(Error::Config(format!(
            "{} detection lists for {} scenes",
            detections.len(),
            gts.len()
        )));
    }
    let total_gt: usize = gts.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut ranked: Vec<(usize, &DetectionBox)> = detections
        .iter()
        .enumerate()
        .flat_map(|(s, d)| d.iter().map(move |b| (s, b)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = Vec::with_capacity(ranked.len());
    for (s, det) in &ranked {
        let mut best = (0.0, None);
        for (j, g) in gts[*s].iter().enumerate() {
            let iou = rotated_iou(det.params(), gt_params(g));
            if iou > best.0 {
                best = (iou, Some(j));
            }
        }
        let hit = match best {
            (iou, Some(j)) if iou >= iou_thresh && !matched[*s][j] => {
                matched[*s][j] = true;
                true
            }
            _ => false,
        };
        tp.push(hit);
    }
    Ok(ap_from_matches(&tp, total_gt))
}

/// Area under the precision envelope for a ranked list of hit flags.
pub fn ap_from_matches(tp: &[bool], total_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / total_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}
