use crate::world::box_corners;

use super::DetectionBox;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        / 2.0
}

/// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (cp, cq) = (cross(a, b, p), cross(a, b, q));
            if cp >= 0.0 {
                out.push(p);
            }
            if (cp >= 0.0) != (cq >= 0.0) {
                let t = cp / (cp - cq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Rotated bird's-eye-view IoU of two boxes given as (cx, cy, w, l, yaw).
pub fn rotated_iou(a: [f64; 5], b: [f64; 5]) -> f64 {
    let pa = box_corners(a[0], a[1], a[2], a[3], a[4]);
    let pb = box_corners(b[0], b[1], b[2], b[3], b[4]);
    let area_a = a[2] * a[3];
    let area_b = b[2] * b[3];
    // cheap reject on circumscribed circles
    let ra = 0.5 * a[2].hypot(a[3]);
    let rb = 0.5 * b[2].hypot(b[3]);
    if (a[0] - b[0]).hypot(a[1] - b[1]) > ra + rb {
        return 0.0;
    }
    let inter = clip_polygon(&pa, &pb);
    let inter_area = if inter.len() < 3 { 0.0 } else { polygon_area(&inter).abs() };
    let union = area_a + area_b - inter_area;
    if union <= 0.0 {
        0.0
    } else {
        (inter_area / union).clamp(0.0, 1.0)
    }
}

/// Greedy NMS by descending score; returns kept boxes in score order.
pub fn nms(mut boxes: Vec<DetectionBox>, iou_thresh: f64) -> Vec<DetectionBox> {
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut keep: Vec<DetectionBox> = Vec::with_capacity(boxes.len());
    for b in boxes {
        if keep.iter().all(|k| rotated_iou(k.params(), b.params()) <= iou_thresh) {
            keep.push(b);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axis_aligned_overlap() {
        // two 2x4 boxes offset by 2 along their length: overlap 2x2
        let a = [0.0, 0.0, 2.0, 4.0, 0.0];
        let b = [2.0, 0.0, 2.0, 4.0, 0.0];
        assert!((rotated_iou(a, b) - 4.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn square_rotated_by_45_degrees() {
        // unit square vs itself turned 45 degrees: octagon of area 2(sqrt2 - 1)
        let a = [0.0, 0.0, 1.0, 1.0, 0.0];
        let b = [0.0, 0.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4];
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!((rotated_iou(a, b) - inter / (2.0 - inter)).abs() < 1e-9);
    }

    #[test]
    fn disjoint_boxes() {
        assert_eq!(rotated_iou([0.0, 0.0, 2.0, 4.0, 0.3], [10.0, 0.0, 2.0, 4.0, 0.0]), 0.0);
    }

    #[test]
    fn nms_keeps_the_stronger_box() {
        let a = DetectionBox { cx: 0.0, cy: 0.0, w: 2.0, l: 4.0, yaw: 0.0, score: 0.9 };
        // shifted 0.2 m along its length: IoU = 7.6 / 8.4
        let b = DetectionBox { cx: 0.2, score: 0.8, ..a };
        assert!(rotated_iou(a.params(), b.params()) > 0.89);
        let kept = nms(vec![b, a], 0.5);
        assert_eq!(kept, vec![a]);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_reflexive(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64, aw in 0.5..3.0f64, al in 0.5..6.0f64, ayaw in -3.1..3.1f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64, bw in 0.5..3.0f64, bl in 0.5..6.0f64, byaw in -3.1..3.1f64,
        ) {
            let a = [ax, ay, aw, al, ayaw];
            let b = [bx, by, bw, bl, byaw];
            prop_assert!((rotated_iou(a, b) - rotated_iou(b, a)).abs() < 1e-6);
            prop_assert!((rotated_iou(a, a) - 1.0).abs() < 1e-6);
            let v = rotated_iou(a, b);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
