use std::f64::consts::{FRAC_PI_2, PI};

use crate::autodiff::Tensor;
use crate::world::{normalize_angle, GroundTruthBox};

use super::iou::nms;
use super::DetectionBox;

pub const REG_CHANNELS: usize = 6;
pub const HEAD_CHANNELS: usize = 1 + REG_CHANNELS + 2;

/// Fold a yaw into (-pi/2, pi/2]; the dropped half turn is the direction bin.
pub fn fold_yaw(yaw: f64) -> (f64, usize) {
    let y = normalize_angle(yaw);
    if y > FRAC_PI_2 {
        (y - PI, 1)
    } else if y <= -FRAC_PI_2 {
        (y + PI, 1)
    } else {
        (y, 0)
    }
}

/// Cell layout of the ego feature map over its metric extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub extent_m: [f64; 2],
}

impl Grid {
    pub fn new(rows: usize, cols: usize, extent_m: [f64; 2]) -> Self {
        Self { rows, cols, extent_m }
    }

    pub fn pitch(&self) -> [f64; 2] {
        [self.extent_m[0] / self.cols as f64, self.extent_m[1] / self.rows as f64]
    }

    /// `(row, col)` of the cell containing the point, if inside the map.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let [px, py] = self.pitch();
        let c = ((x + self.extent_m[0] / 2.0) / px).floor();
        let r = ((y + self.extent_m[1] / 2.0) / py).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows).then(|| (r as usize, c as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let [px, py] = self.pitch();
        [
            (col as f64 + 0.5) * px - self.extent_m[0] / 2.0,
            (row as f64 + 0.5) * py - self.extent_m[1] / 2.0,
        ]
    }

    /// Regression target and direction bin of a box at its own cell.
    pub fn encode(&self, b: &GroundTruthBox, row: usize, col: usize) -> ([f64; REG_CHANNELS], usize) {
        let [px, py] = self.pitch();
        let [x0, y0] = self.cell_center(row, col);
        let (yf, dir) = fold_yaw(b.yaw);
        (
            [(b.cx - x0) / px, (b.cy - y0) / py, b.w.ln(), b.l.ln(), yf.sin(), yf.cos()],
            dir,
        )
    }

    pub fn decode(&self, reg: [f64; REG_CHANNELS], dir: usize, row: usize, col: usize, score: f64) -> DetectionBox {
        let [px, py] = self.pitch();
        let [x0, y0] = self.cell_center(row, col);
        let (yf, _) = fold_yaw(reg[4].atan2(reg[5]));
        let yaw = if dir == 1 { normalize_angle(yf + PI) } else { yf };
        DetectionBox {
            cx: x0 + reg[0] * px,
            cy: y0 + reg[1] * py,
            w: reg[2].clamp(-5.0, 5.0).exp(),
            l: reg[3].clamp(-5.0, 5.0).exp(),
            yaw,
            score,
        }
    }
}

/// Dense training targets for a batch of scenes on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `[N,1,H,W]` objectness in {0,1}.
    pub cls: Vec<f64>,
    /// `[N,6,H,W]`, zero away from positives.
    pub reg: Vec<f64>,
    /// `[N,6,H,W]` mask, one at positives.
    pub reg_weight: Vec<f64>,
    /// `[N,H,W]` direction bins.
    pub dir: Vec<usize>,
    /// `[N,H,W]` mask, one at positives.
    pub dir_weight: Vec<f64>,
    pub num_pos: usize,
}

/// Each box's center cell is positive; when two boxes share a cell the
/// first one listed wins. Boxes whose centers fall off the map are dropped.
pub fn build_targets(grid: &Grid, scenes: &[&[GroundTruthBox]]) -> Targets {
    let hw = grid.rows * grid.cols;
    let n = scenes.len();
    let mut t = Targets {
        cls: vec![0.0; n * hw],
        reg: vec![0.0; n * REG_CHANNELS * hw],
        reg_weight: vec![0.0; n * REG_CHANNELS * hw],
        dir: vec![0; n * hw],
        dir_weight: vec![0.0; n * hw],
        num_pos: 0,
    };
    for (ni, boxes) in scenes.iter().enumerate() {
        for b in boxes.iter() {
            let Some((r, c)) = grid.cell_of(b.cx, b.cy) else { continue };
            let p = r * grid.cols + c;
            if t.cls[ni * hw + p] > 0.0 {
                continue;
            }
            let (reg, dir) = grid.encode(b, r, c);
            t.cls[ni * hw + p] = 1.0;
            for (k, v) in reg.iter().enumerate() {
                let i = (ni * REG_CHANNELS + k) * hw + p;
                t.reg[i] = *v;
                t.reg_weight[i] = 1.0;
            }
            t.dir[ni * hw + p] = dir;
            t.dir_weight[ni * hw + p] = 1.0;
            t.num_pos += 1;
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_boxes: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            nms_iou: 0.1,
            max_boxes: 100,
        }
    }
}

/// Boxes from one scene's `[9,H,W]` head output.
pub fn decode(output: &Tensor<f32>, grid: &Grid, cfg: &DecodeConfig) -> Vec<DetectionBox> {
    let hw = grid.rows * grid.cols;
    debug_assert_eq!(output.dims(), &[HEAD_CHANNELS, grid.rows, grid.cols]);
    let x = output.data();
    let mut cands = Vec::new();
    for p in 0..hw {
        let score = crate::autodiff::sigmoid(x[p] as f64);
        if score < cfg.score_thresh {
            continue;
        }
        let mut reg = [0.0; REG_CHANNELS];
        for (k, r) in reg.iter_mut().enumerate() {
            *r = x[(1 + k) * hw + p] as f64;
        }
        let dir = usize::from(x[8 * hw + p] > x[7 * hw + p]);
        cands.push(grid.decode(reg, dir, p / grid.cols, p % grid.cols, score));
    }
    let mut kept = nms(cands, cfg.nms_iou);
    kept.truncate(cfg.max_boxes);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(12, 44, [70.4, 19.2])
    }

    #[test]
    fn fold_covers_both_halves() {
        assert_eq!(fold_yaw(0.3), (0.3, 0));
        let (y, d) = fold_yaw(PI - 0.2);
        assert!((y + 0.2).abs() < 1e-12 && d == 1);
        let (y, d) = fold_yaw(-FRAC_PI_2);
        assert!((y - FRAC_PI_2).abs() < 1e-12 && d == 1);
    }

    #[test]
    fn encode_then_decode_recovers_box() {
        let g = grid();
        for yaw in [0.0, 0.4, -1.2, 2.9, -3.0, PI] {
            let b = GroundTruthBox { cx: 3.3, cy: -1.9, w: 2.05, l: 4.4, yaw };
            let (r, c) = g.cell_of(b.cx, b.cy).unwrap();
            let (reg, dir) = g.encode(&b, r, c);
            let d = g.decode(reg, dir, r, c, 1.0);
            assert!((d.cx - b.cx).abs() < 1e-9 && (d.cy - b.cy).abs() < 1e-9);
            assert!((d.w - b.w).abs() < 1e-9 && (d.l - b.l).abs() < 1e-9);
            assert!(normalize_angle(d.yaw - b.yaw).abs() < 1e-9, "{yaw} -> {}", d.yaw);
        }
    }

    #[test]
    fn one_hot_cell_decodes_to_gt() {
        let g = grid();
        let b = GroundTruthBox { cx: -10.1, cy: 4.2, w: 1.9, l: 4.7, yaw: 2.5 };
        let (r, c) = g.cell_of(b.cx, b.cy).unwrap();
        let (reg, dir) = g.encode(&b, r, c);
        let hw = 12 * 44;
        let mut out = Tensor::full([HEAD_CHANNELS, 12, 44], -10.0f32);
        let p = r * 44 + c;
        out.data_mut()[p] = 10.0;
        for k in 0..6 {
            out.data_mut()[(1 + k) * hw + p] = reg[k] as f32;
        }
        out.data_mut()[(7 + dir) * hw + p] = 5.0;
        let dets = decode(&out, &g, &DecodeConfig::default());
        assert_eq!(dets.len(), 1);
        let d = dets[0];
        assert!((d.cx - b.cx).abs() < 1e-4 && (d.cy - b.cy).abs() < 1e-4);
        assert!((d.w - b.w).abs() < 1e-4 && (d.l - b.l).abs() < 1e-4);
        assert!(normalize_angle(d.yaw - b.yaw).abs() < 1e-4);
    }

    #[test]
    fn cold_map_decodes_nothing() {
        let out = Tensor::full([HEAD_CHANNELS, 12, 44], -10.0f32);
        let cfg = DecodeConfig { score_thresh: 0.3, ..Default::default() };
        assert!(decode(&out, &grid(), &cfg).is_empty());
    }

    #[test]
    fn targets_mark_center_cells() {
        let g = grid();
        let boxes = [
            GroundTruthBox { cx: 0.1, cy: 0.1, w: 2.0, l: 4.0, yaw: 0.0 },
            GroundTruthBox { cx: 0.2, cy: 0.2, w: 2.0, l: 4.0, yaw: 0.0 },
            GroundTruthBox { cx: 50.0, cy: 0.0, w: 2.0, l: 4.0, yaw: 0.0 },
        ];
        let t = build_targets(&g, &[&boxes, &[]]);
        assert_eq!(t.num_pos, 1);
        assert_eq!(t.cls.iter().sum::<f64>(), 1.0);
        assert_eq!(t.reg_weight.iter().sum::<f64>(), 6.0);
    }
}
