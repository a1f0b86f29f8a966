use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Planar pose; `yaw` in radians, kept in (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Local point -> parent frame.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }

    /// Parent-frame point -> local frame.
    pub fn apply_inverse(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// `self` followed by `local` expressed in `self`'s frame.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let [x, y] = self.apply([local.x, local.y]);
        Pose2D::new(x, y, self.yaw + local.yaw)
    }

    /// `other` expressed in `self`'s frame.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        let [x, y] = self.apply_inverse([other.x, other.y]);
        Pose2D::new(x, y, other.yaw - self.yaw)
    }
}

/// Ground-truth box in the ego frame. `l` runs along the heading, `w`
/// across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

impl GroundTruthBox {
    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        box_corners(self.cx, self.cy, self.w, self.l, self.yaw)
    }

    pub fn transformed(&self, to_local: &Pose2D) -> GroundTruthBox {
        let [cx, cy] = to_local.apply_inverse([self.cx, self.cy]);
        GroundTruthBox {
            cx,
            cy,
            yaw: normalize_angle(self.yaw - to_local.yaw),
            ..*self
        }
    }

    /// Longitudinal/lateral coordinates of `p` in the box frame.
    pub fn local(&self, p: [f64; 2]) -> [f64; 2] {
        Pose2D::new(self.cx, self.cy, self.yaw).apply_inverse(p)
    }
}

pub fn box_corners(cx: f64, cy: f64, w: f64, l: f64, yaw: f64) -> [[f64; 2]; 4] {
    let pose = Pose2D::new(cx, cy, yaw);
    let (hl, hw) = (l / 2.0, w / 2.0);
    [
        pose.apply([hl, hw]),
        pose.apply([-hl, hw]),
        pose.apply([-hl, -hw]),
        pose.apply([hl, -hw]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        let near = normalize_angle(PI - 0.01 + 0.05);
        assert!(near > -PI && near <= PI && near < 0.0);
    }

    #[test]
    fn relative_then_compose_round_trips() {
        let a = Pose2D::new(3.0, -2.0, 0.7);
        let b = Pose2D::new(-1.0, 5.0, -2.9);
        let back = a.compose(&a.relative(&b));
        assert!((back.x - b.x).abs() < 1e-12 && (back.y - b.y).abs() < 1e-12);
        assert!((normalize_angle(back.yaw - b.yaw)).abs() < 1e-12);
    }

    #[test]
    fn corners_are_counter_clockwise() {
        let c = box_corners(0.0, 0.0, 2.0, 4.0, 0.3);
        let area: f64 = (0..4)
            .map(|i| {
                let (p, q) = (c[i], c[(i + 1) % 4]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
            / 2.0;
        assert!((area - 8.0).abs() < 1e-9);
    }
}
