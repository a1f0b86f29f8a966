use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frozen procedural encoder description. Weights are a pure function of
/// `seed`, so the spec fully identifies the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub id: String,
    pub out_channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub seed: u64,
    /// Distribution signature: `out = sign * gain * h + bias`.
    pub gain: f64,
    pub bias: f64,
    pub sign: i8,
    /// Amplitude of a fixed sensor-frame pattern along one random channel
    /// direction. Carries no scene information.
    #[serde(default)]
    pub artifact: f64,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.out_h == 0 || self.out_w == 0 {
            return Err(Error::Config(format!("encoder {} has an empty output", self.id)));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::Config(format!("encoder {} sign must be +1 or -1", self.id)));
        }
        if !(self.artifact.is_finite() && self.artifact >= 0.0) {
            return Err(Error::Config(format!("encoder {} artifact must be finite and non-negative", self.id)));
        }
        if !(self.gain.is_finite() && self.gain > 0.0 && self.bias.is_finite()) {
            return Err(Error::Config(format!("encoder {} signature is invalid", self.id)));
        }
        Ok(())
    }
}

/// Angular occlusion and sensor parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityConfig {
    /// Objects farther than this from an agent are not observed.
    pub range_m: f64,
    /// Occluded sectors per agent, inclusive range.
    pub sectors: [usize; 2],
    /// Half-width of each occluded sector in degrees, sampled uniformly.
    pub sector_half_width_deg: [f64; 2],
    /// Standard deviation of additive raster noise.
    pub raster_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Dataset seed; scene seeds are derived from it.
    pub seed: u64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// BEV extent `[x_len, y_len]` in meters, centered on each agent.
    pub extent_m: [f64; 2],
    /// Occupancy raster `[rows, cols]` (rows run along y).
    pub cells: [usize; 2],
    pub n_objects: [usize; 2],
    pub n_agents: [usize; 2],
    /// Longitudinal distance of neighbors from the ego, in meters.
    pub neighbor_distance_m: [f64; 2],
    pub encoders: Vec<EncoderSpec>,
    /// `[ego id, neighbor id]` used when no pairing is given explicitly.
    pub default_pairing: [String; 2],
    pub visibility: VisibilityConfig,
}

impl WorldConfig {
    /// Desk-scale default: ego `p0` at 32x12x44, neighbor zoo mirroring
    /// the channel and spatial mismatches of the reference encoders at 1/8
    /// scale.
    pub fn standard() -> Self {
        let enc = |id: &str, c, h, w, seed, gain, bias, sign, artifact| EncoderSpec {
            id: id.into(),
            out_channels: c,
            out_h: h,
            out_w: w,
            seed,
            gain,
            bias,
            sign,
            artifact,
        };
        Self {
            seed: 42,
            train_scenes: 2000,
            eval_scenes: 400,
            extent_m: [70.4, 19.2],
            cells: [24, 88],
            n_objects: [3, 10],
            n_agents: [2, 3],
            neighbor_distance_m: [8.0, 30.0],
            encoders: vec![
                enc("p0", 32, 12, 44, 1001, 1.0, 0.0, 1, 0.0),
                enc("p1", 32, 8, 32, 1002, 0.6, -0.3, 1, 1.0),
                enc("s1", 64, 13, 44, 1003, 2.0, 0.5, -1, 5.0),
                enc("v1", 64, 13, 44, 1004, 1.5, 0.25, -1, 1.5),
            ],
            default_pairing: ["p0".into(), "s1".into()],
            visibility: VisibilityConfig {
                range_m: 28.0,
                sectors: [1, 2],
                sector_half_width_deg: [8.0, 20.0],
                raster_noise: 0.03,
            },
        }
    }

    pub fn encoder(&self, id: &str) -> Result<&EncoderSpec> {
        self.encoders
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Config(format!("unknown encoder id {id:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.extent_m.iter().all(|v| v.is_finite() && *v > 1.0)) {
            return bad("extent_m must be finite and larger than 1 m");
        }
        if self.cells.iter().any(|&c| c < 2) {
            return bad("raster needs at least 2x2 cells");
        }
        if self.n_objects[0] > self.n_objects[1] {
            return bad("n_objects range is reversed");
        }
        if self.n_agents[0] < 1 || self.n_agents[0] > self.n_agents[1] {
            return bad("n_agents range must start at 1 or more and be ordered");
        }
        let d = self.neighbor_distance_m;
        if !(d[0] >= 0.0 && d[0] <= d[1] && d[1].is_finite()) {
            return bad("neighbor_distance_m must be an ordered non-negative range");
        }
        let v = &self.visibility;
        if !(v.range_m > 0.0 && v.raster_noise >= 0.0 && v.sectors[0] <= v.sectors[1]) {
            return bad("visibility parameters are invalid");
        }
        let hw = v.sector_half_width_deg;
        if !(hw[0] >= 0.0 && hw[0] <= hw[1] && hw[1] < 180.0) {
            return bad("sector half-width range must lie in [0, 180) degrees");
        }
        for e in &self.encoders {
            e.validate()?;
        }
        self.encoder(&self.default_pairing[0])?;
        self.encoder(&self.default_pairing[1])?;
        Ok(())
    }

    pub fn ego_pitch(&self) -> [f64; 2] {
        [
            self.extent_m[0] / self.cells[1] as f64,
            self.extent_m[1] / self.cells[0] as f64,
        ]
    }
}
