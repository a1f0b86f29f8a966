use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderSpec, FeatureMap, WorldConfig};
use crate::autodiff::{ctns, Graph, Tensor};
use crate::error::{dim_err, Result};

const HIDDEN: usize = 16;
const SLOPE: f32 = 0.1;
const ARTIFACT_RANK: usize = 12;

/// Frozen random two-layer conv stack followed by the spec's distribution
/// signature. Nothing here is ever trained.
#[derive(Clone, Debug)]
pub struct FrozenEncoder {
    spec: EncoderSpec,
    conv1: Tensor<f32>,
    conv2: Tensor<f32>,
    artifact: Option<Tensor<f32>>,
}

fn kaiming_normal(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor<f32> {
    let fan_in = dims[1] * dims[2] * dims[3];
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("std");
    Tensor::from_fn(dims.to_vec(), |_| n.sample(rng) as f32)
}

/// Sum over `ARTIFACT_RANK` components of `u_r[c] * z_r(y, x)`: random unit
/// channel directions with zero channel mean times plane waves with object-scale wavelengths, fixed
/// in the sensor frame.
fn artifact_pattern(rng: &mut ChaCha8Rng, spec: &EncoderSpec) -> Tensor<f32> {
    let n = Normal::new(0.0, 1.0).expect("std");
    let (c_out, h, w) = (spec.out_channels, spec.out_h, spec.out_w);
    let amp = spec.artifact * (c_out as f64 / ARTIFACT_RANK as f64).sqrt() / 2.0;
    let mut out = vec![0.0f64; c_out * h * w];
    for _ in 0..ARTIFACT_RANK {
        let mut u: Vec<f64> = (0..c_out).map(|_| n.sample(rng)).collect();
        let mean = u.iter().sum::<f64>() / c_out as f64;
        u.iter_mut().for_each(|v| *v -= mean);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|v| *v /= norm);
        let waves: Vec<[f64; 3]> = (0..4)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / rng.random_range(3.0..8.0);
                [k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU)]
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let z: f64 = waves.iter().map(|[kx, ky, p]| (kx * x as f64 + ky * y as f64 + p).cos()).sum();
                for (c, uc) in u.iter().enumerate() {
                    out[(c * h + y) * w + x] += amp * uc * z;
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out.into_iter().map(|v| v as f32).collect()).expect("dims")
}

impl FrozenEncoder {
    pub fn new(spec: &EncoderSpec, raster_channels: usize) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let conv1 = kaiming_normal(&mut rng, [HIDDEN, raster_channels, 3, 3]);
        let conv2 = kaiming_normal(&mut rng, [spec.out_channels, HIDDEN, 3, 3]);
        let artifact = (spec.artifact > 0.0).then(|| artifact_pattern(&mut rng, spec));
        Ok(Self {
            spec: spec.clone(),
            conv1,
            conv2,
            artifact,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Spec plus weights as bytes; equal bytes mean an untouched encoder.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.spec).expect("spec serializes");
        out.extend(ctns::encode(&self.conv1));
        out.extend(ctns::encode(&self.conv2));
        if let Some(a) = &self.artifact {
            out.extend(ctns::encode(a));
        }
        out
    }

    /// Encode a `[2, rows, cols]` raster into a `[C, out_h, out_w]` map over
    /// the same metric extent.
    pub fn encode(&self, raster: &Tensor<f32>, extent_m: [f64; 2]) -> Result<FeatureMap> {
        if raster.rank() != 3 || raster.dims()[0] != self.conv1.dims()[1] {
            return Err(dim_err!("encoder expects [{}, H, W] raster, got {:?}", self.conv1.dims()[1], raster.dims()));
        }
        let mut g = Graph::<f32>::new();
        let x = g.constant(raster.clone())?;
        let w1 = g.constant(self.conv1.clone())?;
        let w2 = g.constant(self.conv2.clone())?;
        let h = g.conv2d(x, w1, None, 1)?;
        let h = g.leaky_relu(h, SLOPE)?;
        let h = g.conv2d(h, w2, None, 1)?;
        let h = g.leaky_relu(h, SLOPE)?;
        let mut h = g.bilinear_resize(h, self.spec.out_h, self.spec.out_w)?;
        if let Some(a) = &self.artifact {
            let a = g.constant(a.clone())?;
            h = g.add(h, a)?;
        }
        let scale = self.spec.sign as f32 * self.spec.gain as f32;
        let bias = self.spec.bias as f32;
        let out = g.value(h).map(|v| scale * v + bias);
        Ok(FeatureMap::new(out, extent_m))
    }
}

/// One-shot encode of a raster produced under `cfg`.
pub fn encode(spec: &EncoderSpec, raster: &Tensor<f32>, cfg: &WorldConfig) -> Result<FeatureMap> {
    FrozenEncoder::new(spec, raster.dims()[0])?.encode(raster, cfg.extent_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_layout;

    #[test]
    fn deterministic_and_shaped_by_spec() {
        let cfg = WorldConfig::standard();
        let layout = generate_layout(&cfg, 0, 11).unwrap();
        let raster = layout.raster(0, &cfg);
        for spec in &cfg.encoders {
            let a = encode(spec, &raster, &cfg).unwrap();
            let b = encode(spec, &raster, &cfg).unwrap();
            assert_eq!(a.data, b.data);
            assert_eq!(a.data.dims(), &[spec.out_channels, spec.out_h, spec.out_w]);
        }
    }

    #[test]
    fn sign_flip_is_negation_about_the_bias() {
        let cfg = WorldConfig::standard();
        let layout = generate_layout(&cfg, 0, 12).unwrap();
        let raster = layout.raster(0, &cfg);
        let mut pos = cfg.encoder("s1").unwrap().clone();
        pos.sign = 1;
        let mut neg = pos.clone();
        neg.sign = -1;
        let fp = encode(&pos, &raster, &cfg).unwrap();
        let fn_ = encode(&neg, &raster, &cfg).unwrap();
        let b = pos.bias as f32;
        for (p, n) in fp.data.data().iter().zip(fn_.data.data()) {
            assert!((n - (2.0 * b - p)).abs() < 1e-5);
        }
    }
}

#[cfg(test)]
mod statistics {
    use super::*;
    use crate::world::generate_layout;

    fn channel_mean_on(map: &Tensor<f32>, rows: usize, cols: usize) -> Vec<f64> {
        let d = map.dims();
        let mut g = Graph::<f32>::new();
        let x = g.constant(map.clone()).unwrap();
        let r = g.bilinear_resize(x, rows, cols).unwrap();
        let v = g.value(r);
        (0..rows * cols)
            .map(|p| (0..d[0]).map(|c| v.data()[c * rows * cols + p] as f64).sum::<f64>() / d[0] as f64)
            .collect()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn default_pair_disagrees_but_both_track_occupancy() {
        let cfg = WorldConfig::standard();
        let ego = FrozenEncoder::new(cfg.encoder("p0").unwrap(), 2).unwrap();
        let nei = FrozenEncoder::new(cfg.encoder("s1").unwrap(), 2).unwrap();
        let (rows, cols) = (12, 44);
        let (mut e, mut n, mut occ) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..50 {
            let layout = generate_layout(&cfg, seed, 1000 + seed).unwrap();
            let raster = layout.raster(0, &cfg);
            e.extend(channel_mean_on(&ego.encode(&raster, cfg.extent_m).unwrap().data, rows, cols));
            n.extend(channel_mean_on(&nei.encode(&raster, cfg.extent_m).unwrap().data, rows, cols));
            let cover = Tensor::new(vec![1, 24, 88], raster.data()[..24 * 88].to_vec()).unwrap();
            occ.extend(channel_mean_on(&cover, rows, cols));
        }
        let (en, eo, no) = (pearson(&e, &n), pearson(&e, &occ), pearson(&n, &occ));
        eprintln!("corr ego/nei {en:.3} ego/occ {eo:.3} nei/occ {no:.3}");
        assert!(en < 0.5);
        assert!(eo > 0.5);
        assert!(no.abs() > 0.5);
    }
}
