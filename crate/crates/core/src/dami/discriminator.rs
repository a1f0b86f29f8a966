use rand::Rng;

use crate::autodiff::{Real, Var};
use crate::error::{dim_err, Result};
use crate::params::{kaiming_uniform, BnParams, BnStats, ConvParams, ParamStore, Session};

const SLOPE: f64 = 0.1;

/// Scores an (anchor, sample) pair per cell:
/// `[2C->C 3x3, BN, LReLU, C->C/2 3x3, BN, LReLU, C/2->1 1x1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub channels: usize,
    pub conv1: ConvParams,
    pub bn1: BnParams,
    pub stats1: BnStats,
    pub conv2: ConvParams,
    pub bn2: BnParams,
    pub stats2: BnStats,
    pub conv3: ConvParams,
}

impl DiscriminatorParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels < 2 {
            return Err(dim_err!("discriminator needs at least 2 feature channels, got {channels}"));
        }
        let half = channels / 2;
        let n = |s: &str| format!("{name}.{s}");
        Ok(Self {
            channels,
            conv1: ConvParams::new(store, &n("conv1"), kaiming_uniform(rng, [channels, 2 * channels, 3, 3]), 1),
            bn1: BnParams::new(store, &n("bn1"), channels),
            stats1: BnStats::new(store, &n("bn1"), channels),
            conv2: ConvParams::new(store, &n("conv2"), kaiming_uniform(rng, [half, channels, 3, 3]), 1),
            bn2: BnParams::new(store, &n("bn2"), half),
            stats2: BnStats::new(store, &n("bn2"), half),
            conv3: ConvParams::new(store, &n("conv3"), kaiming_uniform(rng, [1, half, 1, 1]), 0),
        })
    }

    /// Score maps `[N,1,H,W]` for anchors and samples `[N,C,H,W]` (or
    /// `[C,H,W]`). The anchor occupies the leading channels.
    pub fn discriminate<T: Real>(&self, s: &mut Session<T>, anchor: Var, sample: Var) -> Result<Var> {
        let (da, ds) = (s.graph.dims(anchor), s.graph.dims(sample));
        if da != ds {
            return Err(dim_err!("anchor {da:?} and sample {ds:?} differ"));
        }
        let axis = da.len().checked_sub(3).ok_or_else(|| dim_err!("discriminator input {da:?} is not a feature map"))?;
        if da[axis] != self.channels {
            return Err(dim_err!("discriminator built for {} channels, got {}", self.channels, da[axis]));
        }
        let slope = T::lit(SLOPE);
        let x = s.graph.concat(&[anchor, sample], axis)?;
        let y = s.conv(x, &self.conv1)?;
        let y = s.batchnorm(y, &self.bn1, &self.stats1)?;
        let y = s.graph.leaky_relu(y, slope)?;
        let y = s.conv(y, &self.conv2)?;
        let y = s.batchnorm(y, &self.bn2, &self.stats2)?;
        let y = s.graph.leaky_relu(y, slope)?;
        s.conv(y, &self.conv3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};
    use crate::params::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(c: usize) -> (ParamStore<f64>, DiscriminatorParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = DiscriminatorParams::new(&mut store, "disc", c, &mut rng).unwrap();
        (store, d)
    }

    #[test]
    fn score_map_keeps_spatial_dims() {
        let (store, d) = build(32);
        let mut s = Session::new(&store, Mode::Eval, false);
        let a = s.input(Tensor::full([32, 12, 44], 0.3)).unwrap();
        let b = s.input(Tensor::full([32, 12, 44], -0.2)).unwrap();
        let m = d.discriminate(&mut s, a, b).unwrap();
        assert_eq!(s.graph.dims(m), &[1, 12, 44]);
    }

    #[test]
    fn zero_pair_scores_are_spatially_constant() {
        let (store, d) = build(4);
        let mut s = Session::new(&store, Mode::Eval, false);
        let z = s.input(Tensor::zeros([4, 5, 7])).unwrap();
        let m = d.discriminate(&mut s, z, z).unwrap();
        let v = s.graph.value(m).data();
        assert!(v.iter().all(|&x| (x - v[0]).abs() < 1e-12));
    }

    #[test]
    fn matches_layer_by_layer_composition() {
        let (store, d) = build(4);
        let a = Tensor::from_fn([2, 4, 5, 6], |i| ((i * 13 % 29) as f64 - 14.0) * 0.07);
        let b = Tensor::from_fn([2, 4, 5, 6], |i| ((i * 7 % 23) as f64 - 11.0) * 0.09);
        let mut s = Session::new(&store, Mode::Train, false);
        let (va, vb) = (s.input(a.clone()).unwrap(), s.input(b.clone()).unwrap());
        let got = d.discriminate(&mut s, va, vb).unwrap();
        let got = s.graph.value(got).clone();

        // same layers spelled out on a bare graph
        let mut g = Graph::<f64>::new();
        let p = |g: &mut Graph<f64>, id| g.constant(store.get(id).clone()).unwrap();
        let x = {
            let (ca, cb) = (g.constant(a).unwrap(), g.constant(b).unwrap());
            g.concat(&[ca, cb], 1).unwrap()
        };
        let (w, bi) = (p(&mut g, d.conv1.weight), p(&mut g, d.conv1.bias));
        let y = g.conv2d(x, w, Some(bi), 1).unwrap();
        let (ga, be) = (p(&mut g, d.bn1.gamma), p(&mut g, d.bn1.beta));
        let y = g.batchnorm_train(y, ga, be, 1e-5).unwrap().0;
        let y = g.leaky_relu(y, 0.1).unwrap();
        let (w, bi) = (p(&mut g, d.conv2.weight), p(&mut g, d.conv2.bias));
        let y = g.conv2d(y, w, Some(bi), 1).unwrap();
        let (ga, be) = (p(&mut g, d.bn2.gamma), p(&mut g, d.bn2.beta));
        let y = g.batchnorm_train(y, ga, be, 1e-5).unwrap().0;
        let y = g.leaky_relu(y, 0.1).unwrap();
        let (w, bi) = (p(&mut g, d.conv3.weight), p(&mut g, d.conv3.bias));
        let want = g.conv2d(y, w, Some(bi), 0).unwrap();
        assert!(got.max_abs_diff(g.value(want)) < 1e-6);
    }
}
