use rand::Rng;

use crate::autodiff::{Real, Tensor, Var};
use crate::error::Result;
use crate::params::{kaiming_uniform, ConvParams, ParamStore, Session};

use super::targets::HEAD_CHANNELS;

const SLOPE: f64 = 0.1;
/// Initial objectness prior, so the first focal-loss steps are not swamped
/// by easy negatives.
const CLS_PRIOR: f64 = 0.01;

/// conv3x3 -> LReLU -> conv3x3 -> LReLU -> 1x1 to `[cls, reg x6, dir x2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadParams {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub out: ConvParams,
}

impl HeadParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let conv1 = ConvParams::new(store, &format!("{name}.conv1"), kaiming_uniform(rng, [channels, channels, 3, 3]), 1);
        let conv2 = ConvParams::new(store, &format!("{name}.conv2"), kaiming_uniform(rng, [channels, channels, 3, 3]), 1);
        let mut w: Tensor<T> = kaiming_uniform(rng, [HEAD_CHANNELS, channels, 1, 1]);
        for v in w.data_mut() {
            *v *= T::lit(0.1);
        }
        let out = ConvParams::new(store, &format!("{name}.out"), w, 0);
        store.get_mut(out.bias).data_mut()[0] = T::lit(-((1.0 - CLS_PRIOR) / CLS_PRIOR).ln());
        Self { conv1, conv2, out }
    }

    /// Reinitialize in place, e.g. when a warm-started model should start
    /// its head from scratch.
    pub fn reset<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let mut fresh = ParamStore::<T>::new();
        let c = store.get(self.conv1.weight).dims()[0];
        let h = HeadParams::new(&mut fresh, "h", c, rng);
        for (dst, src) in [
            (self.conv1.weight, h.conv1.weight),
            (self.conv1.bias, h.conv1.bias),
            (self.conv2.weight, h.conv2.weight),
            (self.conv2.bias, h.conv2.bias),
            (self.out.weight, h.out.weight),
            (self.out.bias, h.out.bias),
        ] {
            *store.get_mut(dst) = fresh.get(src).clone();
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let slope = T::lit(SLOPE);
        let y = s.conv(x, &self.conv1)?;
        let y = s.graph.leaky_relu(y, slope)?;
        let y = s.conv(y, &self.conv2)?;
        let y = s.graph.leaky_relu(y, slope)?;
        s.conv(y, &self.out)
    }
}
