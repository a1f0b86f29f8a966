//! Spatial-channel resizing of projected neighbor features onto the ego
//! feature geometry: a 1x1 convolution for channels, then bilinear resize.

use rand::Rng;

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Result};
use crate::params::{kaiming_uniform, ConvParams, ParamStore, Session};
use crate::world::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LscrParams {
    pub conv: ConvParams,
    pub in_channels: usize,
    pub out_channels: usize,
    pub target_h: usize,
    pub target_w: usize,
}

impl LscrParams {
    /// Kaiming-uniform 1x1 weight `[out, in, 1, 1]`, zero bias.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        target: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let [c, h, w] = target;
        let weight = kaiming_uniform(rng, [c, in_channels, 1, 1]);
        Self {
            conv: ConvParams::new(store, &format!("{name}.conv"), weight, 0),
            in_channels,
            out_channels: c,
            target_h: h,
            target_w: w,
        }
    }

    /// `[C', H', W']` or `[N, C', H', W']` in, ego geometry out.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let dims = s.graph.dims(x);
        let c_axis = dims.len().checked_sub(3).ok_or_else(|| dim_err!("LSCR input {dims:?} is not a feature map"))?;
        if dims[c_axis] != self.in_channels {
            return Err(dim_err!(
                "LSCR expects {} input channels, got {}",
                self.in_channels,
                dims[c_axis]
            ));
        }
        let y = s.conv(x, &self.conv)?;
        s.graph.bilinear_resize(y, self.target_h, self.target_w)
    }
}

/// Inference-only forward over a single map.
pub fn lscr_forward(store: &ParamStore<f32>, params: &LscrParams, f_proj: &FeatureMap) -> Result<FeatureMap> {
    let mut s = Session::new(store, crate::params::Mode::Eval, false);
    let x = s.input(f_proj.data.clone())?;
    let y = params.forward(&mut s, x)?;
    Ok(FeatureMap::new(s.graph.value(y).clone(), f_proj.extent_m))
}

/// Parameter-free stand-in for an adapter: bilinear resize, then keep the
/// leading channels or zero-pad the missing ones. Accepts `[C,H,W]` or
/// `[N,C,H,W]`.
pub fn hete_resize_tensor(x: &Tensor<f32>, target: [usize; 3]) -> Result<Tensor<f32>> {
    let [c, h, w] = target;
    let dims = x.dims().to_vec();
    let (n, c_in, batched) = match dims.len() {
        3 => (1, dims[0], false),
        4 => (dims[0], dims[1], true),
        _ => return Err(dim_err!("hete_resize input {dims:?} is not a feature map")),
    };
    let resized = if dims[dims.len() - 2..] == [h, w] {
        x.clone()
    } else {
        let mut g = Graph::<f32>::new();
        let v = g.constant(x.clone())?;
        let r = g.bilinear_resize(v, h, w)?;
        g.value(r).clone()
    };
    if c_in == c {
        return Ok(resized);
    }
    let plane = h * w;
    let src = resized.data();
    let mut out = vec![0f32; n * c * plane];
    let keep = c.min(c_in);
    for ni in 0..n {
        let from = &src[ni * c_in * plane..(ni * c_in + keep) * plane];
        out[ni * c * plane..(ni * c + keep) * plane].copy_from_slice(from);
    }
    let out_dims = if batched { vec![n, c, h, w] } else { vec![c, h, w] };
    Tensor::new(out_dims, out)
}

pub fn hete_resize(f_proj: &FeatureMap, target: [usize; 3]) -> Result<FeatureMap> {
    Ok(FeatureMap::new(hete_resize_tensor(&f_proj.data, target)?, f_proj.extent_m))
}
