use super::conv::nchw;
use super::graph::{Grads, Op};
use super::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Result};

/// One-axis interpolation tap with half-pixel centers (align-corners off).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub fn half_pixel_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

impl<T: Real> Graph<T> {
    /// Bilinear resize of the two trailing axes of `[C,H,W]` / `[N,C,H,W]`.
    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(dim_err!("resize target must be positive, got {out_h}x{out_w}"));
        }
        let dims = self.dims(input).to_vec();
        let (n, c, h, w, batched) = nchw(&dims)?;
        let ty = half_pixel_taps(h, out_h);
        let tx = half_pixel_taps(w, out_w);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in x.chunks_exact(h * w) {
            for t in &ty {
                let fy = T::lit(t.frac);
                let r0 = &plane[t.lo * w..(t.lo + 1) * w];
                let r1 = &plane[t.hi * w..(t.hi + 1) * w];
                for s in &tx {
                    let fx = T::lit(s.frac);
                    let top = r0[s.lo] + (r0[s.hi] - r0[s.lo]) * fx;
                    let bot = r1[s.lo] + (r1[s.hi] - r1[s.lo]) * fx;
                    out.push(top + (bot - top) * fy);
                }
            }
        }
        let odims = if batched {
            vec![n, c, out_h, out_w]
        } else {
            vec![c, out_h, out_w]
        };
        let value = Tensor::new(odims, out)?;
        self.push(value, Op::Bilinear { input }, &[input], "bilinear_resize")
    }

    pub(crate) fn bilinear_backward(&self, input: Var, out: Var, grad: &[T], g: &mut Grads<T>) {
        if !self.requires_grad(input) {
            return;
        }
        let (_, _, h, w, _) = nchw(self.dims(input)).expect("checked");
        let od = self.dims(out);
        let (oh, ow) = (od[od.len() - 2], od[od.len() - 1]);
        let ty = half_pixel_taps(h, oh);
        let tx = half_pixel_taps(w, ow);
        let mut dx = vec![T::zero(); self.value(input).numel()];
        for (plane, gplane) in dx.chunks_exact_mut(h * w).zip(grad.chunks_exact(oh * ow)) {
            for (oy, t) in ty.iter().enumerate() {
                let fy = T::lit(t.frac);
                for (ox, s) in tx.iter().enumerate() {
                    let fx = T::lit(s.frac);
                    let gv = gplane[oy * ow + ox];
                    let top = gv * (T::one() - fy);
                    let bot = gv * fy;
                    plane[t.lo * w + s.lo] += top * (T::one() - fx);
                    plane[t.lo * w + s.hi] += top * fx;
                    plane[t.hi * w + s.lo] += bot * (T::one() - fx);
                    plane[t.hi * w + s.hi] += bot * fx;
                }
            }
        }
        g.push((input, dx));
    }
}
