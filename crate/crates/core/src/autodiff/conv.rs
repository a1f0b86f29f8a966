use super::graph::{Grads, Op};
use super::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }
}

/// Splits `[C,H,W]` or `[N,C,H,W]` into `(n, c, h, w, batched)`.
pub(crate) fn nchw(dims: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *dims {
        [c, h, w] => Ok((1, c, h, w, false)),
        [n, c, h, w] => Ok((n, c, h, w, true)),
        _ => Err(dim_err!("expected [C,H,W] or [N,C,H,W], got {dims:?}")),
    }
}

/// Unfold one image `[C,H,W]` into `[C*kh*kw, oh*ow]`.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                let x_lo = g.pad.saturating_sub(kx);
                let x_hi = (g.w + g.pad).saturating_sub(kx).min(g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h || x_lo >= x_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy - g.pad) * g.w..][..g.w];
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    let ix0 = x_lo + kx - g.pad;
                    line[x_lo..x_hi].copy_from_slice(&src[ix0..ix0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `[C,H,W]`.
fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                let x_lo = g.pad.saturating_sub(kx);
                let x_hi = (g.w + g.pad).saturating_sub(kx).min(g.ow);
                if x_lo >= x_hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy - g.pad) * g.w..][..g.w];
                    let ix0 = x_lo + kx - g.pad;
                    for (d, s) in dst[ix0..ix0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[oy * g.ow + x_lo..oy * g.ow + x_hi])
                    {
                        *d += *s;
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    fn conv_geom(&self, input: Var, weight: Var, padding: usize) -> Result<(ConvGeom, bool)> {
        let (n, c, h, w, batched) = nchw(self.dims(input))?;
        let wd = self.dims(weight);
        let [o, wc, kh, kw] = *wd else {
            return Err(dim_err!("conv weight must be [O,C,kH,kW], got {wd:?}"));
        };
        if wc != c {
            return Err(dim_err!("conv weight expects {wc} input channels, input has {c}"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(dim_err!("kernel {kh}x{kw} larger than padded input {h}x{w}"));
        }
        let oh = h + 2 * padding - kh + 1;
        let ow = w + 2 * padding - kw + 1;
        Ok((
            ConvGeom {
                n,
                c,
                h,
                w,
                o,
                kh,
                kw,
                pad: padding,
                oh,
                ow,
            },
            batched,
        ))
    }

    /// Stride-1 2D cross-correlation. Accepts `[C,H,W]` or `[N,C,H,W]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (g, batched) = self.conv_geom(input, weight, padding)?;
        if let Some(b) = bias {
            if self.dims(b) != [g.o] {
                return Err(dim_err!("conv bias must be [{}], got {:?}", g.o, self.dims(b)));
            }
        }
        let hw_out = g.oh * g.ow;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let mut out = vec![T::zero(); g.n * g.o * hw_out];
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); g.k() * hw_out]
        };
        for n in 0..g.n {
            let xn = &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, &g, &mut col);
                &col
            };
            let on = &mut out[n * g.o * hw_out..(n + 1) * g.o * hw_out];
            T::gemm(g.o, g.k(), hw_out, wt, false, cols, false, T::zero(), on);
            if let Some(b) = bias {
                for (o, &bv) in self.value(b).data().iter().enumerate() {
                    for v in &mut on[o * hw_out..(o + 1) * hw_out] {
                        *v += bv;
                    }
                }
            }
        }
        let dims = if batched {
            vec![g.n, g.o, g.oh, g.ow]
        } else {
            vec![g.o, g.oh, g.ow]
        };
        let value = Tensor::new(dims, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
            &inputs,
            "conv2d",
        )
    }

    pub(crate) fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: usize,
        grad: &[T],
        out: &mut Grads<T>,
    ) {
        let (g, _) = self.conv_geom(input, weight, padding).expect("validated in forward");
        let hw_out = g.oh * g.ow;
        let chw = g.c * g.h * g.w;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let want_x = self.requires_grad(input);
        let want_w = self.requires_grad(weight);
        if let Some(b) = bias.filter(|&b| self.requires_grad(b)) {
            let mut db = vec![T::zero(); g.o];
            for n in 0..g.n {
                for (o, acc) in db.iter_mut().enumerate() {
                    let s = &grad[(n * g.o + o) * hw_out..(n * g.o + o + 1) * hw_out];
                    *acc += s.iter().copied().sum::<T>();
                }
            }
            out.push((b, db));
        }
        if !want_x && !want_w {
            return;
        }
        let mut dw = if want_w { vec![T::zero(); wt.len()] } else { Vec::new() };
        let mut dx = if want_x { vec![T::zero(); x.len()] } else { Vec::new() };
        let mut col = vec![T::zero(); g.k() * hw_out];
        for n in 0..g.n {
            let gn = &grad[n * g.o * hw_out..(n + 1) * g.o * hw_out];
            let xn = &x[n * chw..(n + 1) * chw];
            if want_w {
                let cols: &[T] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(xn, &g, &mut col);
                    &col
                };
                T::gemm(g.o, hw_out, g.k(), gn, false, cols, true, T::one(), &mut dw);
            }
            if want_x {
                let dxn = &mut dx[n * chw..(n + 1) * chw];
                if g.is_pointwise() {
                    T::gemm(g.k(), g.o, hw_out, wt, true, gn, false, T::one(), dxn);
                } else {
                    T::gemm(g.k(), g.o, hw_out, wt, true, gn, false, T::zero(), &mut col);
                    col2im(&col, &g, dxn);
                }
            }
        }
        if want_w {
            out.push((weight, dw));
        }
        if want_x {
            out.push((input, dx));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-deep loop; shares nothing with the im2col path.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Tensor<f64> {
        let (c, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let (o, kh, kw) = (w.dims()[0], w.dims()[2], w.dims()[3]);
        let (oh, ow) = (h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1);
        let mut out = Tensor::zeros(vec![o, oh, ow]);
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - pad as isize;
                                let ix = xx as isize + kx as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at(&[oc, ic, ky, kx]) * x.at(&[ic, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[oc, y, xx], acc);
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed * 40503) % 1000) as f64 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn identity_pointwise_conv_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = Tensor::new(vec![3, 2, 4], pseudo(24, 1)).unwrap();
        let w = Tensor::from_fn(vec![3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w).unwrap();
        let bv = g.constant(Tensor::zeros(vec![3])).unwrap();
        let y = g.conv2d(xv, wv, Some(bv), 0).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn constant_field_interior_is_nine_w_c() {
        let (c, wv_, cv) = (1, 0.25, 3.0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(vec![c, 5, 6], cv)).unwrap();
        let w = g.constant(Tensor::full(vec![1, c, 3, 3], wv_)).unwrap();
        let y = g.conv2d(x, w, None, 1).unwrap();
        let out = g.value(y);
        assert_eq!(out.dims(), &[1, 5, 6]);
        for yy in 1..4 {
            for xx in 1..5 {
                assert!((out.at(&[0, yy, xx]) - 9.0 * wv_ * cv).abs() < 1e-12);
            }
        }
        // corner sees a 2x2 window
        assert!((out.at(&[0, 0, 0]) - 4.0 * wv_ * cv).abs() < 1e-12);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let x = Tensor::new(vec![2, 4, 4], pseudo(32, 2)).unwrap();
        let w = Tensor::new(vec![3, 2, 3, 3], pseudo(54, 3)).unwrap();
        let b = pseudo(3, 4);
        let want = naive_conv(&x, &w, &b, 1);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x).unwrap();
        let wv = g.constant(w).unwrap();
        let bv = g.constant(Tensor::new(vec![3], b).unwrap()).unwrap();
        let y = g.conv2d(xv, wv, Some(bv), 1).unwrap();
        let got = g.value(y);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn f32_matches_oracle_within_relative_tolerance() {
        let x = Tensor::new(vec![2, 4, 4], pseudo(32, 5)).unwrap();
        let w = Tensor::new(vec![3, 2, 3, 3], pseudo(54, 6)).unwrap();
        let want = naive_conv(&x, &w, &[0.0; 3], 1);
        let mut g = Graph::<f32>::new();
        let xv = g.constant(x.cast()).unwrap();
        let wv = g.constant(w.cast()).unwrap();
        let y = g.conv2d(xv, wv, None, 1).unwrap();
        for (a, b) in g.value(y).data().iter().zip(want.data()) {
            assert!((*a as f64 - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batched_equals_per_image() {
        let x = Tensor::new(vec![2, 2, 3, 5], pseudo(60, 7)).unwrap();
        let w = Tensor::new(vec![4, 2, 3, 3], pseudo(72, 8)).unwrap();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w).unwrap();
        let y = g.conv2d(xv, wv, None, 1).unwrap();
        for n in 0..2 {
            let xi = g.constant(x.index_outer(n)).unwrap();
            let yi = g.conv2d(xi, wv, None, 1).unwrap();
            assert_eq!(g.value(y).index_outer(n), *g.value(yi));
        }
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![2, 4, 4])).unwrap();
        let w = g.constant(Tensor::zeros(vec![3, 3, 3, 3])).unwrap();
        assert!(g.conv2d(x, w, None, 1).is_err());
        let w2 = g.constant(Tensor::zeros(vec![3, 2, 3, 3])).unwrap();
        let b = g.constant(Tensor::zeros(vec![2])).unwrap();
        assert!(g.conv2d(x, w2, Some(b), 1).is_err());
    }
}
