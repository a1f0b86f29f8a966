use super::graph::{Grads, Op};
use super::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Result};

impl<T: Real> Graph<T> {
    /// Per-cell scaled dot-product attention over agents. `inputs[0]` is
    /// the ego map and acts as the query; every map is a key and a value.
    /// All inputs are `[C,H,W]` with identical geometry.
    pub fn attention_fuse(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| dim_err!("fusion needs at least one map"))?;
        let dims = self.dims(first).to_vec();
        if dims.len() != 3 {
            return Err(dim_err!("fusion expects [C,H,W] maps, got {dims:?}"));
        }
        for &v in inputs {
            if self.dims(v) != dims.as_slice() {
                return Err(dim_err!("fusion geometry {dims:?} vs {:?}", self.dims(v)));
            }
        }
        let (c, hw) = (dims[0], dims[1] * dims[2]);
        let a = inputs.len();
        let scale = T::one() / T::lit(c as f64).sqrt();
        let maps: Vec<&[T]> = inputs.iter().map(|&v| self.value(v).data()).collect();
        // channel-major loops keep the inner pass contiguous over pixels
        let mut weights = vec![T::zero(); a * hw];
        for (k, m) in maps.iter().enumerate() {
            let s = &mut weights[k * hw..(k + 1) * hw];
            for ch in 0..c {
                let (q, v) = (&maps[0][ch * hw..(ch + 1) * hw], &m[ch * hw..(ch + 1) * hw]);
                for p in 0..hw {
                    s[p] += q[p] * v[p];
                }
            }
        }
        for p in 0..hw {
            let mx = (0..a).map(|k| weights[k * hw + p] * scale).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..a {
                let e = (weights[k * hw + p] * scale - mx).exp();
                weights[k * hw + p] = e;
                z += e;
            }
            for k in 0..a {
                weights[k * hw + p] = weights[k * hw + p] / z;
            }
        }
        let mut out = vec![T::zero(); c * hw];
        for (k, m) in maps.iter().enumerate() {
            let w = &weights[k * hw..(k + 1) * hw];
            for ch in 0..c {
                let (o, v) = (&mut out[ch * hw..(ch + 1) * hw], &m[ch * hw..(ch + 1) * hw]);
                for p in 0..hw {
                    o[p] += w[p] * v[p];
                }
            }
        }
        let value = Tensor::new(dims, out)?;
        self.push(
            value,
            Op::AttentionFuse {
                inputs: inputs.to_vec(),
                weights,
            },
            inputs,
            "attention_fuse",
        )
    }

    pub(crate) fn attention_backward(&self, inputs: &[Var], weights: &[T], grad: &[T], g: &mut Grads<T>) {
        let dims = self.dims(inputs[0]);
        let (c, hw) = (dims[0], dims[1] * dims[2]);
        let a = inputs.len();
        let scale = T::one() / T::lit(c as f64).sqrt();
        let maps: Vec<&[T]> = inputs.iter().map(|&v| self.value(v).data()).collect();
        let mut dw = vec![T::zero(); a * hw];
        for (k, m) in maps.iter().enumerate() {
            let d = &mut dw[k * hw..(k + 1) * hw];
            for ch in 0..c {
                let (gr, v) = (&grad[ch * hw..(ch + 1) * hw], &m[ch * hw..(ch + 1) * hw]);
                for p in 0..hw {
                    d[p] += gr[p] * v[p];
                }
            }
        }
        for p in 0..hw {
            let mean: T = (0..a).map(|k| weights[k * hw + p] * dw[k * hw + p]).sum();
            for k in 0..a {
                let wk = weights[k * hw + p];
                dw[k * hw + p] = wk * (dw[k * hw + p] - mean) * scale;
            }
        }
        let mut grads: Vec<Vec<T>> = vec![vec![T::zero(); c * hw]; a];
        for k in 0..a {
            let (w, ds) = (&weights[k * hw..(k + 1) * hw], &dw[k * hw..(k + 1) * hw]);
            for ch in 0..c {
                let r = ch * hw..(ch + 1) * hw;
                let (gr, q, v) = (&grad[r.clone()], &maps[0][r.clone()], &maps[k][r.clone()]);
                if k == 0 {
                    let g0 = &mut grads[0][r];
                    for p in 0..hw {
                        g0[p] += w[p] * gr[p] + ds[p] * q[p];
                        g0[p] += ds[p] * v[p];
                    }
                } else {
                    let (head, tail) = grads.split_at_mut(k);
                    let (g0, gk) = (&mut head[0][r.clone()], &mut tail[0][r]);
                    for p in 0..hw {
                        gk[p] += w[p] * gr[p] + ds[p] * q[p];
                        g0[p] += ds[p] * v[p];
                    }
                }
            }
        }
        // a map passed twice receives both contributions via accumulation
        for (v, d) in inputs.iter().zip(grads) {
            if self.requires_grad(*v) {
                g.push((*v, d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(seed: u64) -> Tensor<f64> {
        Tensor::from_fn(vec![3, 2, 4], |i| (((i as u64 + 3) * 7919 * (seed + 1)) % 97) as f64 / 48.0 - 1.0)
    }

    #[test]
    fn single_input_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(map(1)).unwrap();
        let y = g.attention_fuse(&[x]).unwrap();
        assert!(g.value(y).max_abs_diff(&map(1)) < 1e-12);
    }

    #[test]
    fn duplicated_input_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(map(2)).unwrap();
        let x2 = g.constant(map(2)).unwrap();
        let y = g.attention_fuse(&[x, x2]).unwrap();
        assert!(g.value(y).max_abs_diff(&map(2)) < 1e-12);
    }

    #[test]
    fn matches_per_cell_softmax_loop() {
        let maps = [map(3), map(4), map(5)];
        let mut g = Graph::new();
        let vars: Vec<Var> = maps.iter().map(|m| g.constant(m.clone()).unwrap()).collect();
        let y = g.attention_fuse(&vars).unwrap();
        for yy in 0..2 {
            for xx in 0..4 {
                let vec_of = |m: &Tensor<f64>| (0..3).map(|c| m.at(&[c, yy, xx])).collect::<Vec<_>>();
                let q = vec_of(&maps[0]);
                let logits: Vec<f64> = maps
                    .iter()
                    .map(|m| vec_of(m).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / 3f64.sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                for c in 0..3 {
                    let want: f64 = maps
                        .iter()
                        .zip(&logits)
                        .map(|(m, l)| l.exp() / z * m.at(&[c, yy, xx]))
                        .sum();
                    assert!((g.value(y).at(&[c, yy, xx]) - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_geometry() {
        let mut g = Graph::new();
        let a = g.constant(map(1)).unwrap();
        let b = g.constant(Tensor::zeros(vec![3, 2, 5])).unwrap();
        assert!(g.attention_fuse(&[a, b]).is_err());
    }
}
