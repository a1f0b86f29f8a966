use super::conv::nchw;
use super::graph::{Grads, Op};
use super::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Error, Result};

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Real> Graph<T> {
    fn bn_check(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w, _) = nchw(self.dims(input))?;
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(dim_err!(
                "batchnorm affine params must be [{c}], got {:?} and {:?}",
                self.dims(gamma),
                self.dims(beta)
            ));
        }
        Ok((n, c, h * w))
    }

    fn bn_apply(&self, input: Var, gamma: Var, beta: Var, mean: &[T], inv_std: &[T]) -> Tensor<T> {
        let dims = self.dims(input).to_vec();
        let (n, c, h, w, _) = nchw(&dims).expect("checked");
        let hw = h * w;
        let x = self.value(input).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * hw;
                let scale = gm[ci] * inv_std[ci];
                let shift = bt[ci] - mean[ci] * scale;
                for (o, &v) in out[off..off + hw].iter_mut().zip(&x[off..off + hw]) {
                    *o = v * scale + shift;
                }
            }
        }
        Tensor::new(dims, out).expect("same dims")
    }

    /// Training-mode batch norm over `[N,C,H,W]` (or `[C,H,W]` as N = 1).
    /// Returns the normalized node plus the batch statistics so the caller
    /// can update its running estimates.
    pub fn batchnorm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, hw) = self.bn_check(input, gamma, beta)?;
        let count = n * hw;
        if count <= 1 {
            return Err(Error::Degenerate(format!(
                "batch norm over N*H*W = {count} value per channel"
            )));
        }
        let x = self.value(input).data();
        let m = T::lit(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ci in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                s += x[(ni * c + ci) * hw..][..hw].iter().copied().sum::<T>();
            }
            let mu = s / m;
            let mut q = T::zero();
            for ni in 0..n {
                for &v in &x[(ni * c + ci) * hw..][..hw] {
                    q += (v - mu) * (v - mu);
                }
            }
            mean[ci] = mu;
            var[ci] = q / m;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let value = self.bn_apply(input, gamma, beta, &mean, &inv_std);
        let stats = BatchStats {
            mean: mean.clone(),
            var,
            count,
        };
        let v = self.push(
            value,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
            &[input, gamma, beta],
            "batchnorm",
        )?;
        Ok((v, stats))
    }

    /// Evaluation-mode batch norm with fixed statistics.
    pub fn batchnorm_fixed(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, _) = self.bn_check(input, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(dim_err!("running stats hold {} channels, input has {c}", mean.len()));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let value = self.bn_apply(input, gamma, beta, mean, &inv_std);
        self.push(
            value,
            Op::BatchNormFixed {
                input,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            &[input, gamma, beta],
            "batchnorm",
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn batchnorm_backward(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        training: bool,
        grad: &[T],
        out: &mut Grads<T>,
    ) {
        let (n, c, hw) = self.bn_check(input, gamma, beta).expect("checked");
        let x = self.value(input).data();
        let gm = self.value(gamma).data();
        let m = T::lit((n * hw) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ci in 0..c {
            for ni in 0..n {
                let off = (ni * c + ci) * hw;
                for (&gv, &xv) in grad[off..off + hw].iter().zip(&x[off..off + hw]) {
                    dbeta[ci] += gv;
                    dgamma[ci] += gv * (xv - mean[ci]) * inv_std[ci];
                }
            }
        }
        if self.requires_grad(input) {
            let mut dx = vec![T::zero(); x.len()];
            for ci in 0..c {
                let k = gm[ci] * inv_std[ci];
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    for i in off..off + hw {
                        dx[i] = if training {
                            let xhat = (x[i] - mean[ci]) * inv_std[ci];
                            k * (grad[i] - dbeta[ci] / m - xhat * dgamma[ci] / m)
                        } else {
                            k * grad[i]
                        };
                    }
                }
            }
            out.push((input, dx));
        }
        if self.requires_grad(gamma) {
            out.push((gamma, dgamma));
        }
        if self.requires_grad(beta) {
            out.push((beta, dbeta));
        }
    }
}
