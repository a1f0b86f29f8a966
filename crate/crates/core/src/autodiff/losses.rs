//! Fused scalar loss nodes used by the detection objective.

use super::graph::{softplus, Op};
use super::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Result};

/// Sigmoid focal loss of one logit against a {0,1} target.
pub(crate) fn focal_value<T: Real>(x: T, t: T, alpha: T, gamma: T) -> T {
    let p = super::graph::sigmoid(x);
    let log_p = -softplus(-x);
    let log_q = -softplus(x);
    let one = T::one();
    t * (-alpha * (one - p).powf(gamma) * log_p)
        + (one - t) * (-(one - alpha) * p.powf(gamma) * log_q)
}

pub(crate) fn focal_grad<T: Real>(x: T, t: T, alpha: T, gamma: T) -> T {
    let p = super::graph::sigmoid(x);
    let q = T::one() - p;
    let log_p = -softplus(-x);
    let log_q = -softplus(x);
    let pos = alpha * q.powf(gamma) * (gamma * p * log_p - q);
    let neg = (T::one() - alpha) * p.powf(gamma) * (p - gamma * q * log_q);
    t * pos + (T::one() - t) * neg
}

pub(crate) fn smooth_l1_value<T: Real>(d: T, beta: T) -> T {
    let a = d.abs();
    if a < beta {
        T::lit(0.5) * a * a / beta
    } else {
        a - T::lit(0.5) * beta
    }
}

pub(crate) fn smooth_l1_grad<T: Real>(d: T, beta: T) -> T {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Splits `[N,K,H,W]` / `[K,H,W]` into `(n, k, hw)`.
fn class_layout(dims: &[usize]) -> Result<(usize, usize, usize)> {
    let (n, k, h, w, _) = super::conv::nchw(dims)?;
    Ok((n, k, h * w))
}

pub(crate) fn softmax_ce_grad<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    weights: &[T],
    norm: T,
    upstream: T,
) -> Vec<T> {
    let (n, k, hw) = class_layout(logits.dims()).expect("checked");
    let x = logits.data();
    let mut d = vec![T::zero(); x.len()];
    let mut probs = vec![T::zero(); k];
    for ni in 0..n {
        for p in 0..hw {
            let cell = ni * hw + p;
            if weights[cell] == T::zero() {
                continue;
            }
            let at = |c: usize| (ni * k + c) * hw + p;
            let mx = (0..k).map(|c| x[at(c)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (x[at(c)] - mx).exp();
                z += *pr;
            }
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == labels[cell] { T::one() } else { T::zero() };
                d[at(c)] = upstream * weights[cell] * (*pr / z - onehot) / norm;
            }
        }
    }
    d
}

impl<T: Real> Graph<T> {
    /// `sum(focal(logit, target)) / norm` over every element.
    pub fn focal_loss(&mut self, logits: Var, targets: Vec<T>, alpha: T, gamma: T, norm: T) -> Result<Var> {
        if targets.len() != self.value(logits).numel() {
            return Err(dim_err!("focal targets: {} for {:?}", targets.len(), self.dims(logits)));
        }
        let x = self.value(logits).data();
        let total: T = x
            .iter()
            .zip(&targets)
            .map(|(&x, &t)| focal_value(x, t, alpha, gamma))
            .sum();
        self.push(
            Tensor::scalar(total / norm),
            Op::Focal {
                logits,
                targets,
                alpha,
                gamma,
                norm,
            },
            &[logits],
            "focal_loss",
        )
    }

    /// `sum(w * smoothL1(pred - target)) / norm`.
    pub fn smooth_l1_loss(&mut self, pred: Var, targets: Vec<T>, weights: Vec<T>, beta: T, norm: T) -> Result<Var> {
        let n = self.value(pred).numel();
        if targets.len() != n || weights.len() != n {
            return Err(dim_err!("smooth-L1 targets/weights must have {n} entries"));
        }
        let x = self.value(pred).data();
        let total: T = x
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&x, &t), &w)| w * smooth_l1_value(x - t, beta))
            .sum();
        self.push(
            Tensor::scalar(total / norm),
            Op::SmoothL1 {
                pred,
                targets,
                weights,
                beta,
                norm,
            },
            &[pred],
            "smooth_l1_loss",
        )
    }

    /// Softmax cross-entropy over axis 1 of `[N,K,H,W]`, one label and one
    /// weight per `(n, h, w)` cell, summed and divided by `norm`.
    pub fn softmax_ce_loss(&mut self, logits: Var, labels: Vec<usize>, weights: Vec<T>, norm: T) -> Result<Var> {
        let (n, k, hw) = class_layout(self.dims(logits))?;
        if labels.len() != n * hw || weights.len() != n * hw {
            return Err(dim_err!("cross-entropy labels/weights must have {} entries", n * hw));
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(dim_err!("label out of range for {k} classes"));
        }
        let x = self.value(logits).data();
        let mut total = T::zero();
        for ni in 0..n {
            for p in 0..hw {
                let cell = ni * hw + p;
                if weights[cell] == T::zero() {
                    continue;
                }
                let at = |c: usize| x[(ni * k + c) * hw + p];
                let mx = (0..k).map(at).fold(T::neg_infinity(), T::max);
                let lse = mx + (0..k).map(|c| (at(c) - mx).exp()).sum::<T>().ln();
                total += weights[cell] * (lse - at(labels[cell]));
            }
        }
        self.push(
            Tensor::scalar(total / norm),
            Op::SoftmaxCe {
                logits,
                labels,
                weights,
                norm,
            },
            &[logits],
            "softmax_ce_loss",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_matches_textbook_form() {
        for &x in &[-3.0f64, -0.4, 0.0, 0.9, 4.0] {
            let p = 1.0 / (1.0 + (-x).exp());
            let pos = -0.25 * (1.0 - p).powi(2) * p.ln();
            let neg = -0.75 * p.powi(2) * (1.0 - p).ln();
            assert!((focal_value(x, 1.0, 0.25, 2.0) - pos).abs() < 1e-12);
            assert!((focal_value(x, 0.0, 0.25, 2.0) - neg).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_grad_matches_difference_quotient() {
        for &x in &[-2.0f64, -0.3, 0.1, 1.7] {
            for t in [0.0, 1.0] {
                let h = 1e-6;
                let fd = (focal_value(x + h, t, 0.25, 2.0) - focal_value(x - h, t, 0.25, 2.0)) / (2.0 * h);
                assert!((fd - focal_grad(x, t, 0.25, 2.0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smooth_l1_is_continuous_at_beta() {
        let b = 1.0f64 / 9.0;
        let l = smooth_l1_value(b - 1e-12, b);
        let r = smooth_l1_value(b + 1e-12, b);
        assert!((l - r).abs() < 1e-9);
    }
}
