use serde::{Deserialize, Serialize};

use super::discriminator::DiscriminatorParams;
use crate::autodiff::{softplus, Real, Var};
use crate::error::{Error, Result};
use crate::params::Session;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregation {
    /// Average each score map to one logit per pair.
    #[default]
    SpatialMean,
    /// Apply the logistic terms per cell, then average.
    PerPixel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamiReport {
    pub l_contrast: f64,
    pub k: usize,
    pub i_hat: f64,
    pub s_pos_mean: f64,
    pub s_neg_mean: f64,
    /// Contrastive term of each pair, in pair order.
    #[serde(skip)]
    pub pair_terms: Vec<f64>,
}

impl DamiReport {
    fn new(l_contrast: f64, pair_terms: Vec<f64>, s_pos: &[f64], s_neg: &[f64]) -> Self {
        let k = pair_terms.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Self {
            l_contrast,
            k,
            i_hat: (k as f64).ln() - l_contrast,
            s_pos_mean: mean(s_pos),
            s_neg_mean: mean(s_neg),
            pair_terms,
        }
    }
}

/// Binary logistic contrastive loss from per-pair scores:
/// mean of `softplus(-s_pos) + softplus(s_neg)`.
pub fn contrast_loss_from_scores(s_pos: &[f64], s_neg: &[f64]) -> Result<(f64, DamiReport)> {
    if s_pos.is_empty() || s_pos.len() != s_neg.len() {
        return Err(Error::Pairing(format!(
            "need matching non-empty score lists, got {} and {}",
            s_pos.len(),
            s_neg.len()
        )));
    }
    let terms: Vec<f64> = s_pos.iter().zip(s_neg).map(|(&p, &n)| softplus(-p) + softplus(n)).collect();
    let loss = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok((loss, DamiReport::new(loss, terms, s_pos, s_neg)))
}

/// Differentiable contrastive loss over `[K,C,H,W]` anchors, positives and
/// negatives. Positive and negative pairs go through the discriminator as
/// one batch of `2K`.
pub fn contrast_loss<T: Real>(
    s: &mut Session<T>,
    disc: &DiscriminatorParams,
    anchors: Var,
    positives: Var,
    negatives: Var,
    agg: ScoreAggregation,
) -> Result<(Var, DamiReport)> {
    let k = s.graph.dims(anchors).first().copied().unwrap_or(0);
    if k == 0 || s.graph.dims(anchors).len() != 4 {
        return Err(Error::Pairing("contrast loss needs a non-empty [K,C,H,W] pair batch".into()));
    }
    let a2 = s.graph.concat(&[anchors, anchors], 0)?;
    let samples = s.graph.concat(&[positives, negatives], 0)?;
    let maps = disc.discriminate(s, a2, samples)?; // [2K,1,H,W]
    let dims = s.graph.dims(maps).to_vec();
    let cells = dims[2] * dims[3];

    let pooled = s.graph.mean_spatial(maps)?; // [2K,1]
    let pooled = s.graph.reshape(pooled, [2 * k])?;
    let pv = s.graph.value(pooled).data();
    let s_pos: Vec<f64> = pv[..k].iter().map(|v| v.as_f64()).collect();
    let s_neg: Vec<f64> = pv[k..].iter().map(|v| v.as_f64()).collect();

    let (scores, per) = match agg {
        ScoreAggregation::SpatialMean => (pooled, 1),
        ScoreAggregation::PerPixel => (s.graph.reshape(maps, [2 * k * cells])?, cells),
    };
    let pos = s.graph.slice(scores, 0, 0, k * per)?;
    let neg = s.graph.slice(scores, 0, k * per, k * per)?;
    let pos = s.graph.neg(pos)?;
    let lp = s.graph.softplus(pos)?;
    let ln = s.graph.softplus(neg)?;
    let terms = s.graph.add(lp, ln)?;
    let loss = s.graph.mean(terms)?;

    let tv = s.graph.value(terms).data();
    let pair_terms: Vec<f64> = (0..k)
        .map(|i| tv[i * per..(i + 1) * per].iter().map(|v| v.as_f64()).sum::<f64>() / per as f64)
        .collect();
    let l = s.graph.value(loss).item().as_f64();
    Ok((loss, DamiReport::new(l, pair_terms, &s_pos, &s_neg)))
}

/// Mean of one ego's per-neighbor contrastive terms.
pub fn dami_loss(pair_terms: &[f64]) -> Result<f64> {
    if pair_terms.is_empty() {
        return Err(Error::Pairing("ego has no neighbor pairs".into()));
    }
    Ok(pair_terms.iter().sum::<f64>() / pair_terms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn zero_scores_give_two_ln_two() {
        let (l, r) = contrast_loss_from_scores(&[0.0; 4], &[0.0; 4]).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-15);
        assert_eq!(r.i_hat, (4f64).ln() - l);
    }

    #[test]
    fn saturated_scores_approach_log_k() {
        let (l, r) = contrast_loss_from_scores(&[60.0; 3], &[-60.0; 3]).unwrap();
        assert!(l < 1e-20);
        assert!((r.i_hat - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_three_pairs() {
        let sp = |x: f64| (1.0 + x.exp()).ln();
        let want = ((sp(-1.0) + sp(-0.5)) + (sp(-0.2) + sp(0.2)) + (sp(1.0) + sp(2.0))) / 3.0;
        let (l, _) = contrast_loss_from_scores(&[1.0, 0.2, -1.0], &[-0.5, 0.2, 2.0]).unwrap();
        assert!((l - want).abs() < 1e-6);
    }

    #[test]
    fn empty_pairs_error() {
        assert!(matches!(contrast_loss_from_scores(&[], &[]), Err(Error::Pairing(_))));
        assert!(dami_loss(&[]).is_err());
    }

    #[test]
    fn dami_loss_is_mean() {
        assert_eq!(dami_loss(&[0.7]).unwrap(), 0.7);
        assert_eq!(dami_loss(&[0.3, 0.3]).unwrap(), 0.3);
        assert!((dami_loss(&[0.4, 0.8]).unwrap() - 0.6).abs() < 1e-15);
    }
}
