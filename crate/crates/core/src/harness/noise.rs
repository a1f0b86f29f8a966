use super::eval::evaluate;
use super::metrics::MetricsRecord;
use super::model::Model;
use crate::error::Result;
use crate::world::{Dataset, PoseNoiseConfig};

/// Evaluate over the product of position and yaw noise levels. The ego
/// pose is never perturbed, so the ego-only columns stay fixed.
pub fn noise_sweep(
    model: &Model,
    data: &Dataset,
    seed: u64,
    sigma_p: &[f64],
    sigma_r: &[f64],
    scenes: Option<usize>,
) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::with_capacity(sigma_p.len() * sigma_r.len());
    for &sp in sigma_p {
        for &sr in sigma_r {
            let noise = PoseNoiseConfig {
                sigma_p: sp,
                sigma_r: sr,
                seed,
            };
            noise.validate()?;
            out.push(evaluate(model, data, &noise, scenes)?);
        }
    }
    Ok(out)
}
