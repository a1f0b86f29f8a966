use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per input: `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// the flattened gradient.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn projected(
    inputs: &[Tensor<f64>],
    f: &impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    proj: &mut Option<Vec<f64>>,
    seed: u64,
    trainable: bool,
) -> Result<(Graph<f64>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let dims = g.dims(out).to_vec();
    let r = proj.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dims.iter().product::<usize>())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    });
    let r = g.constant(Tensor::new(dims, r.clone())?)?;
    let prod = g.mul(out, r)?;
    let loss = g.sum(prod)?;
    Ok((g, vars, loss))
}

/// Check every input's gradient of `f` by central differences with step
/// `h`. Non-scalar outputs are reduced by a fixed random projection so all
/// output entries contribute.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut proj = None;
    let (mut g, vars, loss) = projected(inputs, &f, &mut proj, seed, true)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.dims().to_vec())))
        .collect();

    let eval = |perturbed: &[Tensor<f64>], proj: &mut Option<Vec<f64>>| -> Result<f64> {
        let (g, _, loss) = projected(perturbed, &f, proj, seed, false)?;
        Ok(g.value(loss).item())
    };

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work, &mut proj)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work, &mut proj)?;
            work[i].data_mut()[j] = orig;
            let num = (up - down) / (2.0 * h);
            let an = a.data()[j];
            diff += (an - num).powi(2);
            na += an * an;
            nn += num * num;
        }
        let scale = na.sqrt().max(nn.sqrt());
        rel_errors.push(if scale < 1e-12 { diff.sqrt() } else { diff.sqrt() / scale });
    }
    Ok(GradCheck { rel_errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        // sigmoid checks out
        let x = Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap();
        let ok = check_gradients(&[x.clone()], |g, v| g.sigmoid(v[0]), 1e-4, 1).unwrap();
        assert!(ok.max_rel_error() < 1e-6);
        // detached path: constant copy of the value has zero analytic gradient
        let bad = check_gradients(
            &[x],
            |g, v| {
                let t = g.value(v[0]).clone();
                g.constant(t)
            },
            1e-4,
            1,
        )
        .unwrap();
        assert!(bad.max_rel_error() > 0.5);
    }
}
