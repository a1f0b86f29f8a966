use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{HeadInit, Pairing, RunConfig};
use super::metrics::{Event, MetricsWriter};
use super::model::{prepare_batch, Model};
use crate::autodiff::{AdamState, Tensor};
use crate::dads::DadsConfig;
use crate::error::{Error, Result};
use crate::params::{apply_bn_updates, Mode, Session};
use crate::world::{mix_seed, Dataset, SceneSample, Split, WorldConfig};

const PAIR_STREAM: u64 = 0xda31;
const NOISE_STREAM: u64 = 0x0153;

/// Batches of distinct scenes, drawn without replacement within an epoch.
pub struct Sampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    batch: usize,
    seed: u64,
}

impl Sampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: len,
            epoch: 0,
            batch,
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, self.epoch));
        self.order.shuffle(&mut rng);
        self.epoch += 1;
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

/// Train and eval splits for one pairing.
#[derive(Debug)]
pub struct Benchmark {
    pub world: WorldConfig,
    pub pairing: Pairing,
    pub train: Dataset,
    pub eval: Dataset,
}

impl Benchmark {
    pub fn new(world: &WorldConfig, pairing: &Pairing) -> Result<Self> {
        Ok(Self {
            world: world.clone(),
            pairing: pairing.clone(),
            train: Dataset::build(world, Split::Train, &pairing.ego, &pairing.neighbor)?,
            eval: Dataset::build(world, Split::Eval, &pairing.ego, &pairing.neighbor)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub steps: usize,
    /// Total loss per step of the main phase.
    pub losses: Vec<f64>,
}

/// Plain training loop over `data`. Events go to `sink` when given.
pub fn train_on(
    model: &mut Model,
    cfg: &RunConfig,
    data: &Dataset,
    steps: usize,
    phase: &str,
    mut sink: Option<&mut MetricsWriter>,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(cfg.optim.lr as f32);
    let mut sampler = Sampler::new(data.len(), cfg.optim.batch_scenes, mix_seed(cfg.seed, 0x5a3e));
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx = sampler.next_batch();
        let samples = idx.iter().map(|&i| data.sample(i)).collect::<Result<Vec<&SceneSample>>>()?;
        let result = train_step(model, &mut adam, cfg, &samples, step);
        let (total, events) = match result {
            Ok(v) => v,
            Err(Error::Numeric(detail)) => {
                if let Some(w) = sink.as_deref_mut() {
                    w.write(&Event::NumericFailure {
                        step,
                        detail: detail.clone(),
                    })?;
                    w.flush()?;
                }
                return Err(Error::Numeric(format!("step {step}: {detail}")));
            }
            Err(e) => return Err(e),
        };
        losses.push(total);
        if let Some(w) = sink.as_deref_mut() {
            for mut e in events {
                if let Event::Step { phase: p, .. } = &mut e {
                    *p = phase.to_string();
                }
                w.write(&e)?;
            }
        }
    }
    if let Some(w) = sink {
        w.flush()?;
    }
    Ok(losses)
}

fn train_step(
    model: &mut Model,
    adam: &mut AdamState<f32>,
    cfg: &RunConfig,
    samples: &[&SceneSample],
    step: usize,
) -> Result<(f64, Vec<Event>)> {
    let batch = prepare_batch(samples, &cfg.noise, mix_seed(NOISE_STREAM, step as u64))?;
    let mut s = Session::new(&model.store, Mode::Train, true);
    let fwd = model.forward(&mut s, &batch, true)?;
    let (det, parts) = model.det_loss(&mut s, &fwd, &batch, &cfg.loss)?;
    let mut pair_rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, PAIR_STREAM), step as u64));
    let dami = model.dami(&mut s, &fwd, &batch.n_nei, &mut pair_rng)?;
    let mut events = Vec::with_capacity(2);
    let total = match &dami {
        Some((d, _)) => {
            let scaled = s.graph.scale(*d, cfg.loss.beta_dami as f32)?;
            s.graph.add(det, scaled)?
        }
        None => det,
    };
    let total_value = s.graph.value(total).item() as f64;
    if !total_value.is_finite() {
        return Err(Error::Numeric(format!("loss is {total_value}")));
    }
    s.graph.backward(total)?;
    let mut grads: Vec<Option<Tensor<f32>>> = vec![None; model.store.len()];
    for (id, g) in s.grads() {
        grads[id.0] = Some(g);
    }
    let updates = s.take_bn_updates();
    drop(s);

    let ids = model.store.trainable_ids();
    let grads: Vec<Tensor<f32>> = ids
        .iter()
        .map(|&id| grads[id.0].take().unwrap_or_else(|| Tensor::zeros(model.store.get(id).dims().to_vec())))
        .collect();
    adam.step(&mut model.store.trainable_mut(), &grads)?;
    apply_bn_updates(&mut model.store, &updates);

    events.push(Event::Step {
        step,
        phase: String::new(),
        total: total_value,
        det: parts,
        dami: dami.as_ref().map(|(_, r)| r.l_contrast),
    });
    if let Some((_, r)) = dami {
        events.push(Event::Dami {
            step,
            l_contrast: r.l_contrast,
            k: r.k,
            i_hat: r.i_hat,
            s_pos_mean: r.s_pos_mean,
            s_neg_mean: r.s_neg_mean,
        });
    }
    Ok((total_value, events))
}

/// Full protocol for one config on a prepared benchmark: optional
/// homogeneous pretraining of fusion and head, then the main run.
pub fn train_model(cfg: &RunConfig, bench: &Benchmark, mut sink: Option<&mut MetricsWriter>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::new(cfg, &bench.world, &bench.pairing)?;
    if let Some(tp) = &cfg.two_phase {
        let homo = Pairing {
            ego: bench.pairing.ego.clone(),
            neighbor: bench.pairing.ego.clone(),
        };
        let mut pre_cfg = cfg.clone();
        pre_cfg.adapter = super::config::AdapterConfig {
            dads: None::<DadsConfig>,
            use_lscr: false,
            use_dami: false,
            score_aggregation: cfg.adapter.score_aggregation,
        };
        pre_cfg.pairing = Some(homo.clone());
        let data = Dataset::build(&bench.world, Split::Train, &homo.ego, &homo.neighbor)?;
        let mut pre = Model::new(&pre_cfg, &bench.world, &homo)?;
        train_on(&mut pre, &pre_cfg, &data, tp.pretrain_steps, "pretrain", sink.as_deref_mut())?;
        if tp.head == HeadInit::WarmStart {
            for id in model.store.ids().collect::<Vec<_>>() {
                let name = model.store.name(id).to_string();
                if let (true, Some(src)) = (name.starts_with("head."), pre.store.find(&name)) {
                    *model.store.get_mut(id) = pre.store.get(src).clone();
                }
            }
        }
    }
    let losses = train_on(&mut model, cfg, &bench.train, cfg.optim.steps, "main", sink)?;
    Ok(TrainOutcome {
        model,
        steps: cfg.optim.steps,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_batches_are_distinct_and_cover_epochs() {
        let mut s = Sampler::new(10, 4, 1);
        let mut seen = Vec::new();
        for _ in 0..2 {
            let b = s.next_batch();
            let mut u = b.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), 4);
            seen.extend(b);
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
        // third batch starts a new epoch
        assert_eq!(s.next_batch().len(), 4);
        assert_eq!(s.epoch, 2);
    }
}
