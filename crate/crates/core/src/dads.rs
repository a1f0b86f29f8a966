//! Domain separation: per-domain encoder-specific (ES) blocks followed by
//! encoder-agnostic (EA) blocks whose weights both branches share.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Var};
use crate::error::{dim_err, Error, Result};
use crate::params::{kaiming_uniform, BnParams, BnStats, ConvParams, ParamStore, Session};

pub const SEP_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    ES,
    EA,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DadsConfig {
    pub stack: Vec<Stage>,
    #[serde(default = "yes")]
    pub share_ea: bool,
    /// Keep separate running statistics per branch in shared EA blocks.
    #[serde(default = "yes")]
    pub per_branch_ea_stats: bool,
}

fn yes() -> bool {
    true
}

impl DadsConfig {
    pub fn new(stack: &[Stage]) -> Self {
        Self {
            stack: stack.to_vec(),
            share_ea: true,
            per_branch_ea_stats: true,
        }
    }

    pub fn canonical() -> Self {
        Self::new(&[Stage::ES, Stage::EA])
    }

    /// The stacking ablation grid, labelled.
    pub fn grid() -> Vec<(&'static str, DadsConfig)> {
        use Stage::*;
        vec![
            ("EA", Self::new(&[EA])),
            ("ES", Self::new(&[ES])),
            ("ES+ES", Self::new(&[ES, ES])),
            ("ES+EA", Self::new(&[ES, EA])),
            ("2ES+EA", Self::new(&[ES, ES, EA])),
            ("ES+2EA", Self::new(&[ES, EA, EA])),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if Self::grid().iter().any(|(_, g)| g.stack == self.stack) {
            Ok(())
        } else {
            Err(Error::Config(format!("DADS stack {self} is not in the ablation grid")))
        }
    }

    pub fn count(&self, stage: Stage) -> usize {
        self.stack.iter().filter(|&&s| s == stage).count()
    }
}

impl fmt::Display for DadsConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .stack
            .iter()
            .map(|s| match s {
                Stage::ES => "ES",
                Stage::EA => "EA",
            })
            .collect();
        write!(f, "[{}]", names.join(","))
    }
}

/// conv3x3 -> BN -> LeakyReLU, twice; channel preserving.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SepBlockParams {
    pub conv1: ConvParams,
    pub bn1: BnParams,
    pub conv2: ConvParams,
    pub bn2: BnParams,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SepBlockStats {
    pub bn1: BnStats,
    pub bn2: BnStats,
}

impl SepBlockStats {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            bn1: BnStats::new(store, &format!("{name}.bn1"), channels),
            bn2: BnStats::new(store, &format!("{name}.bn2"), channels),
        }
    }
}

impl SepBlockParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let conv1 = ConvParams::new(store, &format!("{name}.conv1"), kaiming_uniform(rng, [channels, channels, 3, 3]), 1);
        let bn1 = BnParams::new(store, &format!("{name}.bn1"), channels);
        let conv2 = ConvParams::new(store, &format!("{name}.conv2"), kaiming_uniform(rng, [channels, channels, 3, 3]), 1);
        let bn2 = BnParams::new(store, &format!("{name}.bn2"), channels);
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            slope: SEP_SLOPE,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, stats: &SepBlockStats, x: Var) -> Result<Var> {
        let slope = T::lit(self.slope);
        let y = s.conv(x, &self.conv1)?;
        let y = s.batchnorm(y, &self.bn1, &stats.bn1)?;
        let y = s.graph.leaky_relu(y, slope)?;
        let y = s.conv(y, &self.conv2)?;
        let y = s.batchnorm(y, &self.bn2, &stats.bn2)?;
        s.graph.leaky_relu(y, slope)
    }
}

/// One branch's view of the stack: blocks paired with the running stats
/// that branch uses.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub blocks: Vec<(SepBlockParams, SepBlockStats)>,
}

impl Branch {
    pub fn forward<T: Real>(&self, s: &mut Session<T>, mut x: Var) -> Result<Var> {
        for (block, stats) in &self.blocks {
            x = block.forward(s, stats, x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DadsParams {
    pub cfg: DadsConfig,
    pub channels: usize,
    pub ego_es: Vec<SepBlockParams>,
    pub nei_es: Vec<SepBlockParams>,
    pub shared_ea: Vec<SepBlockParams>,
    /// Only populated when EA sharing is switched off.
    pub nei_ea: Vec<SepBlockParams>,
    pub ego: Branch,
    pub nei: Branch,
}

impl DadsParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &DadsConfig,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let n_es = cfg.count(Stage::ES);
        let n_ea = cfg.count(Stage::EA);
        let blocks = |prefix: &str, n: usize, store: &mut ParamStore<T>, rng: &mut _| -> Vec<SepBlockParams> {
            (0..n)
                .map(|i| SepBlockParams::new(store, &format!("{name}.{prefix}{i}"), channels, rng))
                .collect()
        };
        let ego_es = blocks("ego_es", n_es, store, rng);
        let nei_es = blocks("nei_es", n_es, store, rng);
        let shared_ea = blocks("ea", n_ea, store, rng);
        let nei_ea = if cfg.share_ea { Vec::new() } else { blocks("nei_ea", n_ea, store, rng) };

        let branch = |tag: &str, es: &[SepBlockParams], ea: &[SepBlockParams], store: &mut ParamStore<T>| {
            let (mut i_es, mut i_ea) = (0, 0);
            let mut out = Vec::with_capacity(cfg.stack.len());
            for stage in &cfg.stack {
                let (block, stats_name) = match stage {
                    Stage::ES => {
                        i_es += 1;
                        (es[i_es - 1], format!("{name}.{tag}_es{}", i_es - 1))
                    }
                    Stage::EA => {
                        i_ea += 1;
                        let stats_name = if cfg.share_ea && !cfg.per_branch_ea_stats {
                            format!("{name}.ea{}", i_ea - 1)
                        } else {
                            format!("{name}.{tag}_ea{}", i_ea - 1)
                        };
                        (ea[i_ea - 1], stats_name)
                    }
                };
                let stats = match store.find(&format!("{stats_name}.bn1.running_mean")) {
                    Some(_) => SepBlockStats {
                        bn1: BnStats {
                            mean: store.find(&format!("{stats_name}.bn1.running_mean")).expect("present"),
                            var: store.find(&format!("{stats_name}.bn1.running_var")).expect("present"),
                        },
                        bn2: BnStats {
                            mean: store.find(&format!("{stats_name}.bn2.running_mean")).expect("present"),
                            var: store.find(&format!("{stats_name}.bn2.running_var")).expect("present"),
                        },
                    },
                    None => SepBlockStats::new(store, &stats_name, channels),
                };
                out.push((block, stats));
            }
            Branch { blocks: out }
        };
        let ego = branch("ego", &ego_es, &shared_ea, store);
        let nei_ea_ref = if cfg.share_ea { &shared_ea } else { &nei_ea };
        let nei = branch("nei", &nei_es, nei_ea_ref, store);
        Ok(Self {
            cfg: cfg.clone(),
            channels,
            ego_es,
            nei_es,
            shared_ea,
            nei_ea,
            ego,
            nei,
        })
    }

    /// Ego maps through the ego branch, neighbor maps through the neighbor
    /// branch. Inputs are `[C,H,W]` or `[N,C,H,W]` at the ego geometry.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, ego: Var, nei: Option<Var>) -> Result<(Var, Option<Var>)> {
        let check = |s: &Session<T>, v: Var| -> Result<()> {
            let d = s.graph.dims(v);
            let c = d.len().checked_sub(3).map(|i| d[i]);
            if c != Some(self.channels) {
                return Err(dim_err!("DADS expects {} channels, got {d:?}", self.channels));
            }
            Ok(())
        };
        check(s, ego)?;
        if let Some(n) = nei {
            check(s, n)?;
            let (de, dn) = (s.graph.dims(ego), s.graph.dims(n));
            if de[de.len() - 2..] != dn[dn.len() - 2..] {
                return Err(dim_err!("ego {de:?} and neighbor {dn:?} maps differ spatially"));
            }
        }
        let e = self.ego.forward(s, ego)?;
        let n = nei.map(|n| self.nei.forward(s, n)).transpose()?;
        Ok((e, n))
    }
}

/// Standalone parameter set for `cfg`, deterministic in `seed`.
pub fn build_dads(cfg: &DadsConfig, channels: usize, seed: u64) -> Result<(ParamStore<f32>, DadsParams)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = DadsParams::new(&mut store, "dads", cfg, channels, &mut rng)?;
    Ok((store, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::autodiff::{ctns, Tensor};
    use crate::params::Mode;

    fn input(dims: &[usize], seed: u64) -> Tensor<f32> {
        Tensor::from_fn(dims.to_vec(), |i| (((i as u64 * 2654435761 + seed) % 1000) as f32 / 500.0) - 1.0)
    }

    #[test]
    fn canonical_layout() {
        let (_, p) = build_dads(&DadsConfig::canonical(), 8, 1).unwrap();
        assert_eq!((p.ego_es.len(), p.nei_es.len(), p.shared_ea.len()), (1, 1, 1));
        let (_, p) = build_dads(&DadsConfig::new(&[Stage::ES, Stage::EA, Stage::EA]), 8, 1).unwrap();
        assert_eq!(p.shared_ea.len(), 2);
        assert_eq!(p.ego.blocks[1].0, p.nei.blocks[1].0);
        assert_ne!(p.ego.blocks[1].1, p.nei.blocks[1].1);
    }

    #[test]
    fn outside_grid_is_config_error() {
        let bad = DadsConfig::new(&[Stage::EA, Stage::ES]);
        assert!(matches!(build_dads(&bad, 8, 1), Err(Error::Config(_))));
        assert!(matches!(build_dads(&DadsConfig::new(&[]), 8, 1), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, _) = build_dads(&DadsConfig::canonical(), 8, 3).unwrap();
        let (b, _) = build_dads(&DadsConfig::canonical(), 8, 3).unwrap();
        let bytes = |s: &ParamStore<f32>| s.ids().flat_map(|i| ctns::encode(s.get(i))).collect::<Vec<u8>>();
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn shape_preserved_across_grid() {
        for (_, cfg) in DadsConfig::grid() {
            let (store, p) = build_dads(&cfg, 32, 0).unwrap();
            let mut s = Session::new(&store, Mode::Train, false);
            let e = s.input(input(&[2, 32, 12, 44], 1)).unwrap();
            let n = s.input(input(&[3, 32, 12, 44], 2)).unwrap();
            let (eo, no) = p.forward(&mut s, e, Some(n)).unwrap();
            assert_eq!(s.graph.dims(eo), &[2, 32, 12, 44]);
            assert_eq!(s.graph.dims(no.unwrap()), &[3, 32, 12, 44]);
        }
    }

    #[test]
    fn zero_input_eval_mode_gives_zero() {
        let (store, p) = build_dads(&DadsConfig::canonical(), 4, 0).unwrap();
        let mut s = Session::new(&store, Mode::Eval, false);
        let x = s.input(Tensor::zeros([4, 5, 6])).unwrap();
        let (e, _) = p.forward(&mut s, x, None).unwrap();
        assert!(s.graph.value(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn geometry_mismatch_is_dimension_error() {
        let (store, p) = build_dads(&DadsConfig::canonical(), 4, 0).unwrap();
        let mut s = Session::new(&store, Mode::Eval, false);
        let e = s.input(Tensor::zeros([4, 5, 6])).unwrap();
        let n = s.input(Tensor::zeros([4, 5, 7])).unwrap();
        assert!(matches!(p.forward(&mut s, e, Some(n)), Err(Error::Dimension(_))));
        let n = s.input(Tensor::zeros([3, 5, 6])).unwrap();
        assert!(matches!(p.forward(&mut s, n, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn sep_block_conv1_gradient() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = SepBlockParams::new(&mut store, "b", 3, &mut rng);
        let stats = SepBlockStats::new(&mut store, "b", 3);
        let w = store.get(block.conv1.weight).clone();
        let x = Tensor::from_fn([2, 3, 4, 4], |i| ((i * 37 % 17) as f64 - 8.0) * 0.15);
        let check = check_gradients(
            &[w, x],
            |g, v| {
                let mut s = Session::from_graph(&store, std::mem::take(g), Mode::Train, false);
                s.bind(block.conv1.weight, v[0]);
                let y = block.forward(&mut s, &stats, v[1])?;
                *g = s.into_graph();
                Ok(y)
            },
            1e-4,
            4,
        )
        .unwrap();
        assert!(check.max_rel_error() < 1e-3, "{:?}", check.rel_errors);
    }
}
