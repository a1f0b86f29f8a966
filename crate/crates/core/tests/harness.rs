use std::path::Path;
use std::sync::OnceLock;

use bevadapt::harness::{
    bench, evaluate, load_checkpoint, noise_sweep, read_events, run_eval, run_train, train_model, AdapterConfig, BenchOptions, Benchmark,
    Event, HeadInit, Model, RunConfig, TwoPhase, METRICS,
};
use bevadapt::autodiff::Tensor;
use bevadapt::params::{Mode, Session};
use bevadapt::world::{project_to_ego, FrozenEncoder, PoseNoiseConfig};
use bevadapt::WorldConfig;

fn small_world() -> WorldConfig {
    let mut w = WorldConfig::standard();
    w.train_scenes = 12;
    w.eval_scenes = 8;
    w
}

fn small_cfg(adapter: AdapterConfig, steps: usize) -> RunConfig {
    let mut cfg = RunConfig::new(adapter);
    cfg.world = Some(small_world());
    cfg.optim.steps = steps;
    cfg.optim.batch_scenes = 3;
    cfg.seed = 11;
    cfg
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(AdapterConfig::full(), 0);
    run_train(&cfg, tmp.path()).unwrap();
    let (_, loaded, manifest) = load_checkpoint(tmp.path()).unwrap();
    let world = small_world();
    let fresh = Model::new(&cfg, &world, &cfg.pairing(&world)).unwrap();
    assert_eq!(manifest.step, 0);
    assert_eq!(loaded.store, fresh.store);
}

#[test]
fn same_seed_gives_identical_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(AdapterConfig::full(), 4);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        run_train(&cfg, d).unwrap();
        run_eval(d).unwrap();
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert_eq!(read_dir_bytes(&a.join("params")), read_dir_bytes(&b.join("params")));

    let mut other = cfg.clone();
    other.seed = 12;
    let c = tmp.path().join("c");
    run_train(&other, &c).unwrap();
    assert_ne!(std::fs::read(a.join(METRICS)).unwrap(), std::fs::read(c.join(METRICS)).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(AdapterConfig::full(), 3);
    run_train(&cfg, tmp.path()).unwrap();
    let world = small_world();
    let set = Benchmark::new(&world, &cfg.pairing(&world)).unwrap();
    let in_memory = train_model(&cfg, &set, None).unwrap();
    let before = evaluate(&in_memory.model, &set.eval, &cfg.noise, None).unwrap();
    let after = run_eval(tmp.path()).unwrap();
    assert_eq!(before, after);
    // evaluating twice gives the same record
    assert_eq!(after, run_eval(tmp.path()).unwrap());
}

#[test]
fn encoders_stay_frozen_through_training() {
    let cfg = small_cfg(AdapterConfig::full(), 3);
    let world = small_world();
    let pairing = cfg.pairing(&world);
    let set = Benchmark::new(&world, &pairing).unwrap();
    let before: Vec<Vec<u8>> = [&pairing.ego, &pairing.neighbor]
        .iter()
        .map(|id| FrozenEncoder::new(world.encoder(id).unwrap(), 2).unwrap().fingerprint())
        .collect();
    let run = train_model(&cfg, &set, None).unwrap();
    let builder = set.train.builder();
    assert_eq!(builder.ego_encoder().fingerprint(), before[0]);
    assert_eq!(builder.nei_encoder().fingerprint(), before[1]);
    assert!(run.model.store.ids().all(|id| !run.model.store.name(id).starts_with("encoder")));
}

#[test]
fn dami_off_removes_the_term_and_its_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let mut adapter = AdapterConfig::full();
    adapter.use_dami = false;
    run_train(&small_cfg(adapter, 3), tmp.path()).unwrap();
    let events = read_events(&tmp.path().join(METRICS)).unwrap();
    assert_eq!(events.len(), 3);
    for e in &events {
        match e {
            Event::Step { dami, .. } => assert!(dami.is_none()),
            other => panic!("unexpected event {other:?}"),
        }
    }

    let on = tmp.path().join("on");
    run_train(&small_cfg(AdapterConfig::full(), 3), &on).unwrap();
    let events = read_events(&on.join(METRICS)).unwrap();
    assert_eq!(events.iter().filter(|e| matches!(e, Event::Dami { .. })).count(), 3);
}

#[test]
fn noise_sweep_zero_point_matches_evaluate_and_ego_is_flat() {
    let cfg = small_cfg(AdapterConfig::full(), 2);
    let world = small_world();
    let set = Benchmark::new(&world, &cfg.pairing(&world)).unwrap();
    let run = train_model(&cfg, &set, None).unwrap();
    let sweep = noise_sweep(&run.model, &set.eval, 3, &[0.0, 0.6], &[0.0, 0.4], None).unwrap();
    assert_eq!(sweep.len(), 4);
    let plain = evaluate(&run.model, &set.eval, &PoseNoiseConfig { seed: 3, ..Default::default() }, None).unwrap();
    assert_eq!(sweep[0], plain);
    assert!(sweep.iter().all(|m| m.ego_ap50 == plain.ego_ap50 && m.ego_ap70 == plain.ego_ap70));
}

#[test]
fn two_phase_modes_differ_only_in_the_head_start() {
    let world = small_world();
    let mut cfg = small_cfg(AdapterConfig::full(), 0);
    let set = Benchmark::new(&world, &cfg.pairing(&world)).unwrap();
    cfg.two_phase = Some(TwoPhase {
        pretrain_steps: 3,
        head: HeadInit::WarmStart,
    });
    let warm = train_model(&cfg, &set, None).unwrap().model;
    cfg.two_phase.as_mut().unwrap().head = HeadInit::Reinit;
    let cold = train_model(&cfg, &set, None).unwrap().model;
    let fresh = Model::new(&cfg, &world, &cfg.pairing(&world)).unwrap();
    for id in fresh.store.ids() {
        let name = fresh.store.name(id);
        if name.starts_with("head.") {
            assert_eq!(cold.store.get(id), fresh.store.get(id), "{name}");
        } else {
            assert_eq!(warm.store.get(id), fresh.store.get(id), "{name}");
        }
    }
    assert!(fresh.store.ids().any(|id| fresh.store.name(id).starts_with("head.") && warm.store.get(id) != fresh.store.get(id)));
}

#[test]
fn doubling_spatial_dims_lowers_throughput() {
    let cfg = RunConfig::new(AdapterConfig::full());
    let world = WorldConfig::standard();
    let mut big = world.clone();
    for e in &mut big.encoders {
        e.out_h *= 2;
        e.out_w *= 2;
    }
    let opts = BenchOptions {
        warmup: 3,
        iterations: 20,
    };
    let fps = |w: &WorldConfig| {
        let p = cfg.pairing(w);
        let m = Model::new(&cfg, w, &p).unwrap();
        bench(&m, w, &p, &[2], &opts).unwrap()[0].fps
    };
    let (small, large) = (fps(&world), fps(&big));
    assert!(large < small, "fps {small} -> {large}");
}

struct Trained {
    set: Benchmark,
    model: Model,
    losses: Vec<f64>,
}

/// Canonical config, 1000 steps on the standard world. Shared by the tests below.
fn trained_full() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = RunConfig::new(AdapterConfig::full());
        cfg.optim.steps = 1000;
        let world = WorldConfig::standard();
        let set = Benchmark::new(&world, &cfg.pairing(&world)).unwrap();
        let run = train_model(&cfg, &set, None).unwrap();
        Trained {
            set,
            model: run.model,
            losses: run.losses,
        }
    })
}

#[test]
fn loss_falls_over_standard_training() {
    let losses = &trained_full().losses;
    let smooth = |end: usize| losses[end - 25..end].iter().sum::<f64>() / 25.0;
    assert!(smooth(1000) < smooth(50), "{} vs {}", smooth(1000), smooth(50));
}

/// Per-channel running sums over all pixels of a population of maps.
#[derive(Clone)]
struct Moments {
    n: f64,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(c: usize) -> Self {
        Self {
            n: 0.0,
            sum: vec![0.0; c],
            sq: vec![0.0; c],
        }
    }

    fn add(&mut self, t: &Tensor<f32>) {
        let d = t.dims();
        let (b, c, hw) = (d[0], d[1], d[2] * d[3]);
        for i in 0..b {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for &v in &t.data()[off..off + hw] {
                    self.sum[ch] += v as f64;
                    self.sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        self.n += (b * hw) as f64;
    }

    fn mean_var(&self, ch: usize) -> (f64, f64) {
        let m = self.sum[ch] / self.n;
        (m, (self.sq[ch] / self.n - m * m).max(0.0) + 1e-6)
    }
}

/// Symmetrized KL between per-channel Gaussians, averaged over channels.
fn moment_distance(a: &Moments, b: &Moments) -> f64 {
    let c = a.sum.len();
    (0..c)
        .map(|ch| {
            let ((ma, va), (mb, vb)) = (a.mean_var(ch), b.mean_var(ch));
            0.5 * (va / vb + vb / va - 2.0 + (ma - mb).powi(2) * (1.0 / va + 1.0 / vb))
        })
        .sum::<f64>()
        / c as f64
}

#[test]
fn separation_pulls_branch_moments_together() {
    let t = trained_full();
    let dads = t.model.dads.as_ref().unwrap();
    let c = t.set.eval.sample(0).unwrap().ego_feature.data.dims()[0];
    // raw ego, resized neighbors, separated ego, separated neighbors
    let mut m = vec![Moments::new(c); 4];
    for i in 0..t.set.eval.len() {
        let scene = t.set.eval.sample(i).unwrap();
        let mut s = Session::new(&t.model.store, Mode::Eval, false);
        let ego = Tensor::stack(&[&scene.ego_feature.data]).unwrap();
        m[0].add(&ego);
        let x = s.input(ego).unwrap();
        let x = dads.ego.forward(&mut s, x).unwrap();
        m[2].add(s.graph.value(x));
        if scene.n_nei == 0 {
            continue;
        }
        let projected: Vec<Tensor<f32>> = (0..scene.n_nei)
            .map(|j| project_to_ego(&scene.neighbor_features[j], &scene.poses[j + 1], &scene.poses[0]).data)
            .collect();
        let refs: Vec<&Tensor<f32>> = projected.iter().collect();
        let bar = t.model.resize_neighbors(&mut s, &Tensor::stack(&refs).unwrap()).unwrap();
        m[1].add(s.graph.value(bar));
        let sep = dads.nei.forward(&mut s, bar).unwrap();
        m[3].add(s.graph.value(sep));
    }
    let raw = moment_distance(&m[0], &m[1]);
    let aligned = moment_distance(&m[2], &m[3]);
    assert!(aligned < raw, "aligned {aligned} vs raw {raw}");
}
