use std::hint::black_box;

use bevadapt::harness::{bench_scene, prepare_batch, AdapterConfig, Model, RunConfig};
use bevadapt::params::{Mode, Session};
use bevadapt::world::PoseNoiseConfig;
use bevadapt::{Graph, Tensor, WorldConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for (ci, co, h, w) in [(32, 32, 12, 44), (64, 32, 13, 44)] {
        let x = Tensor::from_fn(vec![4, ci, h, w], |i| ((i % 17) as f32 - 8.0) * 0.1);
        let k = Tensor::from_fn(vec![co, ci, 3, 3], |i| ((i % 7) as f32 - 3.0) * 0.01);
        group.bench_function(BenchmarkId::from_parameter(format!("{ci}->{co}@{h}x{w}")), |b| {
            b.iter(|| {
                let mut g = Graph::<f32>::new();
                let xv = g.param(x.clone()).unwrap();
                let kv = g.param(k.clone()).unwrap();
                let y = g.conv2d(xv, kv, None, 1).unwrap();
                let s = g.sum(y).unwrap();
                g.backward(s).unwrap();
                black_box(g.grad(kv).is_some())
            })
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let world = WorldConfig::standard();
    let mut group = c.benchmark_group("inference");
    for (label, adapter) in [("hete", AdapterConfig::hete()), ("full", AdapterConfig::full())] {
        let cfg = RunConfig::new(adapter);
        let pairing = cfg.pairing(&world);
        let model = Model::new(&cfg, &world, &pairing).unwrap();
        for agents in [2, 5] {
            let scene = bench_scene(&world, &pairing, agents).unwrap();
            let batch = prepare_batch(&[&scene], &PoseNoiseConfig::default(), 0).unwrap();
            group.bench_function(BenchmarkId::new(label, agents), |b| {
                b.iter(|| {
                    let mut s = Session::new(&model.store, Mode::Eval, false);
                    let f = model.forward(&mut s, &batch, true).unwrap();
                    black_box(s.graph.value(f.head).data()[0])
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, conv, inference);
criterion_main!(benches);
