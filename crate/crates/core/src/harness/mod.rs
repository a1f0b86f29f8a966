//! Experiment orchestration: configuration, training under frozen
//! encoders, checkpoints, evaluation, throughput, ablations and pose-noise
//! sweeps.

mod ablate;
mod bench;
mod checkpoint;
mod config;
mod eval;
mod metrics;
mod model;
mod noise;
mod run;
mod train;

pub use ablate::{ablate, component_grid, stacking_grid, write_csv, AblationRow, FULL_ROW};
pub use bench::{bench, bench_scene, BenchOptions, BenchResult};
pub use checkpoint::{load_checkpoint, save_checkpoint, write_config_lock, Manifest, TensorEntry, CONFIG_LOCK, MANIFEST, METRICS};
pub use config::{AdapterConfig, HeadInit, OptimConfig, Pairing, RunConfig, TwoPhase};
pub use eval::evaluate;
pub use metrics::{read_events, Event, MetricsRecord, MetricsWriter};
pub use noise::noise_sweep;
pub use run::{run_ablate, run_bench, run_eval, run_noise_sweep, run_train, TrainReport, BENCH_DIR, NOISE_DIR, RESULTS};
pub use model::{prepare_batch, BatchInput, Forward, Model};
pub use train::{train_model, train_on, Benchmark, Sampler, TrainOutcome};
