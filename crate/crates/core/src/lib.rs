//! Feature adapters for collaborative bird's-eye-view perception between
//! agents whose encoders disagree in feature geometry and distribution.

pub mod autodiff;
pub mod dads;
pub mod dami;
pub mod detection;
pub mod error;
pub mod harness;
pub mod lscr;
pub mod params;
pub mod world;

pub use autodiff::{Graph, Real, Tensor, Var};
pub use error::{Error, Result};
pub use dads::DadsConfig;
pub use harness::{AdapterConfig, BenchResult, MetricsRecord, Model, RunConfig};
pub use params::{ParamStore, Session};
pub use world::{FeatureMap, WorldConfig};
