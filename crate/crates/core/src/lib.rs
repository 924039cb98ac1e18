//! Personalized federated learning with Bregman-Moreau envelope regularizers.
//!
//! The crate is a deterministic single-process simulator. Its layers, bottom
//! up:
//!
//! * [`param_space`]: flat parameter vectors and seeded random streams
//! * [`bregman`]: convex generators, Bregman divergences, prox and envelope
//! * [`models`]: MCLR and two-layer leaky-ReLU losses with exact gradients
//! * [`data`]: IDX ingestion, synthetic blobs, label-skew / Dirichlet splits
//! * [`algorithms`]: local trainers (pFedBreD fo/mfo/mg/mg-variant, pFedMe,
//!   FedAvg, first-order Per-FedAvg)
//! * [`federation`]: rounds, client sampling, momentum aggregation
//! * [`metrics`]: global/local test and per-class loss deviations

pub mod algorithms;
pub mod bregman;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod models;
pub mod param_space;

pub use bregman::{ConvexGenerator, Objective, PriorSpec, ProxSolver};
pub use data::{ClientShard, Dataset, Partition};
pub use error::{Error, Result};
pub use models::{Batch, ModelKind, ModelSpec};
pub use param_space::{InitScheme, ParamVector, RngStream};
