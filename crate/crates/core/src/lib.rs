//! Discrete-event simulator for data stream processing platforms built on
//! bi-modal networks: allocatable dedicated links combined with best-effort
//! public Internet uplinks.
//!
//! The crate models the full task lifecycle: distributed chain mapping over
//! the server network, probe-based resource reservation with rollback,
//! fluid-flow streaming with public-rate perturbation, periodic dynamic link
//! re-allocation, and SLA window accounting. Experiments are driven from
//! [`experiment`] and the `bimodal-sim` binary.

pub mod config;
pub mod engine;
pub mod experiment;
pub mod mapping;
pub mod metrics;
pub mod reservation;
pub mod scheduler;
pub mod topology;
pub mod workload;

pub use config::SimConfig;
pub use engine::{run, RunLog};
pub use metrics::MetricsReport;
pub use topology::Network;
pub use workload::TaskSpec;
