//! Cycle-accurate model of the processor-to-L1 interconnects of a 256-core
//! shared-memory cluster.
//!
//! * [`addressing`]: interleaved and hybrid (scrambled) memory maps.
//! * [`topology`]: network graphs for the Top1, Top4, TopH and ideal TopX
//!   cluster variants.
//! * [`engine`]: the per-cycle ready/valid simulation kernel.
//! * [`traffic`]: open-loop synthetic request generators.
//! * [`kernels`]: closed-loop benchmark traces.
//! * [`metrics`]: throughput/latency reduction, sweeps and CSV output.
//! * [`cli`]: the experiment runner behind the `l1net` binary.

pub mod addressing;
pub mod cli;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod rng;
pub mod topology;
pub mod traffic;

pub use addressing::{AddressLayout, PhysicalLocation};
pub use engine::{AccessKind, Completion, Request, RunConfig, SimState, Workload};
pub use error::{Error, Result};
pub use metrics::Metrics;
pub use topology::{build_cluster, ClusterConfig, NetworkGraph, Variant};
