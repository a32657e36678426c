//! Multi-rank compartmental neuron simulation: a linear-time branched cable
//! solver, a task-based per-rank runtime that overlaps spike exchange with
//! computation, placement strategies for mixed-size populations, and tracing.

pub mod error;
pub mod exchange;
pub mod hines;
pub mod metrics;
pub mod morphology;
pub mod network;
pub mod neuron;
pub mod runtime;
pub mod seed;
pub mod trace;

pub use error::{Error, Result};
pub use exchange::{allgather, ExchangeError, GlobalBuffer, SpikeFrame, Transport};
pub use hines::{CableParams, HinesSystem};
pub use metrics::{flop_budget, spike_invariance_check, RunReport};
pub use morphology::Morphology;
pub use network::{imbalance, partition, Network, Partition, RunConfig, SizeModel, Strategy};
pub use neuron::{Neuron, SpikeEvent};
pub use runtime::{run_rank, simulate, RankOutcome, RunOptions, TaskEngine};
pub use trace::{summarize, TraceEvent, TraceSummary};
