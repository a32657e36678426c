//! Task engine and the per-rank simulation loop built on it.

pub mod engine;
pub mod sim;

pub use engine::{count_inversions, EngineConfig, StartRecord, TaskEngine, TaskGroup, WorkerCtx};
pub use sim::{run_rank, simulate, RankOutcome, RunOptions};
