//! Deterministic trace-driven DRAM subsystem simulator.

pub mod chip;
pub mod frontend;
pub mod maintenance;
pub mod rng;
pub mod timing;

pub use chip::{Chip, Geometry, LockOwner, LockResult};
pub use timing::{check_stream, min_gap, ns_to_cycles, Command, CommandKind, TimingParams};
