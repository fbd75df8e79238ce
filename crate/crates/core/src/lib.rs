//! Effective capacity of LAA links sharing unlicensed spectrum with WiFi.
//!
//! The crate covers the saturation contention model, generating functions
//! of the OFF intervals between deliveries, effective-capacity solvers,
//! power allocation on top of them, and a slot-level simulator used to
//! check the analysis empirically.

pub mod capacity;
pub mod contention;
pub mod error;
pub mod genfun;
pub mod optimizer;
pub mod scenario;
pub mod simulator;

pub use capacity::{EcSolution, LinkModel, Method};
pub use contention::{ContentionPoint, SlotDistribution, SlotKind};
pub use error::{Error, Result};
pub use genfun::{Dual, GenFun, IntervalPgfs};
pub use optimizer::{DualUpdate, PowerAllocation, PowerModel, Problem};
pub use scenario::{ChannelSet, CwMode, SystemParams};
pub use simulator::{EcEstimate, ServiceTrace, SimConfig, ThetaEstimate};
