//! Multi-operator bandwidth sharing with per-period scheduling.

pub mod abs;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod projection;
pub mod ra;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{
    quality, quality_inverse, AllocationResult, PeriodSample, QualityModel, SharingMatrix,
    StepSchedule, SystemConfig, VirtualQueueLedger,
};
