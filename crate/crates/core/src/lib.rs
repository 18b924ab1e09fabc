//! Data-driven newsvendor decisions: demand-generating processes, a
//! conditional generative demand model, baseline policies and an
//! experiment harness.

pub mod baselines;
pub mod cdgm;
pub mod decisions;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod neural;
pub mod numerics;

pub use cdgm::{train, Generator, TrainConfig, TrainStrategy};
pub use decisions::{
    inventory_decision, joint_decision, profit, rho, CostParams, DemandSampler, GridSpec,
    JointDecision, PricePoint,
};
pub use dgp::{Dataset, DemandRecord, DgpKind, Features, OracleModel, PriceMode, PriceSet};
pub use error::{Error, Result};
pub use numerics::RngStream;
