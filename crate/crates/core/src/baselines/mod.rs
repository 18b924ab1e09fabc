//! Comparison policies: sample average approximation, pinball-loss
//! regression, kernel-weighted optimization, residual-based estimation, and
//! the kernel-weighted joint pricing method.

pub mod erm;
pub mod kernel;
pub mod rbe;
pub mod saa;

pub use erm::{erm_fit, pinball_loss, ErmBank, ErmConfig, ErmForm, PinballModel, DEFAULT_TAU_BANK};
pub use kernel::{ko_decide, prescriptive_joint, weighted_quantile, KernelWeights, KoModel};
pub use rbe::{rbe_fit, RbeModel};
pub use saa::{saa_joint, SaaMode, SaaModel};
