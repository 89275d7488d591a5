//! Online mixture-of-experts fusion.
//!
//! N parallel discretized Wonham-Shiryaev filters estimate which latent
//! expert currently drives a target time series from each expert's running
//! loss; a Gibbs/softmin step aggregates their per-tick estimates into a
//! fused prediction; and a matrix-logarithm projection re-estimates the
//! hidden chain's intensity matrix every step.
//!
//! The crate ships the streaming engine ([`MoefEngine`]), a synthetic
//! regime-switching simulator that doubles as a correctness oracle, the
//! evaluation metrics used for reporting, the file formats consumed by the
//! CLI, and an [`oracle`] module of independent verification routines.
//!
//! ```
//! use moef::{FusionConfig, MoefEngine, ObservationRecord};
//!
//! let mut engine = MoefEngine::new(2, FusionConfig::default()).unwrap();
//! let out = engine
//!     .tick(&ObservationRecord::new(0, 0.4, vec![0.2, 0.6]))
//!     .unwrap();
//! assert_eq!(out.per_expert_estimates.len(), 2);
//! ```

mod error;
mod linalg;
mod rng;

pub mod aggregation;
pub mod filter;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod simulator;
pub mod types;

pub use error::{MoefError, Result};
pub use harness::{MoefEngine, TickOutput};
pub use linalg::{expm, SquareMatrix};
pub use rng::GENERATOR_ID;
pub use types::{
    project_to_simplex, validate_intensity, FusionConfig, IntensityMatrix, LossKind,
    ObservationRecord, QDiagMode, RowStochasticMatrix, SimplexVector,
};
