//! Capability-adaptive multi-perspective rationale distillation.
//!
//! A meta-gating network scores each teacher rationale style against the
//! student's current per-style losses, selects and weights a subset of
//! styles for supervision, and adds a pairwise answer-consistency term.
//! The crate also ships a desk-scale student, a training loop with
//! ablation modes, and latent-space analysis tools.

pub mod analysis;
pub mod calibration;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod losses;
pub mod metanet;
pub mod numeric;
pub mod optim;
pub mod params;
pub mod trainer;

pub use analysis::{AnalysisConfig, AnalysisReport};
pub use calibration::{LossVector, UpdateSchedule};
pub use corpus::{QuestionRecord, ReasoningSample};
pub use error::{Error, Result};
pub use fusion::{FusionConfig, FusionSelection};
pub use losses::{AnswerDistribution, ObjectiveConfig, StudentConfig, StudentModel, ToyStudent};
pub use metanet::{CompatibilityScores, MetaNet, MetaNetConfig};
pub use trainer::{Mode, RunConfig, StepRecord};
