//! Speculative decoding engine with recurrent drafters.
//!
//! A fast drafter proposes candidate tokens which a target model verifies in
//! a single scoring pass, committing several tokens per target forward pass
//! while leaving the output distribution identical to target-only decoding.
//! The crate provides:
//!
//! - [`model`]: drafter/target model interfaces plus two desk-scale
//!   implementations — an exact tabular n-gram model and a diagonal
//!   linear-recurrence drafter with a fixed-size state.
//! - [`verify`]: sequential draft verification (greedy and sampling modes)
//!   with the residual-distribution resample rule.
//! - [`tree`]: tree-structured drafting as batch generation with state
//!   duplication, preallocated per-batch-size caches, and lossless tree
//!   verification.
//! - [`bandit`]: UCB selection over a candidate set of tree configurations
//!   with a speedup-derived reward.
//! - [`engine`]: the draft → score → verify → commit generation loop and its
//!   metrics.
//! - [`metrics`]: acceptance-length/speedup arithmetic and expected
//!   calibration error.

pub mod bandit;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tree;
pub mod verify;

pub use bandit::{ArmSet, BanditState, RoundOutcome};
pub use engine::{
    generate, generate_with_bandit_carry, GenerationConfig, GenerationSession, LambdaGamma,
    Strategy,
};
pub use error::{Error, Result};
pub use metrics::RunMetrics;
pub use model::{
    duplicate_state, load_model, target_score_parallel, DrafterState, Distribution, LoadedModel,
    Model, SsmDrafter, TabularModel, TokenId,
};
pub use rng::Stream;
pub use tree::{DraftTree, FlattenedTree, StateCachePlan, TreeConfig, TreeScores};
pub use verify::{DraftSequence, Mode, VerifyOutcome};
