//! Fine-grained credit assignment for multi-step visual marking policies.
//!
//! * [`trajectory`]: actions, steps, responses and JSONL I/O.
//! * [`advantage`]: group-relative advantages.
//! * [`regularizer`]: windowed action-type statistics and KL score offsets.
//! * [`credit`]: step-level redistribution and token layout.
//! * [`render`]: rasterization of marking actions.
//! * [`oracle`]: geometric judgments and score heatmaps.
//! * [`forge`]: labeled perturbation dataset generation.
//! * [`sim`]: tabular policy-gradient simulator.

pub mod advantage;
pub mod credit;
pub mod forge;
pub mod oracle;
pub mod pipeline;
pub mod regularizer;
pub mod render;
pub mod rng;
pub mod sim;
pub mod trajectory;

pub use advantage::{
    group_advantages, group_advantages_with, AdvantageError, AdvantageOptions, GroupAdvantage,
};
pub use credit::{
    redistribute, CreditError, CreditStep, RedistributionConfig, StepAdvantageVector,
    TokenAdvantageVector,
};
pub use oracle::{OracleConfig, OracleError, Scene, Target};
pub use regularizer::{
    ActionCounts, ActionDistribution, ActionRegularizer, KlParams, OffsetTable, RegularizerError,
    WindowedActionCounts,
};
pub use trajectory::{
    Action, ActionKind, QualityJudgment, Response, ResponseGroup, Step, TrajectoryError,
};
