//! Budget-based reward shaping for hybrid reasoning models.
//!
//! A hybrid model chooses per query between a thinking response (reasoning,
//! then `</think>`, then the solution) and a non-thinking one (starting with
//! `</think>`). Rewarding the non-thinking mode more invites a hack: open with
//! `</think>` and think anyway. This crate caps each non-thinking response at
//! a per-query budget derived from the solution lengths of that query's own
//! thinking samples, and provides:
//!
//! - [`response`]: vocabulary, responses, mode classification, lengths
//! - [`reward`]: budgets and the reward functions (budgeted and naive)
//! - [`grpo`]: group-relative advantages, the clipped token-level objective
//!   and its exact gradient for the toy policy
//! - [`lrm`]: a trainable toy policy and a task environment where thinking
//!   tokens buy accuracy, wherever they appear
//! - [`trainer`]: the training loop, evaluation and checkpoints
//! - [`analysis`]: corpus ingestion and the reporting metrics

pub mod analysis;
pub mod grpo;
pub mod lrm;
pub mod response;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use analysis::{emit_report, token_efficiency, ReportFormat, RunReport, RunRow};
pub use grpo::{group_advantages, ClipParams, Group};
pub use lrm::{Bucket, Logits, PolicySnapshot, Prompt, TaskSpec};
pub use response::{Mode, Response, TokenId, Vocab};
pub use reward::{compute_budget, BudgetContext, BudgetParams, RewardMode, RewardOutcome};
pub use trainer::{run_training, StepLog, TrainConfig};
