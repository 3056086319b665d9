//! The training loop: sample a batch of prompts, sample K responses each,
//! split them by mode, derive each prompt's non-thinking budget from that
//! step's thinking samples, assign rewards, and take one GRPO step.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{build_report, RunReport, Sample};
use crate::grpo::{objective_gradient, sgd_step, ClipParams, GrpoError, Group};
use crate::lrm::{sample_response, Bucket, PolicySnapshot, Prompt, SimTokens, TaskSpec, Trajectory};
use crate::response::{Mode, ResponseError, TokenId, Vocab};
use crate::reward::{budget_from_responses, BudgetParams, RewardMode, RewardOutcome};
use crate::rng;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("task set is empty")]
    NoTasks,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("step {step}: {source}")]
    Update {
        step: usize,
        /// Last policy before the failed update.
        last_good: Box<PolicySnapshot>,
        #[source]
        source: GrpoError,
    },
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("observer failed: {0}")]
    Observer(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {detail}")]
    CorruptCheckpoint { path: String, detail: String },
    #[error("checkpoint {path} has format version {found}, expected {CHECKPOINT_FORMAT_VERSION}")]
    UnsupportedVersion { path: String, found: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    /// Responses per prompt (K).
    #[serde(default = "TrainConfig::default_group_size")]
    pub group_size: usize,
    #[serde(default)]
    pub budget: BudgetParams,
    #[serde(default)]
    pub clip: ClipParams,
    #[serde(default = "TrainConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub reward_mode: RewardMode,
    pub seed: u64,
    #[serde(default = "TrainConfig::default_eval_every")]
    pub eval_every: usize,
    /// Gradient steps per sampled batch.
    #[serde(default = "TrainConfig::default_reuse_epochs")]
    pub reuse_epochs: usize,
}

impl TrainConfig {
    fn default_batch_size() -> usize {
        16
    }
    fn default_group_size() -> usize {
        8
    }
    fn default_learning_rate() -> f64 {
        2.0
    }
    fn default_eval_every() -> usize {
        500
    }
    fn default_reuse_epochs() -> usize {
        1
    }

    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size: Self::default_batch_size(),
            group_size: Self::default_group_size(),
            budget: BudgetParams::default(),
            clip: ClipParams::default(),
            learning_rate: Self::default_learning_rate(),
            reward_mode: RewardMode::default(),
            seed,
            eval_every: Self::default_eval_every(),
            reuse_epochs: Self::default_reuse_epochs(),
        }
    }

    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut need_pos = |name: &'static str, v: usize| {
            if v == 0 {
                out.push((name, "must be >= 1".to_string()));
            }
        };
        need_pos("batch_size", self.batch_size);
        need_pos("group_size", self.group_size);
        need_pos("eval_every", self.eval_every);
        need_pos("reuse_epochs", self.reuse_epochs);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if let Err(e) = self.budget.validate() {
            out.push(("budget", e.to_string()));
        }
        if let Err(e) = self.clip.validate() {
            out.push(("clip", e.to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        match self.problems().first() {
            None => Ok(()),
            Some((field, msg)) => Err(TrainError::InvalidConfig(format!("{field}: {msg}"))),
        }
    }
}

/// Per-step summary. Mean token fields are 0 when the mode's count is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub thinking_count: usize,
    pub nonthinking_count: usize,
    pub thinking_tokens: usize,
    pub nonthinking_tokens: usize,
    pub thinking_mean_tokens: f64,
    pub nonthinking_mean_tokens: f64,
    pub mean_reward: f64,
    pub accuracy: f64,
    /// Non-thinking responses longer than their prompt's budget, counted the
    /// same way under either reward mode.
    pub over_budget_count: usize,
    /// Non-thinking responses containing a thinking verb.
    pub verb_count: usize,
    pub nonthinking_ratio: f64,
    /// Prompts with no thinking sample, whose budget fell back to `l_empty`.
    pub fallback_prompts: usize,
    pub truncated_count: usize,
    /// Version of the policy that produced this step's samples.
    pub policy_version: u64,
}

/// A sampled response with the reward it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub reward: RewardOutcome,
    pub budget: f64,
    pub used_fallback: bool,
    pub over_budget: bool,
    pub has_verb: bool,
}

/// Trajectory dump line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub prompt_id: u32,
    pub bucket: Bucket,
    pub tokens: Vec<String>,
    pub mode: Mode,
    pub reward: f64,
    pub branch: String,
    pub correct: bool,
    pub length: usize,
    pub budget: f64,
}

impl TrajectoryRecord {
    pub fn new(step: usize, s: &ScoredTrajectory, vocab: &Vocab) -> Self {
        Self {
            step,
            prompt_id: s.trajectory.prompt_id,
            bucket: s.trajectory.bucket,
            tokens: vocab.decode(s.trajectory.response.tokens()),
            mode: s.trajectory.mode,
            reward: s.reward.value,
            branch: s.reward.branch.name().to_string(),
            correct: s.trajectory.correct,
            length: s.trajectory.response.total_length(),
            budget: s.budget,
        }
    }
}

/// Hooks called once per completed step, after the policy update.
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog, _scored: &[ScoredTrajectory], _policy: &PolicySnapshot) -> Result<(), String> {
        Ok(())
    }
}

struct NoopObserver;
impl TrainObserver for NoopObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub policy: PolicySnapshot,
    pub logs: Vec<StepLog>,
}

/// Everything the sampler needs besides the policy.
#[derive(Debug, Clone, Copy)]
pub struct SimContext<'a> {
    pub spec: &'a TaskSpec,
    pub tokens: &'a SimTokens,
}

fn sample_batch_indices(seed: u64, step: usize, n_tasks: usize, batch: usize) -> Vec<usize> {
    let mut r = rng::substream(seed, rng::BATCH, &[step as u64]);
    if batch <= n_tasks {
        index::sample(&mut r, n_tasks, batch).into_vec()
    } else {
        (0..batch).map(|_| r.random_range(0..n_tasks)).collect()
    }
}

/// Samples, scores and groups one step's batch.
pub fn score_step(
    config: &TrainConfig,
    sim: SimContext<'_>,
    tasks: &[Prompt],
    policy: &PolicySnapshot,
    step: usize,
) -> Result<(Vec<Group>, Vec<ScoredTrajectory>, usize), TrainError> {
    let slots = sample_batch_indices(config.seed, step, tasks.len(), config.batch_size);
    let verbs = &sim.tokens.verbs;
    let mut groups = Vec::with_capacity(slots.len());
    let mut scored = Vec::with_capacity(slots.len() * config.group_size);
    let mut fallback = 0;
    for (slot, &ti) in slots.iter().enumerate() {
        let prompt = &tasks[ti];
        let trajectories: Vec<Trajectory> = (0..config.group_size)
            .map(|k| {
                let path = [step as u64, slot as u64, k as u64];
                let mut pr = rng::substream(config.seed, rng::SAMPLING, &path);
                let mut er = rng::substream(config.seed, rng::ANSWERS, &path);
                sample_response(policy, prompt, sim.spec, sim.tokens, &mut pr, &mut er)
            })
            .collect();
        let ctx = budget_from_responses(&prompt.key(), trajectories.iter().map(|t| &t.response), &config.budget)?;
        fallback += usize::from(ctx.used_fallback);
        let mut rewards = Vec::with_capacity(trajectories.len());
        for t in &trajectories {
            let outcome = config.reward_mode.assign(&t.response, t.correct, &ctx)?;
            rewards.push(outcome.value);
            let over = t.mode == Mode::NonThinking && t.response.total_length() as f64 > ctx.budget;
            scored.push(ScoredTrajectory {
                trajectory: t.clone(),
                reward: outcome,
                budget: ctx.budget,
                used_fallback: ctx.used_fallback,
                over_budget: over,
                has_verb: t.response.tokens().iter().any(|x| verbs.contains(x)),
            });
        }
        let (responses, old): (Vec<_>, Vec<_>) = trajectories.into_iter().map(|t| (t.response, t.logprobs)).unzip();
        groups.push(Group::new(prompt.key(), prompt.bucket(), responses, rewards, old)?);
    }
    Ok((groups, scored, fallback))
}

fn summarize(step: usize, scored: &[ScoredTrajectory], fallback: usize, version: u64) -> StepLog {
    let mut log = StepLog {
        step,
        thinking_count: 0,
        nonthinking_count: 0,
        thinking_tokens: 0,
        nonthinking_tokens: 0,
        thinking_mean_tokens: 0.0,
        nonthinking_mean_tokens: 0.0,
        mean_reward: 0.0,
        accuracy: 0.0,
        over_budget_count: 0,
        verb_count: 0,
        nonthinking_ratio: 0.0,
        fallback_prompts: fallback,
        truncated_count: 0,
        policy_version: version,
    };
    let mut reward_sum = 0.0;
    let mut correct = 0usize;
    for s in scored {
        let len = s.trajectory.response.total_length();
        match s.trajectory.mode {
            Mode::Thinking => {
                log.thinking_count += 1;
                log.thinking_tokens += len;
            }
            Mode::NonThinking => {
                log.nonthinking_count += 1;
                log.nonthinking_tokens += len;
                log.verb_count += usize::from(s.has_verb);
                log.over_budget_count += usize::from(s.over_budget);
            }
        }
        reward_sum += s.reward.value;
        correct += usize::from(s.trajectory.correct);
        log.truncated_count += usize::from(s.trajectory.truncated);
    }
    let n = scored.len().max(1) as f64;
    let mean = |tokens: usize, count: usize| if count == 0 { 0.0 } else { tokens as f64 / count as f64 };
    log.thinking_mean_tokens = mean(log.thinking_tokens, log.thinking_count);
    log.nonthinking_mean_tokens = mean(log.nonthinking_tokens, log.nonthinking_count);
    log.mean_reward = reward_sum / n;
    log.accuracy = correct as f64 / n;
    log.nonthinking_ratio = log.nonthinking_count as f64 / n;
    log
}

pub fn run_training(
    config: &TrainConfig,
    sim: SimContext<'_>,
    tasks: &[Prompt],
    initial: &PolicySnapshot,
) -> Result<TrainOutput, TrainError> {
    run_training_with(config, sim, tasks, initial, &mut NoopObserver)
}

pub fn run_training_with(
    config: &TrainConfig,
    sim: SimContext<'_>,
    tasks: &[Prompt],
    initial: &PolicySnapshot,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    let mut policy = *initial;
    let mut logs = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (groups, scored, fallback) = score_step(config, sim, tasks, &policy, step)?;
        let log = summarize(step, &scored, fallback, policy.version);
        let mut next = policy;
        for _ in 0..config.reuse_epochs {
            let update = objective_gradient(&groups, &next, sim.tokens, &config.clip)
                .and_then(|g| sgd_step(&next, &g, config.learning_rate));
            next = match update {
                Ok(p) => p,
                Err(source) => return Err(TrainError::Update { step, last_good: Box::new(policy), source }),
            };
        }
        policy = next;
        observer.on_step(&log, &scored, &policy).map_err(TrainError::Observer)?;
        logs.push(log);
    }
    Ok(TrainOutput { policy, logs })
}

/// Evaluation sampling and aggregation options.
#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub samples_per_task: usize,
    pub seed: u64,
    pub lexicon: &'a BTreeSet<TokenId>,
    pub lexicon_words: &'a [String],
    pub budget: BudgetParams,
}

/// Samples `samples_per_task` responses per task without learning and
/// aggregates them into one row per difficulty bucket (plus `all`).
pub fn evaluate(policy: &PolicySnapshot, sim: SimContext<'_>, tasks: &[Prompt], opts: &EvalOptions<'_>) -> RunReport {
    let mut samples = Vec::with_capacity(tasks.len() * opts.samples_per_task);
    let mut ordered: Vec<&Prompt> = tasks.iter().collect();
    ordered.sort_by_key(|p| (p.bucket(), p.id));
    for p in ordered {
        for k in 0..opts.samples_per_task {
            let path = [u64::from(p.id), k as u64];
            let mut pr = rng::substream(opts.seed, rng::EVAL, &path);
            let mut er = rng::substream(opts.seed, rng::ANSWERS, &[u64::MAX, u64::from(p.id), k as u64]);
            let t = sample_response(policy, p, sim.spec, sim.tokens, &mut pr, &mut er);
            samples.push(Sample {
                dataset: p.bucket().name().to_string(),
                prompt_key: p.key(),
                response: t.response,
                correct: Some(t.correct),
            });
        }
    }
    build_report(&samples, opts.lexicon, opts.lexicon_words, "simulator", &opts.budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub step: usize,
    pub policy: PolicySnapshot,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_slice(bytes)
            .map_err(|e| CheckpointError::CorruptCheckpoint { path: path.into(), detail: e.to_string() })?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| CheckpointError::CorruptCheckpoint {
            path: path.into(),
            detail: "missing format_version".into(),
        })?;
        if found != u64::from(CHECKPOINT_FORMAT_VERSION) {
            return Err(CheckpointError::UnsupportedVersion { path: path.into(), found: found as u32 });
        }
        let ck: Checkpoint = serde_json::from_value(value)
            .map_err(|e| CheckpointError::CorruptCheckpoint { path: path.into(), detail: e.to_string() })?;
        if !ck.policy.logits.is_finite() {
            return Err(CheckpointError::CorruptCheckpoint { path: path.into(), detail: "non-finite logit".into() });
        }
        Ok(ck)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

pub fn checkpoint_save(policy: &PolicySnapshot, step: usize, path: &Path) -> Result<(), CheckpointError> {
    let ck = Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, step, policy: *policy };
    std::fs::write(path, ck.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn checkpoint_load(path: &Path) -> Result<PolicySnapshot, CheckpointError> {
    Ok(Checkpoint::read(path)?.policy)
}
