//! Run configuration: one TOML document covering training, the simulated
//! environment, the task set, the starting policy, analysis options and
//! outputs. Every section except `[train]` has defaults, and the effective
//! document (defaults filled in) is what gets echoed next to a run's outputs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tnt_core::lrm::{Logits, NUM_BUCKETS};
use tnt_core::response::{TokenizerKind, DEFAULT_LEXICON};
use tnt_core::{BudgetParams, ReportFormat, TaskSpec, TrainConfig};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldProblem {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn joined(problems: &[FieldProblem]) -> String {
    problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, field: Option<String>, message: String },
    #[error("config {path} is invalid: {}", joined(problems))]
    Invalid { path: String, problems: Vec<FieldProblem> },
}

impl ConfigError {
    /// Fields this error is about, outermost table first (`train.seed`).
    pub fn fields(&self) -> Vec<String> {
        match self {
            ConfigError::Io { .. } => vec![],
            ConfigError::Parse { field, .. } => field.iter().cloned().collect(),
            ConfigError::Invalid { problems, .. } => problems.iter().map(|p| p.field.clone()).collect(),
        }
    }
}

/// Prompt set used for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    #[serde(default = "TaskSource::default_count")]
    pub easy: usize,
    #[serde(default = "TaskSource::default_count")]
    pub medium: usize,
    #[serde(default = "TaskSource::default_count")]
    pub hard: usize,
    /// JSONL file of task records; when set, the counts are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl TaskSource {
    fn default_count() -> usize {
        100
    }

    pub fn counts(&self) -> [usize; NUM_BUCKETS] {
        [self.easy, self.medium, self.hard]
    }
}

impl Default for TaskSource {
    fn default() -> Self {
        Self { easy: 100, medium: 100, hard: 100, file: None }
    }
}

/// Starting logits per decision, one entry per difficulty bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPolicy {
    #[serde(default = "InitialPolicy::default_first_token")]
    pub first_token: [f64; NUM_BUCKETS],
    #[serde(default = "InitialPolicy::default_think_continue")]
    pub think_continue: [f64; NUM_BUCKETS],
    #[serde(default = "InitialPolicy::default_post_close")]
    pub post_close: [f64; NUM_BUCKETS],
    #[serde(default = "InitialPolicy::default_solution_continue")]
    pub solution_continue: [f64; NUM_BUCKETS],
}

impl InitialPolicy {
    fn default_first_token() -> [f64; NUM_BUCKETS] {
        Logits::initial().first_token
    }
    fn default_think_continue() -> [f64; NUM_BUCKETS] {
        Logits::initial().think_continue
    }
    fn default_post_close() -> [f64; NUM_BUCKETS] {
        Logits::initial().post_close
    }
    fn default_solution_continue() -> [f64; NUM_BUCKETS] {
        Logits::initial().solution_continue
    }

    pub fn logits(&self) -> Logits {
        Logits {
            first_token: self.first_token,
            think_continue: self.think_continue,
            post_close: self.post_close,
            solution_continue: self.solution_continue,
        }
    }
}

impl Default for InitialPolicy {
    fn default() -> Self {
        let l = Logits::initial();
        Self {
            first_token: l.first_token,
            think_continue: l.think_continue,
            post_close: l.post_close,
            solution_continue: l.solution_continue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Thinking verbs; matched case-insensitively, ignoring punctuation.
    #[serde(default = "AnalysisOptions::default_lexicon")]
    pub lexicon: Vec<String>,
    #[serde(default)]
    pub tokenizer: TokenizerKind,
    /// Budget multiplier for corpus prompts that have thinking samples.
    #[serde(default = "AnalysisOptions::default_omega")]
    pub omega: f64,
    /// Budget for corpus prompts without any thinking sample.
    #[serde(default = "AnalysisOptions::default_fallback_budget")]
    pub fallback_budget: f64,
    /// Largest tolerated fraction of malformed corpus lines.
    #[serde(default = "AnalysisOptions::default_max_error_rate")]
    pub max_error_rate: f64,
    /// Responses sampled per task when evaluating a trained policy.
    #[serde(default = "AnalysisOptions::default_eval_samples")]
    pub eval_samples: usize,
    /// Trailing steps summarized in the ablation comparison.
    #[serde(default = "AnalysisOptions::default_final_window")]
    pub final_window: usize,
}

impl AnalysisOptions {
    fn default_lexicon() -> Vec<String> {
        DEFAULT_LEXICON.iter().map(|w| w.to_string()).collect()
    }
    fn default_omega() -> f64 {
        2.0
    }
    fn default_fallback_budget() -> f64 {
        1000.0
    }
    fn default_max_error_rate() -> f64 {
        0.2
    }
    fn default_eval_samples() -> usize {
        8
    }
    fn default_final_window() -> usize {
        200
    }

    pub fn budget(&self) -> BudgetParams {
        BudgetParams { omega: self.omega, l_empty: self.fallback_budget }
    }
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            lexicon: Self::default_lexicon(),
            tokenizer: TokenizerKind::default(),
            omega: Self::default_omega(),
            fallback_budget: Self::default_fallback_budget(),
            max_error_rate: Self::default_max_error_rate(),
            eval_samples: Self::default_eval_samples(),
            final_window: Self::default_final_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    #[serde(default = "OutputOptions::default_dir")]
    pub dir: PathBuf,
    #[serde(default = "OutputOptions::default_formats")]
    pub formats: Vec<ReportFormat>,
    #[serde(default)]
    pub dump_trajectories: bool,
}

impl OutputOptions {
    fn default_dir() -> PathBuf {
        PathBuf::from("runs/default")
    }
    fn default_formats() -> Vec<ReportFormat> {
        vec![ReportFormat::Csv, ReportFormat::Json]
    }
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self { dir: Self::default_dir(), formats: Self::default_formats(), dump_trajectories: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required by `train` and `ablation`; `steps` and `seed` have no default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub environment: TaskSpec,
    #[serde(default)]
    pub tasks: TaskSource,
    #[serde(default)]
    pub policy: InitialPolicy,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub output: OutputOptions,
}

/// Pulls the offending key out of serde's "missing field `x`" style messages.
fn quoted_field(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().trim().to_string();
            let named = (message.starts_with("missing field") || message.starts_with("unknown field"))
                .then(|| quoted_field(&message))
                .flatten();
            let field = match (at.as_str(), named) {
                (".", Some(n)) => Some(n.to_string()),
                (".", None) => None,
                (p, Some(n)) if message.starts_with("missing field") => Some(format!("{p}.{n}")),
                (p, _) => Some(p.to_string()),
            };
            let message = match &field {
                Some(f) => format!("{f}: {message}"),
                None => message,
            };
            ConfigError::Parse { path: path.to_string(), field, message }
        })?;
        let problems = config.problems();
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid { path: path.to_string(), problems })
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    /// The `[train]` section, or the error a training command reports
    /// without it.
    pub fn require_train(&self, path: &str) -> Result<&TrainConfig, ConfigError> {
        self.train.as_ref().ok_or_else(|| ConfigError::Parse {
            path: path.to_string(),
            field: Some("train".into()),
            message: "train: missing section `[train]` (it needs at least `steps` and `seed`)".into(),
        })
    }

    /// Every field-level problem, checked together so one run reports all.
    pub fn problems(&self) -> Vec<FieldProblem> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| out.push(FieldProblem { field: field.to_string(), message });
        if let Some(train) = &self.train {
            for (field, message) in train.problems() {
                push(&format!("train.{field}"), message);
            }
            // TOML integers are signed 64-bit
            if i64::try_from(train.seed).is_err() {
                push("train.seed", format!("must be <= {}, got {}", i64::MAX, train.seed));
            }
        }
        if let Err(e) = self.environment.validate() {
            push("environment", e.to_string());
        }
        if self.tasks.file.is_none() && self.tasks.counts().iter().sum::<usize>() == 0 {
            push("tasks", "at least one task is needed (set easy/medium/hard or file)".into());
        }
        if let Some((decision, bucket)) = self.policy.logits().first_non_finite() {
            push("policy", format!("{decision:?} logit for the {} bucket is not finite", bucket.name()));
        }
        let a = &self.analysis;
        if !(a.omega >= 1.0 && a.omega.is_finite()) {
            push("analysis.omega", format!("must be >= 1, got {}", a.omega));
        }
        if !(a.fallback_budget > 0.0 && a.fallback_budget.is_finite()) {
            push("analysis.fallback_budget", format!("must be > 0, got {}", a.fallback_budget));
        }
        if !(0.0..=1.0).contains(&a.max_error_rate) {
            push("analysis.max_error_rate", format!("must be in [0, 1], got {}", a.max_error_rate));
        }
        if a.eval_samples == 0 {
            push("analysis.eval_samples", "must be >= 1".into());
        }
        if a.final_window == 0 {
            push("analysis.final_window", "must be >= 1".into());
        }
        if a.lexicon.iter().any(|w| w.trim().is_empty()) {
            push("analysis.lexicon", "entries must be non-empty".into());
        }
        if self.output.formats.is_empty() {
            push("output.formats", "at least one format is needed".into());
        }
        out
    }
}
