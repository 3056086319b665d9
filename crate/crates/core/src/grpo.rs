//! Group-relative advantages and the token-level clipped surrogate.
//!
//! ```text
//! J = 1/T * sum_i sum_t min(r_it * A_i, clip(r_it, 1 - eps, 1 + eps) * A_i)
//! ```
//!
//! `r_it = exp(new_it - old_it)` is the per-token importance ratio, `A_i` the
//! group-normalized reward of response `i` broadcast over its tokens, and `T`
//! the token count of every response in the batch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lrm::{choice_score, Bucket, LrmError, Logits, PolicySnapshot, SimTokens, NUM_PARAMS};
use crate::response::Response;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: String, expected: usize, got: usize },
    #[error("non-finite log-probability at {0}")]
    NonFiniteLogprob(usize),
    #[error("gradient component {index} is not finite ({value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("clip epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("learning rate must be > 0, got {0}")]
    InvalidLearningRate(f64),
    #[error("group {0} is empty")]
    EmptyGroup(String),
    #[error(transparent)]
    Policy(#[from] LrmError),
}

fn mismatch(what: impl Into<String>, expected: usize, got: usize) -> GrpoError {
    GrpoError::LengthMismatch { what: what.into(), expected, got }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipParams {
    #[serde(default = "ClipParams::default_epsilon")]
    pub epsilon: f64,
}

impl ClipParams {
    fn default_epsilon() -> f64 {
        0.2
    }

    pub fn new(epsilon: f64) -> Result<Self, GrpoError> {
        let c = Self { epsilon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.epsilon > 0.0 && self.epsilon < 1.0 {
            Ok(())
        } else {
            Err(GrpoError::InvalidEpsilon(self.epsilon))
        }
    }
}

impl Default for ClipParams {
    fn default() -> Self {
        Self { epsilon: Self::default_epsilon() }
    }
}

/// K responses to one prompt, their rewards, and the sampling policy's
/// per-token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub prompt_id: String,
    /// Policy context the responses were generated under.
    pub bucket: Bucket,
    pub responses: Vec<Response>,
    pub rewards: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
}

impl Group {
    pub fn new(
        prompt_id: impl Into<String>,
        bucket: Bucket,
        responses: Vec<Response>,
        rewards: Vec<f64>,
        old_logprobs: Vec<Vec<f64>>,
    ) -> Result<Self, GrpoError> {
        let g = Self { prompt_id: prompt_id.into(), bucket, responses, rewards, old_logprobs };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let k = self.responses.len();
        if k == 0 {
            return Err(GrpoError::EmptyGroup(self.prompt_id.clone()));
        }
        if self.rewards.len() != k {
            return Err(mismatch(format!("{}: rewards", self.prompt_id), k, self.rewards.len()));
        }
        if self.old_logprobs.len() != k {
            return Err(mismatch(format!("{}: old_logprobs", self.prompt_id), k, self.old_logprobs.len()));
        }
        for (i, (r, lp)) in self.responses.iter().zip(&self.old_logprobs).enumerate() {
            if lp.len() != r.total_length() {
                return Err(mismatch(format!("{}: old_logprobs[{i}]", self.prompt_id), r.total_length(), lp.len()));
            }
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.responses.iter().map(Response::total_length).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub per_response: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
    pub degenerate: bool,
}

/// `(r_i - mean) / std` with the population standard deviation. A group
/// whose rewards are all identical carries no signal: every advantage is 0.
pub fn group_advantages(rewards: &[f64]) -> AdvantageSet {
    let k = rewards.len();
    if k == 0 {
        return AdvantageSet { per_response: vec![], group_mean: 0.0, group_std: 0.0, degenerate: true };
    }
    let mean = rewards.iter().sum::<f64>() / k as f64;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return AdvantageSet { per_response: vec![0.0; k], group_mean: rewards[0], group_std: 0.0, degenerate: true };
    }
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k as f64;
    let std = var.sqrt();
    AdvantageSet {
        per_response: rewards.iter().map(|r| (r - mean) / std).collect(),
        group_mean: mean,
        group_std: std,
        degenerate: false,
    }
}

pub fn importance_ratios(new_logprobs: &[f64], old_logprobs: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if new_logprobs.len() != old_logprobs.len() {
        return Err(mismatch("new_logprobs", old_logprobs.len(), new_logprobs.len()));
    }
    new_logprobs
        .iter()
        .zip(old_logprobs)
        .enumerate()
        .map(|(i, (n, o))| {
            if !n.is_finite() || !o.is_finite() {
                return Err(GrpoError::NonFiniteLogprob(i));
            }
            Ok((n - o).exp())
        })
        .collect()
}

fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// d(clipped_term)/d(ratio). Zero where the clipped branch is selected and
/// the ratio has left the trust region.
fn clipped_term_slope(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let active = if advantage >= 0.0 { ratio <= 1.0 + eps } else { ratio >= 1.0 - eps };
    if active {
        advantage
    } else {
        0.0
    }
}

fn batch_tokens(groups: &[Group]) -> usize {
    groups.iter().map(Group::token_count).sum()
}

/// Token-level clipped surrogate, normalized by the total token count of the
/// whole batch. `new_logprobs[g][i]` holds the current policy's per-token
/// log-probabilities for response `i` of group `g`.
pub fn clipped_objective(groups: &[Group], new_logprobs: &[Vec<Vec<f64>>], clip: &ClipParams) -> Result<f64, GrpoError> {
    clip.validate()?;
    if new_logprobs.len() != groups.len() {
        return Err(mismatch("new_logprobs groups", groups.len(), new_logprobs.len()));
    }
    let total = batch_tokens(groups);
    if total == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (g, new_g) in groups.iter().zip(new_logprobs) {
        g.validate()?;
        if new_g.len() != g.responses.len() {
            return Err(mismatch(format!("{}: new_logprobs", g.prompt_id), g.responses.len(), new_g.len()));
        }
        let adv = group_advantages(&g.rewards);
        for ((new_i, old_i), a) in new_g.iter().zip(&g.old_logprobs).zip(&adv.per_response) {
            for r in importance_ratios(new_i, old_i)? {
                sum += clipped_term(r, *a, clip.epsilon);
            }
        }
    }
    Ok(sum / total as f64)
}

/// Evaluates the current policy's log-probabilities for every response.
pub fn policy_logprobs(groups: &[Group], policy: &PolicySnapshot, tokens: &SimTokens) -> Result<Vec<Vec<Vec<f64>>>, GrpoError> {
    groups
        .iter()
        .map(|g| {
            g.responses
                .iter()
                .map(|r| policy.sequence_logprobs(tokens, r.tokens(), g.bucket).map_err(GrpoError::from))
                .collect()
        })
        .collect()
}

pub fn objective_at(groups: &[Group], policy: &PolicySnapshot, tokens: &SimTokens, clip: &ClipParams) -> Result<f64, GrpoError> {
    clipped_objective(groups, &policy_logprobs(groups, policy, tokens)?, clip)
}

/// Exact gradient of the clipped objective with respect to every logit of
/// `policy`, holding advantages and old log-probabilities fixed.
pub fn objective_gradient(groups: &[Group], policy: &PolicySnapshot, tokens: &SimTokens, clip: &ClipParams) -> Result<Logits, GrpoError> {
    clip.validate()?;
    let mut grad = Logits::default();
    let total = batch_tokens(groups);
    if total == 0 {
        return Ok(grad);
    }
    for g in groups {
        g.validate()?;
        let adv = group_advantages(&g.rewards);
        for ((resp, old), &a) in g.responses.iter().zip(&g.old_logprobs).zip(&adv.per_response) {
            if a == 0.0 {
                continue;
            }
            let choices = tokens.parse_choices(resp.tokens())?;
            for (c, &old_lp) in choices.iter().zip(old) {
                let z = policy.logit(c.decision, g.bucket);
                let new_lp = crate::lrm::choice_logprob(z, c.first_option);
                let ratio = (new_lp - old_lp).exp();
                let slope = clipped_term_slope(ratio, a, clip.epsilon);
                if slope != 0.0 {
                    // d ratio / dz = ratio * d logpi / dz
                    *grad.get_mut(c.decision, g.bucket) += slope * ratio * choice_score(z, c.first_option);
                }
            }
        }
    }
    let scale = 1.0 / total as f64;
    Ok(Logits::from_flat(&grad.to_flat().map(|v| v * scale)))
}

/// Gradient ascent: `theta + lr * gradient`. Returns a new snapshot with the
/// version bumped.
pub fn sgd_step(policy: &PolicySnapshot, gradient: &Logits, learning_rate: f64) -> Result<PolicySnapshot, GrpoError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(GrpoError::InvalidLearningRate(learning_rate));
    }
    let g = gradient.to_flat();
    if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(GrpoError::NonFiniteGradient { index, value });
    }
    let theta = policy.logits.to_flat();
    let mut next = [0.0; NUM_PARAMS];
    for i in 0..NUM_PARAMS {
        next[i] = theta[i] + learning_rate * g[i];
    }
    let logits = Logits::from_flat(&next);
    if let Some(index) = logits.to_flat().iter().position(|v| !v.is_finite()) {
        return Err(GrpoError::NonFiniteGradient { index, value: g[index] });
    }
    Ok(PolicySnapshot { logits, version: policy.version + 1 })
}
