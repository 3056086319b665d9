//! Per-query non-thinking budgets and the mode-aware reward functions.
//!
//! The budget for a prompt is `omega` times the mean solution-component
//! length of that prompt's thinking-mode samples, or a fixed fallback when no
//! thinking sample exists. A non-thinking response longer than its budget is
//! treated as disguised thinking and receives the lowest reward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{Mode, Response, ResponseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetParamsError {
    #[error("omega must be >= 1, got {0}")]
    Omega(f64),
    #[error("l_empty must be > 0, got {0}")]
    Fallback(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetParams {
    #[serde(default = "BudgetParams::default_omega")]
    pub omega: f64,
    #[serde(default = "BudgetParams::default_l_empty")]
    pub l_empty: f64,
}

impl BudgetParams {
    fn default_omega() -> f64 {
        2.0
    }

    fn default_l_empty() -> f64 {
        1000.0
    }

    pub fn new(omega: f64, l_empty: f64) -> Result<Self, BudgetParamsError> {
        let p = Self { omega, l_empty };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BudgetParamsError> {
        if !(self.omega >= 1.0 && self.omega.is_finite()) {
            return Err(BudgetParamsError::Omega(self.omega));
        }
        if !(self.l_empty > 0.0 && self.l_empty.is_finite()) {
            return Err(BudgetParamsError::Fallback(self.l_empty));
        }
        Ok(())
    }
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self { omega: Self::default_omega(), l_empty: Self::default_l_empty() }
    }
}

/// Budget derived for one prompt from its thinking-mode samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetContext {
    pub prompt_id: String,
    pub thinking_solution_lengths: Vec<usize>,
    pub budget: f64,
    pub used_fallback: bool,
}

/// Real-valued, never rounded: `omega * mean(lengths)`, or `l_empty` when
/// `lengths` is empty.
pub fn compute_budget(solution_lengths: &[usize], params: &BudgetParams) -> BudgetContext {
    budget_for("", solution_lengths.to_vec(), params)
}

pub fn budget_for(prompt_id: &str, solution_lengths: Vec<usize>, params: &BudgetParams) -> BudgetContext {
    let (budget, used_fallback) = if solution_lengths.is_empty() {
        (params.l_empty, true)
    } else {
        // integer sum is exact, so the only rounding is the final division
        let sum: u64 = solution_lengths.iter().map(|&l| l as u64).sum();
        (params.omega * (sum as f64 / solution_lengths.len() as f64), false)
    };
    BudgetContext {
        prompt_id: prompt_id.to_string(),
        thinking_solution_lengths: solution_lengths,
        budget,
        used_fallback,
    }
}

/// Splits a prompt's samples by mode and derives its budget from the
/// thinking-mode solution lengths.
pub fn budget_from_responses<'a>(
    prompt_id: &str,
    responses: impl IntoIterator<Item = &'a Response>,
    params: &BudgetParams,
) -> Result<BudgetContext, ResponseError> {
    let mut lengths = Vec::new();
    for r in responses {
        if r.mode()? == Mode::Thinking {
            // truncated before its terminator: no solution component to measure
            match r.solution_length() {
                Ok(h) => lengths.push(h),
                Err(ResponseError::NoThinkClose) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(budget_for(prompt_id, lengths, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "T_correct")]
    ThinkingCorrect,
    #[serde(rename = "T_wrong")]
    ThinkingWrong,
    #[serde(rename = "N_correct_within")]
    NonThinkingCorrect,
    #[serde(rename = "N_wrong_within")]
    NonThinkingWrong,
    #[serde(rename = "N_over_budget")]
    NonThinkingOverBudget,
}

impl Branch {
    pub fn value(self) -> f64 {
        match self {
            Branch::ThinkingCorrect => 1.0,
            Branch::ThinkingWrong => 0.0,
            Branch::NonThinkingCorrect => 2.0,
            Branch::NonThinkingWrong => -1.0,
            Branch::NonThinkingOverBudget => -2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::ThinkingCorrect => "T_correct",
            Branch::ThinkingWrong => "T_wrong",
            Branch::NonThinkingCorrect => "N_correct_within",
            Branch::NonThinkingWrong => "N_wrong_within",
            Branch::NonThinkingOverBudget => "N_over_budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: f64,
    pub branch: Branch,
    pub mode: Mode,
    pub correct: bool,
    pub length: usize,
    /// Budget the length was compared against; absent for thinking-mode and
    /// naive rewards.
    pub budget_used: Option<f64>,
}

impl RewardOutcome {
    fn from_branch(branch: Branch, mode: Mode, correct: bool, length: usize, budget_used: Option<f64>) -> Self {
        Self { value: branch.value(), branch, mode, correct, length, budget_used }
    }
}

pub fn reward_thinking(correct: bool) -> RewardOutcome {
    let branch = if correct { Branch::ThinkingCorrect } else { Branch::ThinkingWrong };
    RewardOutcome::from_branch(branch, Mode::Thinking, correct, 0, None)
}

/// `length <= budget` is within budget; over budget scores -2 whatever the
/// answer.
pub fn reward_nonthinking(correct: bool, length: usize, budget: f64) -> RewardOutcome {
    let branch = if (length as f64) > budget {
        Branch::NonThinkingOverBudget
    } else if correct {
        Branch::NonThinkingCorrect
    } else {
        Branch::NonThinkingWrong
    };
    RewardOutcome::from_branch(branch, Mode::NonThinking, correct, length, Some(budget))
}

pub fn reward_tnt(response: &Response, correct: bool, ctx: &BudgetContext) -> Result<RewardOutcome, ResponseError> {
    let length = response.total_length();
    Ok(match response.mode()? {
        Mode::Thinking => RewardOutcome { length, ..reward_thinking(correct) },
        Mode::NonThinking => reward_nonthinking(correct, length, ctx.budget),
    })
}

/// Mode-preference reward with no length term.
pub fn reward_naive(response: &Response, correct: bool) -> Result<RewardOutcome, ResponseError> {
    let length = response.total_length();
    Ok(match response.mode()? {
        Mode::Thinking => RewardOutcome { length, ..reward_thinking(correct) },
        Mode::NonThinking => {
            let branch = if correct { Branch::NonThinkingCorrect } else { Branch::NonThinkingWrong };
            RewardOutcome::from_branch(branch, Mode::NonThinking, correct, length, None)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Tnt,
    Naive,
}

impl RewardMode {
    pub fn assign(self, response: &Response, correct: bool, ctx: &BudgetContext) -> Result<RewardOutcome, ResponseError> {
        match self {
            RewardMode::Tnt => reward_tnt(response, correct, ctx),
            RewardMode::Naive => reward_naive(response, correct),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Tnt => "tnt",
            RewardMode::Naive => "naive",
        }
    }
}
