//! A toy hybrid reasoning model and the task environment it is trained in.
//!
//! The policy is a finite state machine with one binary decision per state
//! and difficulty bucket:
//!
//! ```text
//! start ──close──▶ post_close ──hack (verb)──▶ thinking
//!   │                  ▲  │                    │  ▲
//!   └──think filler────┼──┼────────────────────┘  │ continue
//!                      └──┼─────── close ─────────┘
//!                         └──solution filler──▶ solution ──continue──▶ solution
//!                                                  └──answer (environment-drawn)
//! ```
//!
//! Each decision is a two-way softmax over `[logit, 0]`. Whether the final
//! answer is right is drawn by the environment with a probability that grows
//! with the number of thinking tokens emitted anywhere in the response, so a
//! response that opens with `</think>` and then thinks anyway gets the
//! accuracy of a thinking response.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{Mode, Response, SpecialTokens, TokenId, Vocab, THINK_CLOSE, THINK_OPEN};
use crate::rng;

pub const NUM_BUCKETS: usize = 3;
pub const NUM_DECISIONS: usize = 4;
pub const NUM_PARAMS: usize = NUM_BUCKETS * NUM_DECISIONS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrmError {
    #[error("token {token} at position {position} is not a legal move of the policy state machine")]
    IllegalToken { position: usize, token: TokenId },
    #[error("invalid task spec: {0}")]
    InvalidTaskSpec(String),
    #[error("non-finite logit for {decision:?}/{bucket:?}")]
    NonFiniteLogit { decision: Decision, bucket: Bucket },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Easy,
    Medium,
    Hard,
}

impl Bucket {
    pub const ALL: [Bucket; NUM_BUCKETS] = [Bucket::Easy, Bucket::Medium, Bucket::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Thirds of the unit interval.
    pub fn from_difficulty(d: f64) -> Bucket {
        if d < 1.0 / 3.0 {
            Bucket::Easy
        } else if d < 2.0 / 3.0 {
            Bucket::Medium
        } else {
            Bucket::Hard
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Medium => "medium",
            Bucket::Hard => "hard",
        }
    }
}

/// Binary decision points of the state machine. The first option of each
/// pair is the one whose probability is `sigmoid(logit)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// `</think>` first (non-thinking) vs. a thinking filler.
    FirstToken,
    /// Another thinking filler vs. `</think>`.
    ThinkContinue,
    /// A thinking verb that reopens thinking vs. a solution filler.
    PostClose,
    /// Another solution filler vs. the answer.
    SolutionContinue,
}

impl Decision {
    pub const ALL: [Decision; NUM_DECISIONS] =
        [Decision::FirstToken, Decision::ThinkContinue, Decision::PostClose, Decision::SolutionContinue];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub decision: Decision,
    /// True when the `sigmoid(logit)` option was taken.
    pub first_option: bool,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-probability of an option under logits `[z, 0]`.
pub fn choice_logprob(z: f64, first_option: bool) -> f64 {
    if first_option {
        -softplus(-z)
    } else {
        -softplus(z)
    }
}

/// Derivative of [`choice_logprob`] with respect to `z`.
pub fn choice_score(z: f64, first_option: bool) -> f64 {
    if first_option {
        sigmoid(-z)
    } else {
        -sigmoid(z)
    }
}

/// One logit per decision and bucket. Also used as the gradient type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Logits {
    pub first_token: [f64; NUM_BUCKETS],
    pub think_continue: [f64; NUM_BUCKETS],
    pub post_close: [f64; NUM_BUCKETS],
    pub solution_continue: [f64; NUM_BUCKETS],
}

impl Logits {
    /// Starting point for training runs: both modes equally likely, the
    /// post-close choice a coin flip, and thinking runs averaging about a
    /// dozen tokens before closing.
    pub fn initial() -> Self {
        Self::uniform(0.0, 2.5, 0.0, 0.0)
    }

    pub fn uniform(first_token: f64, think_continue: f64, post_close: f64, solution_continue: f64) -> Self {
        Self {
            first_token: [first_token; NUM_BUCKETS],
            think_continue: [think_continue; NUM_BUCKETS],
            post_close: [post_close; NUM_BUCKETS],
            solution_continue: [solution_continue; NUM_BUCKETS],
        }
    }

    pub fn row(&self, decision: Decision) -> &[f64; NUM_BUCKETS] {
        match decision {
            Decision::FirstToken => &self.first_token,
            Decision::ThinkContinue => &self.think_continue,
            Decision::PostClose => &self.post_close,
            Decision::SolutionContinue => &self.solution_continue,
        }
    }

    pub fn row_mut(&mut self, decision: Decision) -> &mut [f64; NUM_BUCKETS] {
        match decision {
            Decision::FirstToken => &mut self.first_token,
            Decision::ThinkContinue => &mut self.think_continue,
            Decision::PostClose => &mut self.post_close,
            Decision::SolutionContinue => &mut self.solution_continue,
        }
    }

    pub fn get(&self, decision: Decision, bucket: Bucket) -> f64 {
        self.row(decision)[bucket.index()]
    }

    pub fn get_mut(&mut self, decision: Decision, bucket: Bucket) -> &mut f64 {
        &mut self.row_mut(decision)[bucket.index()]
    }

    /// Decision-major flattening.
    pub fn to_flat(&self) -> [f64; NUM_PARAMS] {
        let mut out = [0.0; NUM_PARAMS];
        for (d, decision) in Decision::ALL.iter().enumerate() {
            out[d * NUM_BUCKETS..(d + 1) * NUM_BUCKETS].copy_from_slice(self.row(*decision));
        }
        out
    }

    pub fn from_flat(flat: &[f64; NUM_PARAMS]) -> Self {
        let mut out = Self::default();
        for (d, decision) in Decision::ALL.iter().enumerate() {
            out.row_mut(*decision).copy_from_slice(&flat[d * NUM_BUCKETS..(d + 1) * NUM_BUCKETS]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<(Decision, Bucket)> {
        Decision::ALL
            .iter()
            .flat_map(|&d| Bucket::ALL.iter().map(move |&b| (d, b)))
            .find(|&(d, b)| !self.get(d, b).is_finite())
    }
}

/// Trainable parameters of the toy policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySnapshot {
    pub logits: Logits,
    pub version: u64,
}

impl PolicySnapshot {
    pub fn new(logits: Logits) -> Result<Self, LrmError> {
        if let Some((decision, bucket)) = logits.first_non_finite() {
            return Err(LrmError::NonFiniteLogit { decision, bucket });
        }
        Ok(Self { logits, version: 0 })
    }

    pub fn initial() -> Self {
        Self { logits: Logits::initial(), version: 0 }
    }

    pub fn logit(&self, decision: Decision, bucket: Bucket) -> f64 {
        self.logits.get(decision, bucket)
    }

    pub fn prob_first_option(&self, decision: Decision, bucket: Bucket) -> f64 {
        sigmoid(self.logit(decision, bucket))
    }

    pub fn choice_logprob(&self, choice: Choice, bucket: Bucket) -> f64 {
        choice_logprob(self.logit(choice.decision, bucket), choice.first_option)
    }

    /// Probability of opening with `</think>` and then emitting a thinking
    /// verb at the first post-close decision.
    pub fn hack_template_mass(&self, bucket: Bucket) -> f64 {
        self.prob_first_option(Decision::FirstToken, bucket) * self.prob_first_option(Decision::PostClose, bucket)
    }

    /// Per-token log-probabilities of a response under this policy. The
    /// answer token carries the probability of choosing to answer; which
    /// answer comes out is environment-drawn and adds nothing.
    pub fn sequence_logprobs(&self, tokens: &SimTokens, response: &[TokenId], bucket: Bucket) -> Result<Vec<f64>, LrmError> {
        Ok(tokens
            .parse_choices(response)?
            .into_iter()
            .map(|c| self.choice_logprob(c, bucket))
            .collect())
    }
}

/// Token ids with a role in the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTokens {
    pub think_open: TokenId,
    pub think_close: TokenId,
    pub ellipsis: TokenId,
    pub think_filler: TokenId,
    pub solution_filler: TokenId,
    /// The verb a hack opens with.
    pub hack_verb: TokenId,
    pub verbs: BTreeSet<TokenId>,
    pub answers: Vec<TokenId>,
    pub query: Vec<TokenId>,
}

impl SimTokens {
    /// Replays the state machine over `response`, returning the decision
    /// behind every token.
    pub fn parse_choices(&self, response: &[TokenId]) -> Result<Vec<Choice>, LrmError> {
        #[derive(Clone, Copy)]
        enum State {
            Start,
            Thinking,
            PostClose,
            Solution,
            Done,
        }
        let mut state = State::Start;
        let mut out = Vec::with_capacity(response.len());
        for (position, &t) in response.iter().enumerate() {
            let illegal = LrmError::IllegalToken { position, token: t };
            let (decision, first_option, next) = match state {
                State::Start if t == self.think_close => (Decision::FirstToken, true, State::PostClose),
                State::Start if t == self.think_filler => (Decision::FirstToken, false, State::Thinking),
                State::Thinking if t == self.think_filler => (Decision::ThinkContinue, true, State::Thinking),
                State::Thinking if t == self.think_close => (Decision::ThinkContinue, false, State::PostClose),
                State::PostClose if self.verbs.contains(&t) => (Decision::PostClose, true, State::Thinking),
                State::PostClose if t == self.solution_filler => (Decision::PostClose, false, State::Solution),
                State::Solution if t == self.solution_filler => (Decision::SolutionContinue, true, State::Solution),
                State::Solution if self.answers.contains(&t) => (Decision::SolutionContinue, false, State::Done),
                _ => return Err(illegal),
            };
            out.push(Choice { decision, first_option });
            state = next;
        }
        Ok(out)
    }

    pub fn is_thinking_token(&self, t: TokenId) -> bool {
        t == self.think_filler || self.verbs.contains(&t)
    }
}

/// Vocabulary and role table used by the simulator.
pub fn sim_vocab() -> (Vocab, SimTokens) {
    let mut entries: Vec<String> = [THINK_OPEN, THINK_CLOSE, "...", "step", "sol", "Wait", "Alternatively", "Double-Check"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let answers: Vec<String> = (0..10).map(|i| format!("A{i}")).collect();
    let queries: Vec<String> = (0..8).map(|i| format!("q{i}")).collect();
    entries.extend(answers.iter().cloned());
    entries.extend(queries.iter().cloned());
    let special = SpecialTokens {
        think_open: THINK_OPEN.into(),
        think_close: THINK_CLOSE.into(),
        answers,
        verbs: vec!["Wait".into(), "Alternatively".into(), "Double-Check".into()],
    };
    let vocab = Vocab::new(entries, &special).expect("simulator vocabulary is well formed");
    let id = |s: &str| vocab.id(s).unwrap();
    let tokens = SimTokens {
        think_open: vocab.think_open(),
        think_close: vocab.think_close(),
        ellipsis: id("..."),
        think_filler: id("step"),
        solution_filler: id("sol"),
        hack_verb: id("Wait"),
        verbs: vocab.verbs().iter().copied().collect(),
        answers: vocab.answers().to_vec(),
        query: queries.iter().map(|q| id(q)).collect(),
    };
    (vocab, tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketParams {
    /// Probability of a correct answer with no thinking at all.
    pub base_correct: f64,
    /// Extra probability earned by `think_cap` thinking tokens.
    pub gain: f64,
}

/// Environment constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default = "TaskSpec::default_easy")]
    pub easy: BucketParams,
    #[serde(default = "TaskSpec::default_medium")]
    pub medium: BucketParams,
    #[serde(default = "TaskSpec::default_hard")]
    pub hard: BucketParams,
    #[serde(default = "TaskSpec::default_think_cap")]
    pub think_cap: usize,
    /// Generation truncation length; the thinking-mode budget.
    #[serde(default = "TaskSpec::default_max_len")]
    pub max_len: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            easy: Self::default_easy(),
            medium: Self::default_medium(),
            hard: Self::default_hard(),
            think_cap: Self::default_think_cap(),
            max_len: Self::default_max_len(),
        }
    }
}

impl TaskSpec {
    fn default_easy() -> BucketParams {
        BucketParams { base_correct: 0.9, gain: 0.05 }
    }
    fn default_medium() -> BucketParams {
        BucketParams { base_correct: 0.5, gain: 0.4 }
    }
    fn default_hard() -> BucketParams {
        BucketParams { base_correct: 0.1, gain: 0.8 }
    }
    fn default_think_cap() -> usize {
        16
    }
    fn default_max_len() -> usize {
        64
    }

    pub fn bucket(&self, bucket: Bucket) -> &BucketParams {
        match bucket {
            Bucket::Easy => &self.easy,
            Bucket::Medium => &self.medium,
            Bucket::Hard => &self.hard,
        }
    }

    pub fn validate(&self) -> Result<(), LrmError> {
        for b in Bucket::ALL {
            let p = self.bucket(b);
            let ok = (0.0..=1.0).contains(&p.base_correct) && p.gain >= 0.0 && p.base_correct + p.gain <= 1.0 + 1e-12;
            if !ok {
                return Err(LrmError::InvalidTaskSpec(format!(
                    "{}: need 0 <= base_correct, 0 <= gain, base_correct + gain <= 1 (got {} / {})",
                    b.name(),
                    p.base_correct,
                    p.gain
                )));
            }
        }
        if !(self.easy.base_correct > self.medium.base_correct && self.medium.base_correct > self.hard.base_correct) {
            return Err(LrmError::InvalidTaskSpec("base_correct must strictly decrease from easy to hard".into()));
        }
        if self.think_cap == 0 {
            return Err(LrmError::InvalidTaskSpec("think_cap must be >= 1".into()));
        }
        if self.max_len < 2 {
            return Err(LrmError::InvalidTaskSpec("max_len must be >= 2".into()));
        }
        Ok(())
    }

    /// `base + gain * min(n, cap) / cap`.
    pub fn correct_probability(&self, bucket: Bucket, effective_think_tokens: usize) -> f64 {
        let p = self.bucket(bucket);
        let frac = effective_think_tokens.min(self.think_cap) as f64 / self.think_cap as f64;
        (p.base_correct + p.gain * frac).min(1.0)
    }

    /// Draws the answer token: the golden answer with the bucket's
    /// correctness probability, otherwise a uniformly chosen wrong one.
    pub fn draw_answer<R: Rng>(
        &self,
        tokens: &SimTokens,
        bucket: Bucket,
        golden: TokenId,
        effective_think_tokens: usize,
        rng: &mut R,
    ) -> TokenId {
        let p = self.correct_probability(bucket, effective_think_tokens);
        if rng.random::<f64>() < p {
            return golden;
        }
        let wrong: Vec<TokenId> = tokens.answers.iter().copied().filter(|&a| a != golden).collect();
        wrong[rng.random_range(0..wrong.len())]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u32,
    pub query_tokens: Vec<TokenId>,
    pub ellipsis_suffix: bool,
    pub golden_answer: TokenId,
    pub difficulty: f64,
}

impl Prompt {
    pub fn bucket(&self) -> Bucket {
        Bucket::from_difficulty(self.difficulty)
    }

    pub fn key(&self) -> String {
        format!("p{}", self.id)
    }

    /// Prompt-side tokens. With the ellipsis suffix the prompt ends with
    /// `<think>` followed by the padding, so the policy's first token decides
    /// the mode.
    pub fn serialize(&self, tokens: &SimTokens) -> Vec<TokenId> {
        let mut out = self.query_tokens.clone();
        if self.ellipsis_suffix {
            out.push(tokens.think_open);
            out.push(tokens.ellipsis);
        }
        out
    }
}

/// Task-set file record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: u32,
    pub bucket: Bucket,
    pub golden_answer: String,
    pub difficulty: f64,
    pub query: Vec<String>,
    #[serde(default = "default_true")]
    pub ellipsis_suffix: bool,
}

fn default_true() -> bool {
    true
}

impl TaskRecord {
    pub fn from_prompt(p: &Prompt, vocab: &Vocab) -> Self {
        Self {
            id: p.id,
            bucket: p.bucket(),
            golden_answer: vocab.token(p.golden_answer).to_string(),
            difficulty: p.difficulty,
            query: vocab.decode(&p.query_tokens),
            ellipsis_suffix: p.ellipsis_suffix,
        }
    }

    pub fn to_prompt(&self, vocab: &Vocab) -> Result<Prompt, LrmError> {
        let lookup = |s: &str| {
            vocab.id(s).ok_or_else(|| LrmError::InvalidTaskSpec(format!("task {}: unknown token {s:?}", self.id)))
        };
        let golden = lookup(&self.golden_answer)?;
        if !vocab.answers().contains(&golden) {
            return Err(LrmError::InvalidTaskSpec(format!("task {}: {:?} is not an answer token", self.id, self.golden_answer)));
        }
        if Bucket::from_difficulty(self.difficulty) != self.bucket {
            return Err(LrmError::InvalidTaskSpec(format!(
                "task {}: difficulty {} does not fall in bucket {}",
                self.id,
                self.difficulty,
                self.bucket.name()
            )));
        }
        Ok(Prompt {
            id: self.id,
            query_tokens: self.query.iter().map(|q| lookup(q)).collect::<Result<_, _>>()?,
            ellipsis_suffix: self.ellipsis_suffix,
            golden_answer: golden,
            difficulty: self.difficulty,
        })
    }
}

/// Deterministic prompt set: `counts[b]` prompts for each bucket, in bucket
/// order, with ids `0..total`.
pub fn make_taskset(seed: u64, counts: [usize; NUM_BUCKETS], tokens: &SimTokens) -> Vec<Prompt> {
    let mut rng = rng::substream(seed, rng::TASKS, &[]);
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (b, &count) in counts.iter().enumerate() {
        let lo = b as f64 / 3.0;
        for _ in 0..count {
            let mut difficulty = lo + rng.random::<f64>() / 3.0;
            // keep float rounding from pushing a draw into the next bucket
            while Bucket::from_difficulty(difficulty).index() != b {
                difficulty = lo + rng.random::<f64>() / 3.0;
            }
            let len = rng.random_range(3..=8);
            let query_tokens = (0..len).map(|_| tokens.query[rng.random_range(0..tokens.query.len())]).collect();
            let golden_answer = tokens.answers[rng.random_range(0..tokens.answers.len())];
            out.push(Prompt {
                id: out.len() as u32,
                query_tokens,
                ellipsis_suffix: true,
                golden_answer,
                difficulty,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: u32,
    pub bucket: Bucket,
    pub response: Response,
    pub logprobs: Vec<f64>,
    /// Thinking fillers and verbs anywhere in the response.
    pub effective_think_tokens: usize,
    pub answer: Option<TokenId>,
    pub truncated: bool,
    pub correct: bool,
    pub mode: Mode,
}

/// Samples one response. `rng` drives the policy's decisions and `env_rng`
/// the environment's answer draw.
pub fn sample_response<R: Rng, E: Rng>(
    policy: &PolicySnapshot,
    prompt: &Prompt,
    spec: &TaskSpec,
    tokens: &SimTokens,
    rng: &mut R,
    env_rng: &mut E,
) -> Trajectory {
    #[derive(Clone, Copy)]
    enum State {
        Start,
        Thinking,
        PostClose,
        Solution,
    }
    let bucket = prompt.bucket();
    let mut out = Vec::new();
    let mut logprobs = Vec::new();
    let mut think = 0usize;
    let mut answer = None;
    let mut state = State::Start;
    let mut decide = |decision: Decision, logprobs: &mut Vec<f64>| {
        let z = policy.logit(decision, bucket);
        let first = rng.random::<f64>() < sigmoid(z);
        logprobs.push(choice_logprob(z, first));
        first
    };

    while out.len() < spec.max_len {
        state = match state {
            State::Start => {
                if decide(Decision::FirstToken, &mut logprobs) {
                    out.push(tokens.think_close);
                    State::PostClose
                } else {
                    out.push(tokens.think_filler);
                    think += 1;
                    State::Thinking
                }
            }
            State::Thinking => {
                if decide(Decision::ThinkContinue, &mut logprobs) {
                    out.push(tokens.think_filler);
                    think += 1;
                    State::Thinking
                } else {
                    out.push(tokens.think_close);
                    State::PostClose
                }
            }
            State::PostClose => {
                if decide(Decision::PostClose, &mut logprobs) {
                    out.push(tokens.hack_verb);
                    think += 1;
                    State::Thinking
                } else {
                    out.push(tokens.solution_filler);
                    State::Solution
                }
            }
            State::Solution => {
                if decide(Decision::SolutionContinue, &mut logprobs) {
                    out.push(tokens.solution_filler);
                    State::Solution
                } else {
                    let a = spec.draw_answer(tokens, bucket, prompt.golden_answer, think, env_rng);
                    out.push(a);
                    answer = Some(a);
                    break;
                }
            }
        };
    }

    let response = Response::new(out, tokens.think_close)
        .with_logprobs(logprobs.clone())
        .expect("sampled log-probabilities are valid");
    let mode = response.mode().expect("max_len >= 2 so responses are never empty");
    Trajectory {
        prompt_id: prompt.id,
        bucket,
        truncated: answer.is_none(),
        correct: answer == Some(prompt.golden_answer),
        response,
        logprobs,
        effective_think_tokens: think,
        answer,
        mode,
    }
}

/// `r(y, y*)`: true iff the answer token is the golden answer.
pub fn answer_oracle(trajectory: &Trajectory, prompt: &Prompt) -> bool {
    trajectory.answer == Some(prompt.golden_answer)
}
