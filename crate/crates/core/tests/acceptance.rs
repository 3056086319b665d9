//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Tolerances and time limits are pinned below.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tnt_core::analysis::{build_report, hacking_flags, ingest_corpus_path, IngestOptions};
use tnt_core::grpo::{objective_at, objective_gradient, policy_logprobs, Group};
use tnt_core::lrm::{make_taskset, sample_response, sim_vocab, Bucket, Logits, SimTokens, NUM_PARAMS};
use tnt_core::response::{WhitespaceTokenizer, DEFAULT_LEXICON};
use tnt_core::reward::{budget_from_responses, reward_naive, reward_tnt, Branch};
use tnt_core::trainer::{evaluate, Checkpoint, EvalOptions, StepLog, TrainOutput, CHECKPOINT_FORMAT_VERSION};
use tnt_core::*;

const BUDGET_TOL: f64 = 1e-12;
const TE_TOL: f64 = 0.005;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const ADV_TOL: f64 = 1e-9;
const ABLATION_SEEDS: [u64; 5] = [11, 22, 33, 44, 55];
const ABLATION_STEPS: usize = 2000;
const FINAL_WINDOW: usize = 200;
const TOKEN_RATIO_MIN: f64 = 2.0;
const NAIVE_VERB_MIN: f64 = 0.50;
const TNT_VERB_MAX: f64 = 0.10;
const TNT_OVER_BUDGET_MAX: f64 = 0.05;
const TASKS_PER_BUCKET: usize = 100;
const EVAL_SAMPLES: usize = 8;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

// ---------------------------------------------------------------- rewards

fn response(tokens: &[TokenId], close: TokenId) -> Response {
    Response::new(tokens.to_vec(), close)
}

fn reward_table() -> Outcome {
    let (_, t) = sim_vocab();
    let close = t.think_close;
    let think_resp = |n: usize| {
        let mut v = vec![t.think_filler; n];
        v.extend([close, t.solution_filler, t.answers[0]]);
        response(&v, close)
    };
    let nothink_resp = |n: usize| {
        let mut v = vec![close];
        v.extend(std::iter::repeat_n(t.solution_filler, n - 2));
        v.push(t.answers[0]);
        response(&v, close)
    };
    let ctx = compute_budget(&[5, 5], &BudgetParams::default()); // budget 10
    let mut failures = Vec::new();
    let mut expect = |label: &str, got: f64, branch: Branch, want: f64, want_branch: Branch| {
        if got != want || branch != want_branch {
            failures.push(format!("{label}: got {got} ({branch:?}), want {want} ({want_branch:?})"));
        }
    };
    // TNT: thinking branches ignore length; non-thinking branches test the budget.
    for (label, r, correct, want, br) in [
        ("T correct short", think_resp(2), true, 1.0, Branch::ThinkingCorrect),
        ("T correct long", think_resp(40), true, 1.0, Branch::ThinkingCorrect),
        ("T wrong short", think_resp(2), false, 0.0, Branch::ThinkingWrong),
        ("T wrong long", think_resp(40), false, 0.0, Branch::ThinkingWrong),
        ("N correct within", nothink_resp(6), true, 2.0, Branch::NonThinkingCorrect),
        ("N wrong within", nothink_resp(6), false, -1.0, Branch::NonThinkingWrong),
        ("N over budget", nothink_resp(11), true, -2.0, Branch::NonThinkingOverBudget),
        ("N over budget wrong", nothink_resp(11), false, -2.0, Branch::NonThinkingOverBudget),
        ("N at boundary", nothink_resp(10), true, 2.0, Branch::NonThinkingCorrect),
    ] {
        let o = reward_tnt(&r, correct, &ctx).map_err(|e| e.to_string())?;
        expect(&format!("tnt {label}"), o.value, o.branch, want, br);
    }
    for (label, r, correct, want, br) in [
        ("T correct", think_resp(3), true, 1.0, Branch::ThinkingCorrect),
        ("T wrong", think_resp(3), false, 0.0, Branch::ThinkingWrong),
        ("N correct long", nothink_resp(60), true, 2.0, Branch::NonThinkingCorrect),
        ("N wrong long", nothink_resp(60), false, -1.0, Branch::NonThinkingWrong),
    ] {
        let o = reward_naive(&r, correct).map_err(|e| e.to_string())?;
        expect(&format!("naive {label}"), o.value, o.branch, want, br);
    }
    check(failures.is_empty(), "13 table cells exact".into(), failures.join("; "))
}

fn budget_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let defaults = BudgetParams::default();
    if defaults.omega != 2.0 || defaults.l_empty != 1000.0 {
        return Err(format!("defaults omega={} fallback={}", defaults.omega, defaults.l_empty));
    }
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.random_range(1..=16);
        let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(0..5000)).collect();
        let params = if i % 2 == 0 { defaults } else { BudgetParams::new(rng.random_range(1.0..4.0), 1000.0).unwrap() };
        let ctx = compute_budget(&lengths, &params);
        let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let want = params.omega * mean;
        let err = (ctx.budget - want).abs() / want.abs().max(1.0);
        worst = worst.max(err);
        if ctx.used_fallback {
            return Err(format!("non-empty set {lengths:?} used the fallback"));
        }
    }
    let empty = compute_budget(&[], &defaults);
    check(
        worst <= BUDGET_TOL && empty.budget == 1000.0 && empty.used_fallback,
        format!("1000 sets, worst relative error {worst:.1e}; empty -> {}", empty.budget),
        format!("worst relative error {worst:.3e}, empty -> {}", empty.budget),
    )
}

fn te_reproduction() -> Outcome {
    let cases = [(41.0, 5893.0, 0.53), (37.0, 12736.0, 0.33), (38.1, 5849.0, 0.50), (36.1, 5104.0, 0.50)];
    let mut lines = Vec::new();
    let mut ok = true;
    for (a, l, printed) in cases {
        let te = token_efficiency(a, l).map_err(|e| e.to_string())?;
        let good = (te - printed).abs() <= TE_TOL;
        ok &= good;
        lines.push(format!("({a}, {l}) -> {te:.4} vs {printed}{}", if good { "" } else { " OUT OF TOLERANCE" }));
    }
    check(ok, lines.join(", "), lines.join(", "))
}

// ---------------------------------------------------------------- GRPO

fn random_logits(rng: &mut ChaCha8Rng, scale: f64) -> Logits {
    let mut flat = [0.0; NUM_PARAMS];
    for x in &mut flat {
        *x = rng.random_range(-scale..scale);
    }
    Logits::from_flat(&flat)
}

fn perturbed(policy: &PolicySnapshot, index: usize, delta: f64) -> PolicySnapshot {
    let mut flat = policy.logits.to_flat();
    flat[index] += delta;
    PolicySnapshot::new(Logits::from_flat(&flat)).unwrap()
}

/// Builds a batch sampled from `old`, with random non-degenerate rewards.
fn random_batch(rng: &mut ChaCha8Rng, old: &PolicySnapshot, spec: &TaskSpec, t: &SimTokens) -> Vec<Group> {
    let tasks = make_taskset(rng.random(), [1, 1, 1], t);
    let n_groups = rng.random_range(1..=3);
    (0..n_groups)
        .map(|g| {
            let prompt = &tasks[rng.random_range(0..tasks.len())];
            let k = rng.random_range(2..=8);
            let mut responses = Vec::new();
            let mut old_lp = Vec::new();
            for _ in 0..k {
                let mut env = ChaCha8Rng::seed_from_u64(rng.random());
                let tr = sample_response(old, prompt, spec, t, rng, &mut env);
                old_lp.push(tr.logprobs.clone());
                responses.push(tr.response);
            }
            let mut rewards: Vec<f64> = (0..k).map(|_| [-2.0, -1.0, 0.0, 1.0, 2.0][rng.random_range(0..5)]).collect();
            if rewards.iter().all(|&r| r == rewards[0]) {
                rewards[0] += 1.0;
            }
            Group::new(format!("g{g}"), prompt.bucket(), responses, rewards, old_lp).unwrap()
        })
        .collect()
}

/// True when some token ratio sits close enough to a clip edge that the
/// finite-difference stencil could straddle the kink.
fn near_clip_edge(groups: &[Group], policy: &PolicySnapshot, t: &SimTokens, eps: f64) -> bool {
    let new = policy_logprobs(groups, policy, t).unwrap();
    groups.iter().zip(&new).any(|(g, ng)| {
        g.old_logprobs.iter().zip(ng).any(|(old, new)| {
            old.iter().zip(new).any(|(o, n)| {
                let r = (n - o).exp();
                (r - (1.0 + eps)).abs() < 1e-3 || (r - (1.0 - eps)).abs() < 1e-3
            })
        })
    })
}

fn gradient_check() -> Outcome {
    let (_, t) = sim_vocab();
    let spec = TaskSpec { max_len: 8, ..TaskSpec::default() };
    let clip = ClipParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut clipped_terms = 0usize;
    while done < 200 {
        let old = PolicySnapshot::new(random_logits(&mut rng, 2.0)).unwrap();
        let groups = random_batch(&mut rng, &old, &spec, &t);
        let mut flat = old.logits.to_flat();
        for x in &mut flat {
            *x += rng.random_range(-0.4..0.4);
        }
        let current = PolicySnapshot::new(Logits::from_flat(&flat)).unwrap();
        if near_clip_edge(&groups, &current, &t, clip.epsilon) {
            continue;
        }
        let new = policy_logprobs(&groups, &current, &t).unwrap();
        clipped_terms += groups
            .iter()
            .zip(&new)
            .flat_map(|(g, ng)| g.old_logprobs.iter().zip(ng))
            .flat_map(|(o, n)| o.iter().zip(n))
            .filter(|(o, n)| ((*n - *o).exp() - 1.0).abs() > clip.epsilon)
            .count();
        let analytic = objective_gradient(&groups, &current, &t, &clip).map_err(|e| e.to_string())?.to_flat();
        let mut numeric = [0.0; NUM_PARAMS];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let up = objective_at(&groups, &perturbed(&current, i, FD_STEP), &t, &clip).unwrap();
            let down = objective_at(&groups, &perturbed(&current, i, -FD_STEP), &t, &clip).unwrap();
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        worst = worst.max(rel);
        done += 1;
    }
    check(
        worst < FD_REL_TOL,
        format!("200 instances, worst relative error {worst:.2e}, {clipped_terms} token terms past a clip edge"),
        format!("worst relative error {worst:.3e} >= {FD_REL_TOL:e}"),
    )
}

fn advantage_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut degenerate = 0;
    for i in 0..2000 {
        let k = rng.random_range(1..=16);
        let rewards: Vec<f64> = if i % 5 == 0 {
            vec![rng.random_range(-2.0..2.0); k]
        } else if i % 2 == 0 {
            (0..k).map(|_| [-2.0, -1.0, 0.0, 1.0, 2.0][rng.random_range(0..5)]).collect()
        } else {
            (0..k).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let adv = group_advantages(&rewards);
        if rewards.iter().all(|&r| r == rewards[0]) {
            degenerate += 1;
            if !adv.degenerate || adv.per_response.iter().any(|&a| a != 0.0) {
                return Err(format!("degenerate group {rewards:?} gave {:?}", adv.per_response));
            }
            continue;
        }
        let n = k as f64;
        let mean = adv.per_response.iter().sum::<f64>() / n;
        let var = adv.per_response.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        if mean.abs() > ADV_TOL || (var - 1.0).abs() > ADV_TOL {
            return Err(format!("{rewards:?}: mean {mean}, variance {var}"));
        }
        let shift = rng.random_range(-10.0..10.0);
        let scale = rng.random_range(0.1..10.0);
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        let adv2 = group_advantages(&moved);
        if adv.per_response.iter().zip(&adv2.per_response).any(|(a, b)| (a - b).abs() > ADV_TOL) {
            return Err(format!("{rewards:?} not invariant under x*{scale}+{shift}"));
        }
    }
    Ok(format!("2000 groups ({degenerate} degenerate), tolerance {ADV_TOL:e}"))
}

// ---------------------------------------------------------------- ablation

struct Run {
    seed: u64,
    output: TrainOutput,
}

#[derive(Default)]
struct Window {
    nonthinking: usize,
    nonthinking_tokens: usize,
    verbs: usize,
    over_budget: usize,
}

impl Window {
    fn of(logs: &[StepLog]) -> Self {
        let mut w = Window::default();
        for l in &logs[logs.len() - FINAL_WINDOW..] {
            w.nonthinking += l.nonthinking_count;
            w.nonthinking_tokens += l.nonthinking_tokens;
            w.verbs += l.verb_count;
            w.over_budget += l.over_budget_count;
        }
        w
    }

    fn add(&mut self, o: &Window) {
        self.nonthinking += o.nonthinking;
        self.nonthinking_tokens += o.nonthinking_tokens;
        self.verbs += o.verbs;
        self.over_budget += o.over_budget;
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    fn mean_tokens(&self) -> f64 {
        Self::ratio(self.nonthinking_tokens, self.nonthinking)
    }

    fn verb_probability(&self) -> f64 {
        Self::ratio(self.verbs, self.nonthinking)
    }

    fn over_budget_rate(&self) -> f64 {
        Self::ratio(self.over_budget, self.nonthinking)
    }
}

fn train(mode: RewardMode, seed: u64, t: &SimTokens, spec: &TaskSpec) -> TrainOutput {
    let tasks = make_taskset(seed, [TASKS_PER_BUCKET; 3], t);
    let config = TrainConfig { reward_mode: mode, ..TrainConfig::new(ABLATION_STEPS, seed) };
    run_training(&config, trainer::SimContext { spec, tokens: t }, &tasks, &PolicySnapshot::initial()).expect("training run")
}

fn hacking_ablation(naive: &[Run], tnt: &[Run]) -> Outcome {
    let mut pooled_naive = Window::default();
    let mut pooled_tnt = Window::default();
    let mut per_seed = Vec::new();
    for (n, t) in naive.iter().zip(tnt) {
        let wn = Window::of(&n.output.logs);
        let wt = Window::of(&t.output.logs);
        per_seed.push(format!(
            "    seed {}: naive tokens {:.2} verbs {:.3} | tnt tokens {:.2} verbs {:.3} over {:.3}",
            n.seed,
            wn.mean_tokens(),
            wn.verb_probability(),
            wt.mean_tokens(),
            wt.verb_probability(),
            wt.over_budget_rate()
        ));
        pooled_naive.add(&wn);
        pooled_tnt.add(&wt);
    }
    let ratio = pooled_naive.mean_tokens() / pooled_tnt.mean_tokens();
    let summary = format!(
        "token ratio {:.2} (>= {TOKEN_RATIO_MIN}), naive verbs {:.3} (>= {NAIVE_VERB_MIN}), tnt verbs {:.3} (<= {TNT_VERB_MAX}), tnt over-budget {:.4} (< {TNT_OVER_BUDGET_MAX})\n{}",
        ratio,
        pooled_naive.verb_probability(),
        pooled_tnt.verb_probability(),
        pooled_tnt.over_budget_rate(),
        per_seed.join("\n")
    );
    check(
        ratio >= TOKEN_RATIO_MIN
            && pooled_naive.verb_probability() >= NAIVE_VERB_MIN
            && pooled_tnt.verb_probability() <= TNT_VERB_MAX
            && pooled_tnt.over_budget_rate() < TNT_OVER_BUDGET_MAX,
        summary.clone(),
        summary,
    )
}

fn mode_selection(tnt: &[Run], t: &SimTokens, spec: &TaskSpec) -> Outcome {
    let (vocab, _) = sim_vocab();
    let words: Vec<String> = DEFAULT_LEXICON.iter().map(|w| w.to_string()).collect();
    let lexicon = vocab.lexicon_ids(&words);
    let mut lines = Vec::new();
    let mut ok = true;
    for run in tnt {
        let tasks = make_taskset(run.seed, [TASKS_PER_BUCKET; 3], t);
        let opts = EvalOptions {
            samples_per_task: EVAL_SAMPLES,
            seed: run.seed,
            lexicon: &lexicon,
            lexicon_words: &words,
            budget: BudgetParams::default(),
        };
        let report = evaluate(&run.output.policy, trainer::SimContext { spec, tokens: t }, &tasks, &opts);
        let easy = report.row(Bucket::Easy.name()).map(|r| r.nonthinking_ratio).unwrap_or(f64::NAN);
        let hard = report.row(Bucket::Hard.name()).map(|r| r.nonthinking_ratio).unwrap_or(f64::NAN);
        ok &= easy > hard;
        lines.push(format!("seed {} easy {easy:.1}% > hard {hard:.1}%", run.seed));
    }
    check(ok, lines.join(", "), lines.join(", "))
}

fn checkpoint_bytes(out: &TrainOutput) -> Vec<u8> {
    Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, step: out.logs.len(), policy: out.policy }.to_bytes()
}

fn determinism(naive: &[Run], tnt: &[Run], t: &SimTokens, spec: &TaskSpec) -> Outcome {
    let mut lines = Vec::new();
    for (mode, first) in [(RewardMode::Naive, &naive[0]), (RewardMode::Tnt, &tnt[0])] {
        let again = train(mode, first.seed, t, spec);
        let logs_a = serde_json::to_vec(&first.output.logs).unwrap();
        let logs_b = serde_json::to_vec(&again.logs).unwrap();
        if logs_a != logs_b {
            return Err(format!("{} seed {}: step logs differ", mode.name(), first.seed));
        }
        if checkpoint_bytes(&first.output) != checkpoint_bytes(&again) {
            return Err(format!("{} seed {}: final checkpoints differ", mode.name(), first.seed));
        }
        lines.push(format!("{} seed {}: {} log bytes identical", mode.name(), first.seed, logs_a.len()));
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- analyzer

fn analyzer_golden() -> Outcome {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut vocab = Vocab::base();
    let corpus = ingest_corpus_path(&dir.join("corpus100.jsonl"), &WhitespaceTokenizer, &mut vocab, &IngestOptions::default())
        .map_err(|e| e.to_string())?;
    let words: Vec<String> = DEFAULT_LEXICON.iter().map(|w| w.to_string()).collect();
    let lexicon = vocab.lexicon_ids(&words);
    let report = build_report(&corpus.samples(), &lexicon, &words, "whitespace", &BudgetParams::default());
    let csv = emit_report(&report, ReportFormat::Csv).map_err(|e| e.to_string())?;
    let golden = std::fs::read(dir.join("golden100.csv")).map_err(|e| e.to_string())?;
    if csv == golden {
        Ok(format!("{} records, {} rows, {} bytes identical", corpus.records.len(), report.rows.len(), csv.len()))
    } else {
        Err(format!("got:\n{}\nwant:\n{}", String::from_utf8_lossy(&csv), String::from_utf8_lossy(&golden)))
    }
}

fn flag_consistency() -> Outcome {
    let (_, t) = sim_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let alphabet = [t.think_filler, t.solution_filler, t.hack_verb, t.ellipsis, t.answers[0], t.think_close];
    let params = BudgetParams::default();
    let mut prompts: Vec<(String, Vec<Response>)> = Vec::new();
    let mut total = 0;
    while total < 10_000 {
        let k = rng.random_range(1..=8);
        let group: Vec<Response> = (0..k)
            .map(|_| {
                let len = rng.random_range(1..=40);
                let mut v: Vec<TokenId> = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
                if rng.random_bool(0.5) {
                    v[0] = t.think_close;
                }
                Response::new(v, t.think_close)
            })
            .collect();
        total += k;
        prompts.push((format!("p{}", prompts.len()), group));
    }
    let contexts: BTreeMap<String, _> = prompts
        .iter()
        .map(|(id, rs)| (id.clone(), budget_from_responses(id, rs.iter(), &params).unwrap()))
        .collect();
    let budgets: BTreeMap<String, f64> = contexts.iter().map(|(k, c)| (k.clone(), c.budget)).collect();
    let pairs: Vec<(&str, &Response)> = prompts.iter().flat_map(|(id, rs)| rs.iter().map(move |r| (id.as_str(), r))).collect();
    let flags = hacking_flags(pairs.iter().copied(), &budgets).map_err(|e| e.to_string())?;
    let mut flagged = 0;
    for ((id, r), flag) in pairs.iter().zip(&flags) {
        let correct = rng.random_bool(0.5);
        let o = reward_tnt(r, correct, &contexts[*id]).map_err(|e| e.to_string())?;
        if *flag {
            flagged += 1;
            if o.branch != Branch::NonThinkingOverBudget {
                return Err(format!("{id}: flagged but branch {:?}", o.branch));
            }
        } else if o.branch == Branch::NonThinkingOverBudget {
            return Err(format!("{id}: over-budget branch without a flag"));
        }
    }
    // the fallback path must be exercised as well
    let fallback = contexts.values().filter(|c| c.used_fallback).count();
    check(
        flagged > 0 && fallback > 0,
        format!("{total} responses, {flagged} flagged, {fallback} prompts on the fallback budget"),
        format!("degenerate sample: {flagged} flagged, {fallback} fallback prompts"),
    )
}

// ---------------------------------------------------------------- runner

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d} (took {elapsed:.1?}, limit {limit:?})")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            self.failed += 1;
        }
        println!("criterion {id:>2} {name:<28} {status} [{elapsed:.2?}] {detail}");
    }
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };
    let secs = Duration::from_secs;
    report.record(1, "reward table", secs(1), reward_table);
    report.record(2, "budget formula", secs(1), budget_formula);
    report.record(3, "token efficiency", secs(1), te_reproduction);
    report.record(4, "gradient check", secs(30), gradient_check);
    report.record(5, "advantage properties", secs(5), advantage_properties);

    let (_, t) = sim_vocab();
    let spec = TaskSpec::default();
    let start = Instant::now();
    let naive: Vec<Run> = ABLATION_SEEDS.iter().map(|&seed| Run { seed, output: train(RewardMode::Naive, seed, &t, &spec) }).collect();
    let tnt: Vec<Run> = ABLATION_SEEDS.iter().map(|&seed| Run { seed, output: train(RewardMode::Tnt, seed, &t, &spec) }).collect();
    let training = start.elapsed();
    report.record(6, "hacking suppression", secs(300).saturating_sub(training), || hacking_ablation(&naive, &tnt));
    report.record(7, "mode selection", secs(300).saturating_sub(training), || mode_selection(&tnt, &t, &spec));
    report.record(8, "analyzer golden csv", secs(1), analyzer_golden);
    report.record(9, "determinism", secs(60), || determinism(&naive, &tnt, &t, &spec));
    report.record(10, "flag/reward consistency", secs(5), flag_consistency);
    println!("ablation training: 10 runs x {ABLATION_STEPS} steps in {training:.1?}");

    if report.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criterion(s) failed", report.failed);
        ExitCode::FAILURE
    }
}
