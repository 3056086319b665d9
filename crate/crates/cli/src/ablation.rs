//! `tnt ablation`: the same seed, tasks and starting policy trained once per
//! reward mode, followed by a side-by-side comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tnt_core::analysis::RunReport;
use tnt_core::lrm::sim_vocab;
use tnt_core::trainer::StepLog;
use tnt_core::{RewardMode, TrainConfig};

use crate::config::{RunConfig, EFFECTIVE_CONFIG_FILE};
use crate::outdir::RunDir;
use crate::train::{load_tasks, run_into, settle, tasks_jsonl, RunArtifacts, BUCKETS, TASKS_FILE};
use crate::CliError;

pub const COMPARISON_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "ablation.json";
pub const CURVES_FILE: &str = "ablation_curves.csv";
pub const CHART_FILE: &str = "ablation.svg";
pub const MODES: [RewardMode; 2] = [RewardMode::Tnt, RewardMode::Naive];

/// Pooled statistics over a trailing window of training steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowSummary {
    pub first_step: usize,
    pub steps: usize,
    pub responses: usize,
    pub nonthinking_responses: usize,
    pub nonthinking_ratio: f64,
    pub nonthinking_mean_tokens: f64,
    pub thinking_mean_tokens: f64,
    pub verb_probability: f64,
    pub over_budget_rate: f64,
    pub mean_reward: f64,
    pub accuracy: f64,
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl WindowSummary {
    pub fn of(logs: &[StepLog], window: usize) -> Self {
        let tail = &logs[logs.len().saturating_sub(window)..];
        let Some(first) = tail.first() else {
            return Self::default();
        };
        let sum = |f: fn(&StepLog) -> usize| tail.iter().map(f).sum::<usize>();
        let nt = sum(|l| l.nonthinking_count);
        let th = sum(|l| l.thinking_count);
        let n = tail.len() as f64;
        Self {
            first_step: first.step,
            steps: tail.len(),
            responses: nt + th,
            nonthinking_responses: nt,
            nonthinking_ratio: frac(nt, nt + th),
            nonthinking_mean_tokens: frac(sum(|l| l.nonthinking_tokens), nt),
            thinking_mean_tokens: frac(sum(|l| l.thinking_tokens), th),
            verb_probability: frac(sum(|l| l.verb_count), nt),
            over_budget_rate: frac(sum(|l| l.over_budget_count), nt),
            mean_reward: tail.iter().map(|l| l.mean_reward).sum::<f64>() / n,
            accuracy: tail.iter().map(|l| l.accuracy).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub mode: RewardMode,
    pub final_window: WindowSummary,
    /// Probability of `</think>` followed by a thinking verb, per bucket,
    /// under the final policy.
    pub final_hack_mass: BTreeMap<String, f64>,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: usize,
    pub window: usize,
    /// First step whose log differs between the two modes.
    pub first_divergent_step: Option<usize>,
    /// Naive over TNT mean non-thinking tokens in the final window.
    pub nonthinking_token_ratio: Option<f64>,
    pub modes: Vec<ModeComparison>,
}

fn final_mass(run: &RunArtifacts) -> BTreeMap<String, f64> {
    BUCKETS.iter().map(|b| (b.name().to_string(), run.output.policy.hack_template_mass(*b))).collect()
}

pub fn compare(train: &TrainConfig, window: usize, tnt: &RunArtifacts, naive: &RunArtifacts) -> Comparison {
    let first_divergent_step = tnt.output.logs.iter().zip(&naive.output.logs).position(|(a, b)| a != b);
    let wt = WindowSummary::of(&tnt.output.logs, window);
    let wn = WindowSummary::of(&naive.output.logs, window);
    let nonthinking_token_ratio = (wt.nonthinking_mean_tokens > 0.0).then(|| wn.nonthinking_mean_tokens / wt.nonthinking_mean_tokens);
    let entry = |mode, run: &RunArtifacts, w| ModeComparison { mode, final_window: w, final_hack_mass: final_mass(run), report: run.report.clone() };
    Comparison {
        schema_version: COMPARISON_SCHEMA_VERSION,
        seed: train.seed,
        steps: train.steps,
        window,
        first_divergent_step,
        nonthinking_token_ratio,
        modes: vec![entry(RewardMode::Tnt, tnt, wt), entry(RewardMode::Naive, naive, wn)],
    }
}

pub const CURVE_COLUMNS: [&str; 11] = [
    "step",
    "mode",
    "nonthinking_ratio",
    "nonthinking_mean_tokens",
    "verb_probability",
    "over_budget_rate",
    "mean_reward",
    "accuracy",
    "hack_mass_easy",
    "hack_mass_medium",
    "hack_mass_hard",
];

pub fn curves_csv(runs: &[(RewardMode, &RunArtifacts)]) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    out.push('\n');
    for (mode, run) in runs {
        for (log, mass) in run.output.logs.iter().zip(&run.hack_mass) {
            let nt = log.nonthinking_count;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                log.step,
                mode.name(),
                log.nonthinking_ratio,
                log.nonthinking_mean_tokens,
                frac(log.verb_count, nt),
                frac(log.over_budget_count, nt),
                log.mean_reward,
                log.accuracy,
                mass[0],
                mass[1],
                mass[2],
            );
        }
    }
    out
}

fn moving_average(values: &[f64], span: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= span {
            acc -= values[i - span];
        }
        out.push(acc / (i + 1).min(span) as f64);
    }
    out
}

type StepMetric = fn(&StepLog) -> f64;

/// Two stacked line panels over training steps: non-thinking mean tokens
/// and verb probability, one line per reward mode.
pub fn chart_svg(runs: &[(RewardMode, &RunArtifacts)]) -> String {
    const W: f64 = 640.0;
    const PANEL_H: f64 = 180.0;
    const LEFT: f64 = 56.0;
    const TOP: f64 = 28.0;
    const GAP: f64 = 48.0;
    const SPAN: usize = 25;
    let colors = ["#1f77b4", "#d62728"];
    let steps = runs.iter().map(|(_, r)| r.output.logs.len()).max().unwrap_or(0).max(2);
    let panels: [(&str, StepMetric); 2] = [
        ("non-thinking mean tokens", |l| l.nonthinking_mean_tokens),
        ("verb probability (non-thinking)", |l| frac(l.verb_count, l.nonthinking_count)),
    ];
    let height = TOP + 2.0 * (PANEL_H + GAP);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(svg, "<text x=\"{LEFT}\" y=\"16\">{SPAN}-step moving average</text>");
    for (p, (title, metric)) in panels.iter().enumerate() {
        let y0 = TOP + p as f64 * (PANEL_H + GAP) + 16.0;
        let series: Vec<Vec<f64>> =
            runs.iter().map(|(_, r)| moving_average(&r.output.logs.iter().map(metric).collect::<Vec<_>>(), SPAN)).collect();
        let top = series.iter().flatten().cloned().fold(0.0f64, f64::max).max(1e-9);
        let _ = writeln!(svg, "<text x=\"{LEFT}\" y=\"{:.1}\">{title} (max {top:.3})</text>", y0 - 4.0);
        let _ = writeln!(
            svg,
            "<rect x=\"{LEFT}\" y=\"{y0:.1}\" width=\"{:.1}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#999\"/>",
            W - LEFT - 16.0
        );
        for (i, ys) in series.iter().enumerate() {
            let pts: Vec<String> = ys
                .iter()
                .enumerate()
                .map(|(s, y)| {
                    let x = LEFT + (W - LEFT - 16.0) * s as f64 / (steps - 1) as f64;
                    format!("{x:.1},{:.1}", y0 + PANEL_H * (1.0 - y / top))
                })
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>",
                colors[i % colors.len()],
                pts.join(" ")
            );
        }
    }
    for (i, (mode, _)) in runs.iter().enumerate() {
        let x = LEFT + 120.0 * i as f64;
        let y = height - 12.0;
        let _ = writeln!(svg, "<rect x=\"{x}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>", y - 9.0, colors[i % colors.len()]);
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{y:.1}\">{}</text>", x + 14.0, mode.name());
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn cmd_ablation(config: &RunConfig, config_path: &str) -> Result<Comparison, CliError> {
    let base = *config.require_train(config_path)?;
    let dir = RunDir::create(&config.output.dir)?;
    let result = (|| {
        dir.write(EFFECTIVE_CONFIG_FILE, config.to_toml().as_bytes())?;
        let (vocab, tokens) = sim_vocab();
        let tasks = load_tasks(config, base.seed, &vocab, &tokens)?;
        dir.write(TASKS_FILE, &tasks_jsonl(&tasks, &vocab))?;
        let mut runs = Vec::with_capacity(MODES.len());
        for mode in MODES {
            let train = TrainConfig { reward_mode: mode, ..base };
            runs.push(run_into(&dir.path(mode.name()), config, &train, &tasks, &vocab, &tokens)?);
        }
        let [tnt, naive] = <[RunArtifacts; 2]>::try_from(runs).expect("one run per mode");
        let comparison = compare(&base, config.analysis.final_window, &tnt, &naive);
        let mut summary = serde_json::to_vec_pretty(&comparison).expect("comparison serializes");
        summary.push(b'\n');
        dir.write(SUMMARY_FILE, &summary)?;
        let pairs = [(RewardMode::Tnt, &tnt), (RewardMode::Naive, &naive)];
        dir.write(CURVES_FILE, curves_csv(&pairs).as_bytes())?;
        dir.write(CHART_FILE, chart_svg(&pairs).as_bytes())?;
        Ok(comparison)
    })();
    settle(dir, result)
}
