//! `tnt train`: one run with a step log, periodic checkpoints, an optional
//! trajectory dump and an evaluation report of the final policy.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tnt_core::analysis::{emit_report, RunReport};
use tnt_core::lrm::{make_taskset, sim_vocab, Bucket, Prompt, SimTokens, TaskRecord, NUM_BUCKETS};
use tnt_core::response::Vocab;
use tnt_core::trainer::{
    evaluate, run_training_with, Checkpoint, EvalOptions, ScoredTrajectory, SimContext, StepLog, TrainError, TrainObserver,
    TrainOutput, TrajectoryRecord, CHECKPOINT_FORMAT_VERSION,
};
use tnt_core::{PolicySnapshot, TrainConfig};

use crate::config::{RunConfig, EFFECTIVE_CONFIG_FILE};
use crate::outdir::{write_atomic, RunDir};
use crate::CliError;

pub const STEPS_FILE: &str = "steps.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const TASKS_FILE: &str = "tasks.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.json";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.json";
pub const REPORT_STEM: &str = "report";

pub const BUCKETS: [Bucket; NUM_BUCKETS] = [Bucket::Easy, Bucket::Medium, Bucket::Hard];

/// What one finished run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub output: TrainOutput,
    pub report: RunReport,
    /// Hack-template mass per bucket after each step's update.
    pub hack_mass: Vec<[f64; NUM_BUCKETS]>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}.json")
}

fn save_checkpoint(dir: &Path, name: &str, policy: &PolicySnapshot, step: usize) -> Result<(), CliError> {
    let ck = Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, step, policy: *policy };
    write_atomic(&dir.join(name), &ck.to_bytes())
}

struct FileObserver<'a> {
    steps: BufWriter<File>,
    trajectories: Option<BufWriter<File>>,
    checkpoints: PathBuf,
    eval_every: usize,
    vocab: &'a Vocab,
    hack_mass: Vec<[f64; NUM_BUCKETS]>,
}

impl FileObserver<'_> {
    fn write_step(&mut self, log: &StepLog, scored: &[ScoredTrajectory], policy: &PolicySnapshot) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io { path: STEPS_FILE.into(), source: e };
        serde_json::to_writer(&mut self.steps, log).map_err(|e| io(e.into()))?;
        self.steps.write_all(b"\n").map_err(io)?;
        if let Some(w) = self.trajectories.as_mut() {
            let io = |e: std::io::Error| CliError::Io { path: TRAJECTORIES_FILE.into(), source: e };
            for s in scored {
                serde_json::to_writer(&mut *w, &TrajectoryRecord::new(log.step, s, self.vocab)).map_err(|e| io(e.into()))?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        self.hack_mass.push(BUCKETS.map(|b| policy.hack_template_mass(b)));
        let done = log.step + 1;
        if done.is_multiple_of(self.eval_every) {
            save_checkpoint(&self.checkpoints, &checkpoint_name(done), policy, done)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), CliError> {
        self.steps.flush().map_err(|e| CliError::Io { path: STEPS_FILE.into(), source: e })?;
        if let Some(w) = self.trajectories.as_mut() {
            w.flush().map_err(|e| CliError::Io { path: TRAJECTORIES_FILE.into(), source: e })?;
        }
        Ok(())
    }
}

impl TrainObserver for FileObserver<'_> {
    fn on_step(&mut self, log: &StepLog, scored: &[ScoredTrajectory], policy: &PolicySnapshot) -> Result<(), String> {
        self.write_step(log, scored, policy).map_err(|e| e.to_string())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// The task set named by the config: a task file if given, otherwise a
/// generated set seeded from the training seed.
pub fn load_tasks(config: &RunConfig, seed: u64, vocab: &Vocab, tokens: &SimTokens) -> Result<Vec<Prompt>, CliError> {
    let Some(path) = &config.tasks.file else {
        return Ok(make_taskset(seed, config.tasks.counts(), tokens));
    };
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut tasks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Tasks(format!("{} line {}: {e}", path.display(), i + 1)))?;
        tasks.push(record.to_prompt(vocab)?);
    }
    if tasks.is_empty() {
        return Err(CliError::Tasks(format!("{} contains no tasks", path.display())));
    }
    Ok(tasks)
}

pub fn tasks_jsonl(tasks: &[Prompt], vocab: &Vocab) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tasks {
        serde_json::to_writer(&mut out, &TaskRecord::from_prompt(t, vocab)).expect("task record serializes");
        out.push(b'\n');
    }
    out
}

/// Trains with `train` and writes everything under `dir`.
pub fn run_into(
    dir: &Path,
    config: &RunConfig,
    train: &TrainConfig,
    tasks: &[Prompt],
    vocab: &Vocab,
    tokens: &SimTokens,
) -> Result<RunArtifacts, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let checkpoints = dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&checkpoints).map_err(|e| CliError::io(&checkpoints, e))?;
    let mut observer = FileObserver {
        steps: create(&dir.join(STEPS_FILE))?,
        trajectories: if config.output.dump_trajectories { Some(create(&dir.join(TRAJECTORIES_FILE))?) } else { None },
        checkpoints: checkpoints.clone(),
        eval_every: train.eval_every,
        vocab,
        hack_mass: Vec::with_capacity(train.steps),
    };
    let sim = SimContext { spec: &config.environment, tokens };
    let initial = PolicySnapshot::new(config.policy.logits())?;
    log::info!("training {} steps ({} reward) into {}", train.steps, train.reward_mode.name(), dir.display());
    let result = run_training_with(train, sim, tasks, &initial, &mut observer);
    observer.flush()?;
    let output = match result {
        Ok(o) => o,
        Err(TrainError::Update { step, last_good, source }) => {
            save_checkpoint(&checkpoints, LAST_GOOD_CHECKPOINT, &last_good, step)?;
            return Err(TrainError::Update { step, last_good, source }.into());
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&checkpoints, FINAL_CHECKPOINT, &output.policy, train.steps)?;

    let opts = EvalOptions {
        samples_per_task: config.analysis.eval_samples,
        seed: train.seed,
        lexicon: &vocab.lexicon_ids(&config.analysis.lexicon),
        lexicon_words: &config.analysis.lexicon,
        budget: train.budget,
    };
    let report = evaluate(&output.policy, sim, tasks, &opts);
    for &format in &config.output.formats {
        let path = dir.join(format!("{REPORT_STEM}.{}", format.extension()));
        write_atomic(&path, &emit_report(&report, format)?)?;
    }
    Ok(RunArtifacts { output, report, hack_mass: observer.hack_mass })
}

/// Marks `dir` failed or finished depending on `result`.
pub fn settle<T>(dir: RunDir, result: Result<T, CliError>) -> Result<T, CliError> {
    match result {
        Ok(v) => {
            dir.finish()?;
            Ok(v)
        }
        Err(e) => {
            dir.fail(&e);
            Err(e)
        }
    }
}

pub fn cmd_train(config: &RunConfig, config_path: &str) -> Result<RunArtifacts, CliError> {
    let train = *config.require_train(config_path)?;
    let dir = RunDir::create(&config.output.dir)?;
    let result = (|| {
        dir.write(EFFECTIVE_CONFIG_FILE, config.to_toml().as_bytes())?;
        let (vocab, tokens) = sim_vocab();
        let tasks = load_tasks(config, train.seed, &vocab, &tokens)?;
        dir.write(TASKS_FILE, &tasks_jsonl(&tasks, &vocab))?;
        run_into(dir.root(), config, &train, &tasks, &vocab, &tokens)
    })();
    settle(dir, result)
}
