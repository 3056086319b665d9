//! `tnt analyze` over JSONL corpora and `tnt report` for re-rendering a
//! saved JSON report.

use std::io::Write;
use std::path::Path;

use tnt_core::analysis::{build_report, emit_report, ingest_corpus_path, Diagnostic, IngestOptions, ReportFormat, RunReport};
use tnt_core::response::Vocab;

use crate::config::{RunConfig, EFFECTIVE_CONFIG_FILE};
use crate::outdir::{write_atomic, RunDir};
use crate::train::{settle, REPORT_STEM};
use crate::CliError;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";

#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: RunReport,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn analyze(config: &RunConfig, corpus: &Path) -> Result<Analysis, CliError> {
    let tokenizer = config.analysis.tokenizer.tokenizer();
    let mut vocab = Vocab::base();
    let options = IngestOptions { max_error_rate: config.analysis.max_error_rate };
    let corpus_data = ingest_corpus_path(corpus, tokenizer, &mut vocab, &options)?;
    for d in &corpus_data.diagnostics {
        log::warn!("{}:{}: {}", corpus.display(), d.line, d.message);
    }
    if corpus_data.records.is_empty() {
        log::warn!("corpus {} has no records; the report has no rows", corpus.display());
    }
    let lexicon = vocab.lexicon_ids(&config.analysis.lexicon);
    if lexicon.is_empty() && !corpus_data.records.is_empty() {
        log::warn!("no lexicon word occurs in the corpus; verb probability is 0 everywhere");
    }
    let report = build_report(&corpus_data.samples(), &lexicon, &config.analysis.lexicon, tokenizer.name(), &config.analysis.budget());
    Ok(Analysis { report, diagnostics: corpus_data.diagnostics })
}

/// Writes reports (and diagnostics) into `config.output.dir` when `to_dir`
/// is set, otherwise prints each requested format to `stdout`.
pub fn cmd_analyze(config: &RunConfig, corpus: &Path, to_dir: bool, stdout: &mut dyn Write) -> Result<Analysis, CliError> {
    // Ingest before touching the output directory so a rejected corpus
    // leaves nothing behind.
    let analysis = analyze(config, corpus)?;
    if !to_dir {
        for &format in &config.output.formats {
            let bytes = emit_report(&analysis.report, format)?;
            stdout.write_all(&bytes).map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })?;
        }
        return Ok(analysis);
    }
    let dir = RunDir::create(&config.output.dir)?;
    let result = (|| {
        dir.write(EFFECTIVE_CONFIG_FILE, config.to_toml().as_bytes())?;
        for &format in &config.output.formats {
            dir.write(&format!("{REPORT_STEM}.{}", format.extension()), &emit_report(&analysis.report, format)?)?;
        }
        if !analysis.diagnostics.is_empty() {
            let mut lines = Vec::new();
            for d in &analysis.diagnostics {
                serde_json::to_writer(&mut lines, d).expect("diagnostic serializes");
                lines.push(b'\n');
            }
            dir.write(DIAGNOSTICS_FILE, &lines)?;
        }
        Ok(())
    })();
    settle(dir, result)?;
    Ok(analysis)
}

/// Re-renders a saved JSON report in `format`, to `out` or to `stdout`.
pub fn cmd_report(input: &Path, format: ReportFormat, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
    let report = RunReport::from_json(&bytes)?;
    let rendered = emit_report(&report, format)?;
    match out {
        Some(path) => write_atomic(path, &rendered),
        None => stdout.write_all(&rendered).map_err(|e| CliError::Io { path: "<stdout>".into(), source: e }),
    }
}
