//! Evaluation metrics over response collections: accuracy, token usage,
//! token efficiency, mode ratios, thinking-verb probability and over-budget
//! (hacking) flags. Works on simulator output and on ingested JSONL corpora.
//!
//! Corpus lines follow this schema (unknown fields are ignored):
//!
//! | field           | type               | notes                                        |
//! |-----------------|--------------------|----------------------------------------------|
//! | `id`            | string or number   | required                                     |
//! | `dataset`       | string             | defaults to `"default"`                      |
//! | `prompt_id`     | string             | groups samples of one query for budgets      |
//! | `response_text` | string             | tokenized when `tokens` is absent            |
//! | `tokens`        | array of strings   | pre-tokenized response, wins over text       |
//! | `correct`       | bool               | absent: excluded from accuracy and TE        |
//! | `gold`          | string             | carried through, not interpreted             |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{Mode, Response, ResponseError, TokenId, Tokenizer, Vocab};
use crate::reward::{budget_from_responses, BudgetParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 12] = [
    "dataset",
    "responses",
    "judged",
    "accuracy",
    "mean_tokens",
    "te",
    "nonthinking_ratio",
    "thinking_mean_tokens",
    "nonthinking_mean_tokens",
    "verb_probability",
    "over_budget_rate",
    "unclassified",
];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("mean token usage must be > 0, got {0}")]
    NonPositiveTokens(f64),
    #[error("no budget for prompt {0:?}")]
    MissingBudget(String),
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("unsupported report format {0:?} (expected csv, json or svg)")]
    UnsupportedFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{errors} of {lines} corpus lines failed to parse (threshold {threshold}); first: line {first_line}: {first_message}")]
    TooManyErrors { errors: usize, lines: usize, threshold: f64, first_line: usize, first_message: String },
    #[error("report JSON is malformed: {0}")]
    BadReport(#[from] serde_json::Error),
    #[error("report schema version {0} is not supported")]
    ReportVersion(u32),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error("csv encoding failed: {0}")]
    Csv(#[from] csv::Error),
}

/// `A / sqrt(L)` with `A` in percent.
pub fn token_efficiency(accuracy_percent: f64, mean_tokens: f64) -> Result<f64, AnalysisError> {
    if mean_tokens.is_nan() || mean_tokens <= 0.0 {
        return Err(AnalysisError::NonPositiveTokens(mean_tokens));
    }
    Ok(accuracy_percent / mean_tokens.sqrt())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub count: usize,
    pub tokens: usize,
    pub judged: usize,
    pub correct: usize,
}

impl ModeAggregate {
    pub fn mean_tokens(&self) -> Option<f64> {
        (self.count > 0).then(|| self.tokens as f64 / self.count as f64)
    }

    /// Percent, over responses with known correctness.
    pub fn accuracy(&self) -> Option<f64> {
        (self.judged > 0).then(|| 100.0 * self.correct as f64 / self.judged as f64)
    }

    fn add(&mut self, tokens: usize, correct: Option<bool>) {
        self.count += 1;
        self.tokens += tokens;
        if let Some(c) = correct {
            self.judged += 1;
            self.correct += usize::from(c);
        }
    }

    fn merge(&mut self, other: &ModeAggregate) {
        self.count += other.count;
        self.tokens += other.tokens;
        self.judged += other.judged;
        self.correct += other.correct;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub thinking: ModeAggregate,
    pub nonthinking: ModeAggregate,
    /// Empty responses, which have no mode.
    pub unclassified: usize,
}

impl ModeStats {
    pub fn total(&self) -> usize {
        self.thinking.count + self.nonthinking.count
    }

    pub fn overall(&self) -> ModeAggregate {
        let mut all = self.thinking.clone();
        all.merge(&self.nonthinking);
        all
    }

    /// Fraction in `[0, 1]`; 0 when nothing was classified.
    pub fn nonthinking_ratio(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.nonthinking.count as f64 / self.total() as f64
        }
    }

    pub fn merge(&mut self, other: &ModeStats) {
        self.thinking.merge(&other.thinking);
        self.nonthinking.merge(&other.nonthinking);
        self.unclassified += other.unclassified;
    }
}

pub fn mode_statistics(responses: &[Response], correctness: &[Option<bool>]) -> Result<ModeStats, AnalysisError> {
    if responses.len() != correctness.len() {
        return Err(AnalysisError::LengthMismatch { what: "correctness", expected: responses.len(), got: correctness.len() });
    }
    let mut stats = ModeStats::default();
    for (r, &c) in responses.iter().zip(correctness) {
        match r.mode() {
            Ok(Mode::Thinking) => stats.thinking.add(r.total_length(), c),
            Ok(Mode::NonThinking) => stats.nonthinking.add(r.total_length(), c),
            Err(_) => stats.unclassified += 1,
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbProbability {
    pub value: f64,
    pub hits: usize,
    pub denominator: usize,
    /// Set when there were no non-thinking responses; `value` is then 0.
    pub empty_denominator: bool,
}

/// Among non-thinking responses, the fraction containing a lexicon token.
pub fn verb_probability(responses: &[Response], lexicon: &BTreeSet<TokenId>) -> VerbProbability {
    let mut hits = 0;
    let mut denominator = 0;
    for r in responses {
        if r.mode() == Ok(Mode::NonThinking) {
            denominator += 1;
            hits += usize::from(r.contains_any(lexicon));
        }
    }
    VerbProbability {
        value: if denominator == 0 { 0.0 } else { hits as f64 / denominator as f64 },
        hits,
        denominator,
        empty_denominator: denominator == 0,
    }
}

/// Non-thinking and longer than the prompt's budget.
pub fn is_over_budget(response: &Response, budget: f64) -> Result<bool, ResponseError> {
    Ok(response.mode()? == Mode::NonThinking && response.total_length() as f64 > budget)
}

pub fn hacking_flags<'a, I>(responses: I, budgets: &BTreeMap<String, f64>) -> Result<Vec<bool>, AnalysisError>
where
    I: IntoIterator<Item = (&'a str, &'a Response)>,
{
    responses
        .into_iter()
        .map(|(prompt, r)| {
            let b = budgets.get(prompt).ok_or_else(|| AnalysisError::MissingBudget(prompt.to_string()))?;
            Ok(is_over_budget(r, *b)?)
        })
        .collect()
}

/// One response ready for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub dataset: String,
    pub prompt_key: String,
    pub response: Response,
    pub correct: Option<bool>,
}

/// Per-prompt budgets from each prompt's thinking-mode samples, falling back
/// to `params.l_empty`. Empty responses are ignored.
pub fn prompt_budgets(samples: &[Sample], params: &BudgetParams) -> BTreeMap<String, f64> {
    let mut by_prompt: BTreeMap<&str, Vec<&Response>> = BTreeMap::new();
    for s in samples {
        let entry = by_prompt.entry(&s.prompt_key).or_default();
        if !s.response.is_empty() {
            entry.push(&s.response);
        }
    }
    by_prompt
        .into_iter()
        .map(|(k, rs)| {
            let ctx = budget_from_responses(k, rs, params).expect("empty responses filtered out");
            (k.to_string(), ctx.budget)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    /// Classified responses.
    pub responses: usize,
    /// Responses with known correctness.
    pub judged: usize,
    /// Percent.
    pub accuracy: Option<f64>,
    pub mean_tokens: Option<f64>,
    pub te: Option<f64>,
    /// Percent.
    pub nonthinking_ratio: f64,
    pub thinking_mean_tokens: Option<f64>,
    pub nonthinking_mean_tokens: Option<f64>,
    /// Percent of non-thinking responses containing a lexicon token.
    pub verb_probability: f64,
    pub verb_denominator_empty: bool,
    /// Percent of non-thinking responses over their prompt's budget.
    pub over_budget_rate: f64,
    pub over_budget: usize,
    pub unclassified: usize,
}

impl RunRow {
    pub fn from_parts(dataset: &str, stats: &ModeStats, verbs: &VerbProbability, over_budget: usize) -> Self {
        let overall = stats.overall();
        let accuracy = overall.accuracy();
        let mean_tokens = overall.mean_tokens();
        let te = match (accuracy, mean_tokens) {
            (Some(a), Some(l)) if l > 0.0 => token_efficiency(a, l).ok(),
            _ => None,
        };
        let nt = stats.nonthinking.count;
        Self {
            dataset: dataset.to_string(),
            responses: stats.total(),
            judged: overall.judged,
            accuracy,
            mean_tokens,
            te,
            nonthinking_ratio: 100.0 * stats.nonthinking_ratio(),
            thinking_mean_tokens: stats.thinking.mean_tokens(),
            nonthinking_mean_tokens: stats.nonthinking.mean_tokens(),
            verb_probability: 100.0 * verbs.value,
            verb_denominator_empty: verbs.empty_denominator,
            over_budget_rate: if nt == 0 { 0.0 } else { 100.0 * over_budget as f64 / nt as f64 },
            over_budget,
            unclassified: stats.unclassified,
        }
    }

    pub fn accuracy_coverage(&self) -> f64 {
        if self.responses == 0 {
            0.0
        } else {
            self.judged as f64 / self.responses as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// How token counts were obtained.
    pub tokenizer: String,
    pub lexicon: Vec<String>,
    pub omega: f64,
    pub fallback_budget: f64,
    pub rows: Vec<RunRow>,
}

impl RunReport {
    pub fn row(&self, dataset: &str) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.dataset == dataset)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, AnalysisError> {
        let r: RunReport = serde_json::from_slice(bytes)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(AnalysisError::ReportVersion(r.schema_version));
        }
        Ok(r)
    }
}

pub const ALL_DATASETS: &str = "all";

/// Aggregates samples into one row per dataset (in first-seen order), plus an
/// `all` row when more than one dataset is present.
pub fn build_report(
    samples: &[Sample],
    lexicon: &BTreeSet<TokenId>,
    lexicon_words: &[String],
    tokenizer: &str,
    params: &BudgetParams,
) -> RunReport {
    let budgets = prompt_budgets(samples, params);
    let mut order: Vec<&str> = Vec::new();
    let mut per: BTreeMap<&str, (ModeStats, usize, usize, usize)> = BTreeMap::new();
    for s in samples {
        if !per.contains_key(s.dataset.as_str()) {
            order.push(&s.dataset);
        }
        let (stats, verb_hits, nt, over) = per.entry(&s.dataset).or_default();
        match s.response.mode() {
            Ok(Mode::Thinking) => stats.thinking.add(s.response.total_length(), s.correct),
            Ok(Mode::NonThinking) => {
                stats.nonthinking.add(s.response.total_length(), s.correct);
                *nt += 1;
                *verb_hits += usize::from(s.response.contains_any(lexicon));
                let b = budgets[&s.prompt_key];
                *over += usize::from(s.response.total_length() as f64 > b);
            }
            Err(_) => stats.unclassified += 1,
        }
    }
    let to_row = |name: &str, (stats, hits, nt, over): &(ModeStats, usize, usize, usize)| {
        let verbs = VerbProbability {
            value: if *nt == 0 { 0.0 } else { *hits as f64 / *nt as f64 },
            hits: *hits,
            denominator: *nt,
            empty_denominator: *nt == 0,
        };
        RunRow::from_parts(name, stats, &verbs, *over)
    };
    let mut rows: Vec<RunRow> = order.iter().map(|d| to_row(d, &per[d])).collect();
    if order.len() > 1 {
        let mut all = (ModeStats::default(), 0, 0, 0);
        for d in &order {
            let p = &per[d];
            all.0.merge(&p.0);
            all.1 += p.1;
            all.2 += p.2;
            all.3 += p.3;
        }
        rows.push(to_row(ALL_DATASETS, &all));
    }
    RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tokenizer: tokenizer.to_string(),
        lexicon: lexicon_words.to_vec(),
        omega: params.omega,
        fallback_budget: params.l_empty,
        rows,
    }
}

#[derive(Debug, Clone, Deserialize)]
struct CorpusLine {
    id: serde_json::Value,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    prompt_id: Option<serde_json::Value>,
    #[serde(default)]
    response_text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    correct: Option<bool>,
    #[serde(default)]
    gold: Option<String>,
}

fn value_key(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub dataset: String,
    pub prompt_id: Option<String>,
    pub correct: Option<bool>,
    pub gold: Option<String>,
    pub line: usize,
    pub response: Response,
}

impl CorpusRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            dataset: self.dataset.clone(),
            prompt_key: self.prompt_id.clone().unwrap_or_else(|| format!("record:{}", self.id)),
            response: self.response.clone(),
            correct: self.correct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// Line is not valid JSON or does not match the schema.
    Malformed,
    /// Record kept but its response is empty and has no mode.
    EmptyResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
    pub diagnostics: Vec<Diagnostic>,
    /// Non-blank lines read.
    pub lines: usize,
}

impl Corpus {
    pub fn samples(&self) -> Vec<Sample> {
        self.records.iter().map(CorpusRecord::sample).collect()
    }

    pub fn malformed(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.kind == DiagnosticKind::Malformed).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Fatal when the malformed fraction of lines exceeds this.
    pub max_error_rate: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { max_error_rate: 0.2 }
    }
}

/// Streams JSONL corpus records, tokenizing text where needed and interning
/// unseen tokens into `vocab`. Order is preserved.
pub fn ingest_corpus<R: BufRead>(
    reader: R,
    tokenizer: &dyn Tokenizer,
    vocab: &mut Vocab,
    options: &IngestOptions,
) -> Result<Corpus, AnalysisError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut lines = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| AnalysisError::Io { path: format!("<corpus line {lineno}>"), source })?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let parsed: CorpusLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                diagnostics.push(Diagnostic { line: lineno, kind: DiagnosticKind::Malformed, message: e.to_string() });
                continue;
            }
        };
        let token_ids: Vec<TokenId> = match (&parsed.tokens, &parsed.response_text) {
            (Some(toks), _) => toks.iter().map(|t| vocab.intern(t)).collect(),
            (None, Some(text)) => tokenizer.tokenize(text, vocab),
            (None, None) => {
                diagnostics.push(Diagnostic {
                    line: lineno,
                    kind: DiagnosticKind::Malformed,
                    message: "record has neither response_text nor tokens".into(),
                });
                continue;
            }
        };
        let response = Response::new(token_ids, vocab.think_close());
        let id = value_key(&parsed.id);
        if response.is_empty() {
            diagnostics.push(Diagnostic {
                line: lineno,
                kind: DiagnosticKind::EmptyResponse,
                message: format!("record {id} has an empty response and cannot be classified"),
            });
        }
        records.push(CorpusRecord {
            id,
            dataset: parsed.dataset.unwrap_or_else(|| "default".into()),
            prompt_id: parsed.prompt_id.as_ref().map(value_key),
            correct: parsed.correct,
            gold: parsed.gold,
            line: lineno,
            response,
        });
    }
    let corpus = Corpus { records, diagnostics, lines };
    let errors = corpus.malformed();
    if lines > 0 && errors as f64 / lines as f64 > options.max_error_rate {
        let first = corpus.diagnostics.iter().find(|d| d.kind == DiagnosticKind::Malformed).expect("errors > 0");
        return Err(AnalysisError::TooManyErrors {
            errors,
            lines,
            threshold: options.max_error_rate,
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    Ok(corpus)
}

pub fn ingest_corpus_path(
    path: &Path,
    tokenizer: &dyn Tokenizer,
    vocab: &mut Vocab,
    options: &IngestOptions,
) -> Result<Corpus, AnalysisError> {
    let file = std::fs::File::open(path).map_err(|source| AnalysisError::Io { path: path.display().to_string(), source })?;
    ingest_corpus(std::io::BufReader::new(file), tokenizer, vocab, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(AnalysisError::UnsupportedFormat(s.to_string())),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> Result<Vec<u8>, AnalysisError> {
    match format {
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Svg => Ok(emit_svg(report).into_bytes()),
    }
}

fn emit_csv(report: &RunReport) -> Result<Vec<u8>, AnalysisError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.dataset.clone(),
            r.responses.to_string(),
            r.judged.to_string(),
            fmt_opt(r.accuracy),
            fmt_opt(r.mean_tokens),
            fmt_opt(r.te),
            format!("{:.4}", r.nonthinking_ratio),
            fmt_opt(r.thinking_mean_tokens),
            fmt_opt(r.nonthinking_mean_tokens),
            format!("{:.4}", r.verb_probability),
            format!("{:.4}", r.over_budget_rate),
            r.unclassified.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| AnalysisError::Csv(e.into_error().into()))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

type RowMetric = fn(&RunRow) -> f64;

/// Two static bar panels: verb probability (percent) and TE per dataset.
fn emit_svg(report: &RunReport) -> String {
    const BAR: f64 = 36.0;
    const GAP: f64 = 24.0;
    const PANEL_H: f64 = 160.0;
    const LEFT: f64 = 48.0;
    let n = report.rows.len().max(1) as f64;
    let panel_w = LEFT + n * (BAR + GAP) + GAP;
    let width = 2.0 * panel_w + 20.0;
    let height = PANEL_H + 80.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let te_max = report.rows.iter().filter_map(|r| r.te).fold(0.0f64, f64::max);
    let panels: [(&str, f64, RowMetric, &str); 2] = [
        ("thinking-verb probability (%)", 100.0, |r| r.verb_probability, "#c0504d"),
        ("token efficiency", if te_max > 0.0 { te_max } else { 1.0 }, |r| r.te.unwrap_or(0.0), "#4f81bd"),
    ];
    for (p, (title, max, value, color)) in panels.iter().enumerate() {
        let x0 = 10.0 + p as f64 * panel_w;
        let base = 30.0 + PANEL_H;
        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="18" font-size="13">{}</text>"#, x0 + LEFT, xml_escape(title));
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="30.0" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#, x0 + LEFT, x0 + LEFT);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#, x0 + LEFT, x0 + panel_w - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="34.0" text-anchor="end">{max:.2}</text>"#, x0 + LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{base:.1}" text-anchor="end">0</text>"#, x0 + LEFT - 4.0);
        for (i, r) in report.rows.iter().enumerate() {
            let v = value(r).max(0.0);
            let h = (v / max).min(1.0) * PANEL_H;
            let x = x0 + LEFT + GAP + i as f64 * (BAR + GAP);
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="{BAR:.1}" height="{h:.1}" fill="{color}"/>"#, base - h);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, x + BAR / 2.0, base - h - 3.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x + BAR / 2.0, base + 14.0, xml_escape(&r.dataset));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::{WhitespaceTokenizer, DEFAULT_LEXICON};
    use crate::reward::{reward_tnt, Branch, BudgetContext};

    const CLOSE: TokenId = 1;
    const THINK: TokenId = 10;
    const SOL: TokenId = 11;
    const WAIT: TokenId = 2;

    fn r(tokens: &[TokenId]) -> Response {
        Response::new(tokens.to_vec(), CLOSE)
    }

    #[test]
    fn te_examples() {
        assert!((token_efficiency(41.0, 5893.0).unwrap() - 0.534).abs() < 5e-4);
        assert!((token_efficiency(37.0, 12736.0).unwrap() - 0.328).abs() < 5e-4);
        assert_eq!(token_efficiency(0.0, 123.0).unwrap(), 0.0);
        assert!(matches!(token_efficiency(10.0, 0.0), Err(AnalysisError::NonPositiveTokens(_))));
    }

    #[test]
    fn mode_statistics_examples() {
        let all_thinking = vec![r(&[THINK, CLOSE, SOL]); 3];
        let s = mode_statistics(&all_thinking, &[Some(true); 3]).unwrap();
        assert_eq!(s.nonthinking_ratio(), 0.0);

        let mixed = vec![r(&[CLOSE, SOL]), r(&[THINK, CLOSE, SOL]), r(&[THINK, CLOSE]), r(&[THINK, THINK, CLOSE, SOL])];
        let s = mode_statistics(&mixed, &[Some(true), Some(false), None, Some(true)]).unwrap();
        assert_eq!(s.nonthinking_ratio(), 0.25);
        assert_eq!(s.thinking.count + s.nonthinking.count, 4);
        assert_eq!(s.thinking.mean_tokens(), Some(3.0));
        assert_eq!(s.nonthinking.mean_tokens(), Some(2.0));
        assert_eq!(s.overall().accuracy(), Some(200.0 / 3.0));
        assert!(mode_statistics(&mixed, &[None]).is_err());

        let with_empty = vec![r(&[]), r(&[CLOSE])];
        let s = mode_statistics(&with_empty, &[None, None]).unwrap();
        assert_eq!(s.unclassified, 1);
        assert_eq!(s.total(), 1);
    }

    #[test]
    fn verb_probability_examples() {
        let lex: BTreeSet<TokenId> = [WAIT].into();
        let v = verb_probability(&[r(&[CLOSE, WAIT, SOL]), r(&[CLOSE, SOL]), r(&[THINK, WAIT])], &lex);
        assert_eq!(v.value, 0.5);
        assert_eq!(v.denominator, 2);
        let none = verb_probability(&[r(&[THINK, CLOSE])], &lex);
        assert_eq!(none.value, 0.0);
        assert!(none.empty_denominator);
        let hacked = vec![r(&[CLOSE, WAIT, THINK, THINK, CLOSE, SOL]); 5];
        assert_eq!(verb_probability(&hacked, &lex).value, 1.0);
    }

    #[test]
    fn hacking_flag_examples() {
        let mut budgets = BTreeMap::new();
        budgets.insert("p".to_string(), 300.0);
        let mut long = vec![CLOSE];
        long.extend(vec![SOL; 300]);
        let at = r(&long[..300]);
        let over = r(&long);
        let mut huge = vec![THINK; 1_000_000];
        huge.push(CLOSE);
        let thinking = r(&huge);
        let flags = hacking_flags([("p", &over), ("p", &at), ("p", &thinking)], &budgets).unwrap();
        assert_eq!(flags, vec![true, false, false]);
        assert!(matches!(hacking_flags([("q", &at)], &budgets), Err(AnalysisError::MissingBudget(_))));

        let ctx = BudgetContext { prompt_id: "p".into(), thinking_solution_lengths: vec![150], budget: 300.0, used_fallback: false };
        assert_eq!(reward_tnt(&over, true, &ctx).unwrap().branch, Branch::NonThinkingOverBudget);
    }

    #[test]
    fn ingest_examples() {
        let mut vocab = Vocab::base();
        let text = "{\"id\":1,\"dataset\":\"a\",\"response_text\":\"x\"}\n{\"id\":2,\"dataset\":\"a\",\"tokens\":[\"</think>\",\"y\"]}\n\n{\"id\":\"three\",\"response_text\":\"z\",\"correct\":true}\n";
        let c = ingest_corpus(text.as_bytes(), &WhitespaceTokenizer, &mut vocab, &IngestOptions::default()).unwrap();
        let ids: Vec<_> = c.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["1", "2", "three"]);
        assert_eq!(c.records[2].dataset, "default");
        assert_eq!(c.records[1].response.mode(), Ok(Mode::NonThinking));
        assert_eq!(c.lines, 3);

        let mut lines: Vec<String> = (0..9).map(|i| format!("{{\"id\":{i},\"response_text\":\"a b\"}}")).collect();
        lines.insert(4, "{not json".into());
        let c = ingest_corpus(lines.join("\n").as_bytes(), &WhitespaceTokenizer, &mut vocab, &IngestOptions { max_error_rate: 0.2 }).unwrap();
        assert_eq!(c.records.len(), 9);
        assert_eq!(c.diagnostics.len(), 1);
        assert_eq!(c.diagnostics[0].line, 5);
        let err = ingest_corpus(lines.join("\n").as_bytes(), &WhitespaceTokenizer, &mut vocab, &IngestOptions { max_error_rate: 0.05 });
        assert!(matches!(err, Err(AnalysisError::TooManyErrors { errors: 1, lines: 10, .. })));

        let c = ingest_corpus(
            "{\"id\":0,\"response_text\":\"</think> The answer is 4\"}".as_bytes(),
            &WhitespaceTokenizer,
            &mut vocab,
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.records[0].response.mode(), Ok(Mode::NonThinking));
        assert_eq!(c.records[0].response.total_length(), 5);

        let c = ingest_corpus("{\"id\":0,\"response_text\":\"   \"}".as_bytes(), &WhitespaceTokenizer, &mut vocab, &IngestOptions::default()).unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.diagnostics[0].kind, DiagnosticKind::EmptyResponse);

        let c = ingest_corpus("{\"id\":0}".as_bytes(), &WhitespaceTokenizer, &mut vocab, &IngestOptions { max_error_rate: 1.0 }).unwrap();
        assert!(c.records.is_empty());
        assert_eq!(c.malformed(), 1);
    }

    fn small_report() -> RunReport {
        let samples = vec![
            Sample { dataset: "d1".into(), prompt_key: "p".into(), response: r(&[THINK, CLOSE, SOL]), correct: Some(true) },
            Sample { dataset: "d1".into(), prompt_key: "p".into(), response: r(&[CLOSE, WAIT, SOL, SOL, SOL]), correct: Some(false) },
            Sample { dataset: "d2".into(), prompt_key: "q".into(), response: r(&[CLOSE, SOL]), correct: None },
        ];
        let lex: BTreeSet<TokenId> = [WAIT].into();
        build_report(&samples, &lex, &["Wait".into()], "whitespace", &BudgetParams::default())
    }

    #[test]
    fn report_rows_and_invariants() {
        let rep = small_report();
        assert_eq!(rep.rows.len(), 3);
        let d1 = rep.row("d1").unwrap();
        assert_eq!(d1.accuracy, Some(50.0));
        assert_eq!(d1.mean_tokens, Some(4.0));
        assert_eq!(d1.te, Some(50.0 / 2.0));
        assert_eq!(d1.nonthinking_ratio, 50.0);
        assert_eq!(d1.verb_probability, 100.0);
        // budget 2 * h = 2, non-thinking length 5 > 2
        assert_eq!(d1.over_budget, 1);
        let d2 = rep.row("d2").unwrap();
        assert_eq!(d2.accuracy, None);
        assert_eq!(d2.te, None);
        assert_eq!(d2.over_budget, 0);
        let all = rep.row(ALL_DATASETS).unwrap();
        assert_eq!(all.responses, 3);
        assert_eq!(all.judged, 2);
        assert!((all.accuracy_coverage() - 2.0 / 3.0).abs() < 1e-15);
        for row in &rep.rows {
            if let (Some(a), Some(l), Some(te)) = (row.accuracy, row.mean_tokens, row.te) {
                assert!((a / l.sqrt() - te).abs() < 1e-9);
            }
            assert!((0.0..=100.0).contains(&row.nonthinking_ratio));
            assert!((0.0..=100.0).contains(&row.verb_probability));
        }
    }

    #[test]
    fn emit_examples() {
        let rep = small_report();
        for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg] {
            assert_eq!(emit_report(&rep, f).unwrap(), emit_report(&rep, f).unwrap());
        }
        let json = emit_report(&rep, ReportFormat::Json).unwrap();
        assert_eq!(RunReport::from_json(&json).unwrap(), rep);

        let single = RunReport { rows: rep.rows[..1].to_vec(), ..rep.clone() };
        let csv = String::from_utf8(emit_report(&single, ReportFormat::Csv).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines[1], "d1,2,2,50.0000,4.0000,25.0000,50.0000,3.0000,5.0000,100.0000,100.0000,0");

        let svg = String::from_utf8(emit_report(&rep, ReportFormat::Svg).unwrap()).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(matches!("xlsx".parse::<ReportFormat>(), Err(AnalysisError::UnsupportedFormat(_))));
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
    }

    #[test]
    fn verb_probability_monotone_in_lexicon() {
        let mut vocab = Vocab::base();
        let texts = ["</think> Wait no", "</think> Alternatively yes", "</think> plain", "a </think> b"];
        let rs: Vec<Response> = texts.iter().map(|t| Response::new(WhitespaceTokenizer.tokenize(t, &mut vocab), vocab.think_close())).collect();
        let small = vocab.lexicon_ids(&["Wait"]);
        let big = vocab.lexicon_ids(&DEFAULT_LEXICON);
        assert!(verb_probability(&rs, &big).value >= verb_probability(&rs, &small).value);
        assert_eq!(verb_probability(&rs, &big).value, 2.0 / 3.0);
    }
}
