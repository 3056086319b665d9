//! Tokens, vocabularies, responses and mode discrimination.
//!
//! A response is the generated continuation of a prompt. It is in the
//! non-thinking mode iff its first generated token is the thinking terminator
//! `</think>`; otherwise it is in the thinking mode. For thinking responses
//! the solution component is everything after the first terminator.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

/// Verbs whose presence in a nominally non-thinking response betrays actual
/// reasoning.
pub const DEFAULT_LEXICON: [&str; 3] = ["Wait", "Alternatively", "Double-Check"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResponseError {
    #[error("response has no tokens")]
    EmptyResponse,
    #[error("response contains no {THINK_CLOSE} marker")]
    NoThinkClose,
    #[error("solution length is only defined for thinking-mode responses")]
    WrongMode,
    #[error("per-token log-probabilities invalid: {0}")]
    InvalidLogprobs(String),
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("io error on vocabulary file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary JSON is malformed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("token ids are not dense: expected id {expected} for the {expected}-th entry, found {found:?}")]
    NotDense { expected: TokenId, found: Option<String> },
    #[error("special token {role} = {token:?} is not in the vocabulary")]
    MissingSpecial { role: &'static str, token: String },
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Thinking,
    NonThinking,
}

impl Mode {
    /// The mode indicator `p(y)`: 1 for thinking, 0 for non-thinking.
    pub fn indicator(self) -> u8 {
        match self {
            Mode::Thinking => 1,
            Mode::NonThinking => 0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Thinking => f.write_str("thinking"),
            Mode::NonThinking => f.write_str("non_thinking"),
        }
    }
}

/// Ordered token table with dense ids and the special markers the rest of the
/// crate relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
    think_open: TokenId,
    think_close: TokenId,
    answers: Vec<TokenId>,
    verbs: Vec<TokenId>,
}

/// On-disk shape of a vocabulary file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub tokens: std::collections::BTreeMap<String, TokenId>,
    pub special: SpecialTokens,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecialTokens {
    pub think_open: String,
    pub think_close: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub verbs: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from ordered entries; ids are positions.
    pub fn new(entries: Vec<String>, special: &SpecialTokens) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i as TokenId).is_some() {
                return Err(VocabError::Invalid(format!("duplicate token {e:?}")));
            }
        }
        let lookup = |role: &'static str, tok: &str| {
            index.get(tok).copied().ok_or_else(|| VocabError::MissingSpecial {
                role,
                token: tok.to_string(),
            })
        };
        let think_open = lookup("think_open", &special.think_open)?;
        let think_close = lookup("think_close", &special.think_close)?;
        if think_open == think_close {
            return Err(VocabError::Invalid("think_open and think_close must differ".into()));
        }
        let answers = special
            .answers
            .iter()
            .map(|a| lookup("answers", a))
            .collect::<Result<Vec<_>, _>>()?;
        let verbs = special
            .verbs
            .iter()
            .map(|v| lookup("verbs", v))
            .collect::<Result<Vec<_>, _>>()?;
        if answers.contains(&think_close) || verbs.contains(&think_close) {
            return Err(VocabError::Invalid("think_close cannot double as an answer or verb".into()));
        }
        Ok(Self { entries, index, think_open, think_close, answers, verbs })
    }

    /// Vocabulary containing only the thinking markers and the default verb
    /// lexicon. Suitable as the seed for text ingestion, which interns
    /// unseen words on the fly.
    pub fn base() -> Self {
        let mut entries = vec![THINK_OPEN.to_string(), THINK_CLOSE.to_string()];
        entries.extend(DEFAULT_LEXICON.iter().map(|s| s.to_string()));
        let special = SpecialTokens {
            think_open: THINK_OPEN.into(),
            think_close: THINK_CLOSE.into(),
            answers: vec![],
            verbs: DEFAULT_LEXICON.iter().map(|s| s.to_string()).collect(),
        };
        Self::new(entries, &special).expect("base vocabulary is well formed")
    }

    pub fn from_file(file: VocabFile) -> Result<Self, VocabError> {
        let mut pairs: Vec<(TokenId, String)> = file.tokens.into_iter().map(|(s, i)| (i, s)).collect();
        pairs.sort();
        let mut entries = Vec::with_capacity(pairs.len());
        for (expected, (id, tok)) in pairs.into_iter().enumerate() {
            if id != expected as TokenId {
                return Err(VocabError::NotDense { expected: expected as TokenId, found: Some(tok) });
            }
            entries.push(tok);
        }
        Self::new(entries, &file.special)
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            tokens: self.entries.iter().enumerate().map(|(i, s)| (s.clone(), i as TokenId)).collect(),
            special: SpecialTokens {
                think_open: self.token(self.think_open).to_string(),
                think_close: self.token(self.think_close).to_string(),
                answers: self.answers.iter().map(|&a| self.token(a).to_string()).collect(),
                verbs: self.verbs.iter().map(|&v| self.token(v).to_string()).collect(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("vocab serializes")
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| VocabError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Panics on an id outside the table.
    pub fn token(&self, id: TokenId) -> &str {
        &self.entries[id as usize]
    }

    /// Returns the id of `token`, appending it when unseen.
    pub fn intern(&mut self, token: &str) -> TokenId {
        if let Some(id) = self.id(token) {
            return id;
        }
        let id = self.entries.len() as TokenId;
        self.entries.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn think_open(&self) -> TokenId {
        self.think_open
    }

    pub fn think_close(&self) -> TokenId {
        self.think_close
    }

    pub fn answers(&self) -> &[TokenId] {
        &self.answers
    }

    pub fn verbs(&self) -> &[TokenId] {
        &self.verbs
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Lexicon ids for `words`. Entries match a word when they are equal to
    /// it after trimming surrounding punctuation (other than `-`), ignoring
    /// ASCII case, so `Wait,` and `wait` both count for `Wait`.
    pub fn lexicon_ids<S: AsRef<str>>(&self, words: &[S]) -> BTreeSet<TokenId> {
        let wanted: Vec<String> = words.iter().map(|w| w.as_ref().to_ascii_lowercase()).collect();
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                let core = e
                    .trim_matches(|c: char| !(c.is_alphanumeric() || c == '-'))
                    .to_ascii_lowercase();
                !core.is_empty() && wanted.contains(&core)
            })
            .map(|(i, _)| i as TokenId)
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Vec<String> {
        tokens.iter().map(|&t| self.token(t).to_string()).collect()
    }
}

/// A generated response `y`, excluding the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    tokens: Vec<TokenId>,
    think_close: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau_index: Option<usize>,
}

impl Response {
    pub fn new(tokens: Vec<TokenId>, think_close: TokenId) -> Self {
        let tau_index = tokens.iter().position(|&t| t == think_close);
        Self { tokens, think_close, per_token_logprobs: None, tau_index }
    }

    /// Attaches natural-log probabilities, one per token, each `<= 0`.
    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Result<Self, ResponseError> {
        if logprobs.len() != self.tokens.len() {
            return Err(ResponseError::InvalidLogprobs(format!(
                "{} values for {} tokens",
                logprobs.len(),
                self.tokens.len()
            )));
        }
        if let Some((i, lp)) = logprobs.iter().enumerate().find(|(_, lp)| lp.is_nan() || **lp > 0.0) {
            return Err(ResponseError::InvalidLogprobs(format!("entry {i} is {lp}")));
        }
        self.per_token_logprobs = Some(logprobs);
        Ok(self)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn think_close(&self) -> TokenId {
        self.think_close
    }

    pub fn logprobs(&self) -> Option<&[f64]> {
        self.per_token_logprobs.as_deref()
    }

    /// Index of the first `</think>`, if any.
    pub fn tau_index(&self) -> Option<usize> {
        self.tau_index
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Non-thinking iff the first generated token is `</think>`.
    pub fn mode(&self) -> Result<Mode, ResponseError> {
        match self.tokens.first() {
            None => Err(ResponseError::EmptyResponse),
            Some(&t) if t == self.think_close => Ok(Mode::NonThinking),
            Some(_) => Ok(Mode::Thinking),
        }
    }

    /// `|y|`, counting a leading `</think>`.
    pub fn total_length(&self) -> usize {
        self.tokens.len()
    }

    /// `h(y)`: the number of tokens strictly after the first `</think>` of a
    /// thinking-mode response.
    pub fn solution_length(&self) -> Result<usize, ResponseError> {
        if self.mode()? == Mode::NonThinking {
            return Err(ResponseError::WrongMode);
        }
        let tau = self.tau_index.ok_or(ResponseError::NoThinkClose)?;
        Ok(self.tokens.len() - tau - 1)
    }

    pub fn contains_any(&self, lexicon: &BTreeSet<TokenId>) -> bool {
        self.tokens.iter().any(|t| lexicon.contains(t))
    }
}

pub fn classify_mode(response: &Response) -> Result<Mode, ResponseError> {
    response.mode()
}

pub fn solution_length(response: &Response) -> Result<usize, ResponseError> {
    response.solution_length()
}

pub fn total_length(response: &Response) -> usize {
    response.total_length()
}

pub fn contains_thinking_verbs(response: &Response, lexicon: &BTreeSet<TokenId>) -> bool {
    response.contains_any(lexicon)
}

/// Splits raw text into token strings.
pub trait Tokenizer {
    fn name(&self) -> &'static str;
    fn split<'a>(&self, text: &'a str) -> Vec<&'a str>;

    fn tokenize(&self, text: &str, vocab: &mut Vocab) -> Vec<TokenId> {
        self.split(text).into_iter().map(|t| vocab.intern(t)).collect()
    }
}

/// Whitespace splitting; `<think>` and `</think>` are always standalone
/// tokens even when glued to neighbouring text.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

/// Whitespace splitting that additionally separates leading and trailing
/// punctuation from words (`Wait,` becomes `Wait` `,`).
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

fn split_markers(word: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = word;
    while !rest.is_empty() {
        let next = [THINK_CLOSE, THINK_OPEN]
            .iter()
            .filter_map(|m| rest.find(m).map(|i| (i, *m)))
            .min_by_key(|(i, m)| (*i, std::cmp::Reverse(m.len())));
        match next {
            Some((i, m)) => {
                if i > 0 {
                    out.push(&rest[..i]);
                }
                out.push(&rest[i..i + m.len()]);
                rest = &rest[i + m.len()..];
            }
            None => {
                out.push(rest);
                break;
            }
        }
    }
    out
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &'static str {
        "whitespace"
    }

    fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().flat_map(split_markers).collect()
    }
}

impl Tokenizer for WordPunctTokenizer {
    fn name(&self) -> &'static str {
        "word_punct"
    }

    fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        for piece in WhitespaceTokenizer.split(text) {
            if piece == THINK_OPEN || piece == THINK_CLOSE {
                out.push(piece);
                continue;
            }
            let is_word = |c: char| c.is_alphanumeric() || c == '-' || c == '\'';
            let start = piece.find(is_word);
            let end = piece.rfind(is_word).map(|i| i + piece[i..].chars().next().unwrap().len_utf8());
            match (start, end) {
                (Some(s), Some(e)) => {
                    out.extend(piece[..s].char_indices().map(|(i, c)| &piece[i..i + c.len_utf8()]));
                    out.push(&piece[s..e]);
                    out.extend(piece[e..].char_indices().map(|(i, c)| &piece[e + i..e + i + c.len_utf8()]));
                }
                _ => out.extend(piece.char_indices().map(|(i, c)| &piece[i..i + c.len_utf8()])),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    Whitespace,
    WordPunct,
}

impl TokenizerKind {
    pub fn tokenizer(self) -> &'static dyn Tokenizer {
        match self {
            TokenizerKind::Whitespace => &WhitespaceTokenizer,
            TokenizerKind::WordPunct => &WordPunctTokenizer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLOSE: TokenId = 1;
    const THINK: TokenId = 10;
    const SOL: TokenId = 11;
    const ANS_OK: TokenId = 12;
    const WAIT: TokenId = 2;
    const ALT: TokenId = 3;

    fn resp(tokens: &[TokenId]) -> Response {
        Response::new(tokens.to_vec(), CLOSE)
    }

    #[test]
    fn classify_examples() {
        assert_eq!(resp(&[CLOSE, SOL, ANS_OK]).mode(), Ok(Mode::NonThinking));
        assert_eq!(resp(&[THINK, CLOSE, SOL, ANS_OK]).mode(), Ok(Mode::Thinking));
        // regenerated terminator after a leading one is still non-thinking
        assert_eq!(resp(&[CLOSE, WAIT, THINK, CLOSE, SOL, ANS_OK]).mode(), Ok(Mode::NonThinking));
        assert_eq!(resp(&[]).mode(), Err(ResponseError::EmptyResponse));
        assert_eq!(Mode::Thinking.indicator(), 1);
        assert_eq!(Mode::NonThinking.indicator(), 0);
    }

    #[test]
    fn solution_length_examples() {
        assert_eq!(resp(&[THINK, THINK, CLOSE, SOL, SOL, ANS_OK]).solution_length(), Ok(3));
        assert_eq!(resp(&[THINK, CLOSE]).solution_length(), Ok(0));
        assert_eq!(resp(&[THINK, CLOSE, SOL, CLOSE, SOL]).solution_length(), Ok(3));
        assert_eq!(resp(&[THINK, SOL]).solution_length(), Err(ResponseError::NoThinkClose));
        assert_eq!(resp(&[CLOSE, SOL]).solution_length(), Err(ResponseError::WrongMode));
        assert_eq!(resp(&[]).solution_length(), Err(ResponseError::EmptyResponse));
    }

    #[test]
    fn first_marker_semantics_by_scan() {
        // brute force: count positions after the earliest marker
        let toks = [THINK, CLOSE, SOL, CLOSE, SOL];
        let mut seen = false;
        let mut after = 0;
        for &t in &toks {
            if seen {
                after += 1;
            } else if t == CLOSE {
                seen = true;
            }
        }
        assert_eq!(resp(&toks).solution_length(), Ok(after));
        assert_eq!(resp(&toks).tau_index(), Some(1));
    }

    #[test]
    fn total_length_examples() {
        assert_eq!(resp(&[CLOSE, SOL, ANS_OK]).total_length(), 3);
        assert_eq!(resp(&[]).total_length(), 0);
        let mut t = vec![THINK; 5];
        t.extend([CLOSE, SOL, SOL, ANS_OK]);
        assert_eq!(resp(&t).total_length(), 9);
    }

    #[test]
    fn verb_examples() {
        let lex: BTreeSet<_> = [WAIT].into();
        assert!(contains_thinking_verbs(&resp(&[CLOSE, WAIT, SOL, ANS_OK]), &lex));
        assert!(!contains_thinking_verbs(&resp(&[CLOSE, SOL, ANS_OK]), &lex));
        let lex2: BTreeSet<_> = [WAIT, ALT].into();
        assert!(contains_thinking_verbs(&resp(&[WAIT]), &lex2));
    }

    #[test]
    fn logprobs_validation() {
        let r = resp(&[CLOSE, SOL]);
        assert!(r.clone().with_logprobs(vec![-0.1, 0.0]).is_ok());
        assert!(r.clone().with_logprobs(vec![-0.1]).is_err());
        assert!(r.clone().with_logprobs(vec![-0.1, 0.2]).is_err());
        assert!(r.with_logprobs(vec![-0.1, f64::NAN]).is_err());
    }

    #[test]
    fn vocab_json_round_trip_and_density() {
        let v = Vocab::base();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);

        let bad = r#"{"tokens": {"<think>": 0, "</think>": 2}, "special": {"think_open": "<think>", "think_close": "</think>"}}"#;
        assert!(matches!(Vocab::from_json(bad), Err(VocabError::NotDense { .. })));
        let missing = r#"{"tokens": {"<think>": 0}, "special": {"think_open": "<think>", "think_close": "</think>"}}"#;
        assert!(matches!(Vocab::from_json(missing), Err(VocabError::MissingSpecial { .. })));
    }

    #[test]
    fn whitespace_tokenizer_isolates_markers() {
        let t = WhitespaceTokenizer;
        assert_eq!(t.split("  </think> The answer is 4"), vec!["</think>", "The", "answer", "is", "4"]);
        assert_eq!(t.split("abc</think>def"), vec!["abc", "</think>", "def"]);
        assert_eq!(t.split("<think></think>x"), vec!["<think>", "</think>", "x"]);
        assert_eq!(WordPunctTokenizer.split("Wait, (ok)"), vec!["Wait", ",", "(", "ok", ")"]);
    }

    #[test]
    fn lexicon_matching_ignores_punctuation_and_case() {
        let mut v = Vocab::base();
        let a = v.intern("Wait,");
        let b = v.intern("wait");
        let c = v.intern("Waiting");
        let d = v.intern("double-check:");
        let ids = v.lexicon_ids(&DEFAULT_LEXICON);
        assert!(ids.contains(&a) && ids.contains(&b) && ids.contains(&d));
        assert!(!ids.contains(&c));
        assert!(ids.contains(&v.id("Wait").unwrap()));
    }
}
