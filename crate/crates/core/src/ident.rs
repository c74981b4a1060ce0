//! Environment-channel identification from descriptions.
//!
//! Two back ends sit behind [`ChannelIdentifier`]: a deterministic cue-word
//! [`LexiconIdentifier`] and the LLM client in [`crate::remote`], which sends
//! the prompt from [`build_prompt`] and reads replies with
//! [`parse_llm_response`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::listfile;
use crate::model::ChannelId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentError {
    #[error("no descriptions to identify")]
    EmptyBatch,
    #[error("response line {0}: malformed, expected `keyword, score` or `None`")]
    MalformedLine(usize),
    #[error("response line {0}: keyword is not one of the six channels")]
    UnknownKeyword(usize),
    #[error("length mismatch: {predictions} predictions vs {truth} truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("remote identifier: {0}")]
    Remote(String),
}

/// Most similar channel for one description, or `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPrediction {
    channel: Option<ChannelId>,
    score: Option<f64>,
}

impl ChannelPrediction {
    pub fn none() -> Self {
        ChannelPrediction {
            channel: None,
            score: None,
        }
    }

    /// `score` is clamped into `[0, 1]`; NaN becomes 0.
    pub fn new(channel: ChannelId, score: f64) -> Self {
        let score = if score.is_nan() { 0.0 } else { score.clamp(0.0, 1.0) };
        ChannelPrediction {
            channel: Some(channel),
            score: Some(score),
        }
    }

    pub fn channel(&self) -> Option<ChannelId> {
        self.channel
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }
}

/// Response-line form: `keyword, score` or `None`.
impl fmt::Display for ChannelPrediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.channel, self.score) {
            (Some(c), Some(s)) => write!(f, "{}, {}", c.keyword(), s),
            _ => f.write_str("None"),
        }
    }
}

pub fn serialize_predictions(predictions: &[ChannelPrediction]) -> String {
    predictions.iter().map(|p| format!("{p}\n")).collect()
}

/// The keyword list exactly as it appears in the prompt.
pub const PROMPT_KEYWORDS: &str = r#"["temperature","illumination","humidity","smoke","sound","air quality"]"#;

/// Build the identification prompt for a batch of descriptions.
///
/// Descriptions are embedded as JSON string literals, in input order.
pub fn build_prompt<S: AsRef<str>>(descriptions: &[S]) -> Result<String, IdentError> {
    if descriptions.is_empty() {
        return Err(IdentError::EmptyBatch);
    }
    let sentences: Vec<String> = descriptions
        .iter()
        .map(|d| serde_json::to_string(d.as_ref()).expect("string serialization"))
        .collect();
    Ok(format!(
        "Please compute the similarity between a sample in the sentence list with every element \
         in the keyword list. The output should be the most similar keyword with a similarity \
         score for each sample. If no keyword is matched, print \"None\". The output is in the \
         format of: \"keyword, score\" or \"None\". The keyword list is {PROMPT_KEYWORDS}. \
         The sentence list is [{}].",
        sentences.join(",")
    ))
}

/// Parse a model reply, one prediction per non-blank line.
///
/// Lines may carry a list number (`3.` or `3)`) and surrounding quotes;
/// both are stripped. Scores must lie in `[0, 1]`.
pub fn parse_llm_response(text: &str) -> Result<Vec<ChannelPrediction>, IdentError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_decorations(raw);
        if line.is_empty() {
            continue;
        }
        if line.eq_ignore_ascii_case("none") {
            out.push(ChannelPrediction::none());
            continue;
        }
        let (keyword, score) = line.rsplit_once(',').ok_or(IdentError::MalformedLine(line_no))?;
        let score: f64 = score.trim().parse().map_err(|_| IdentError::MalformedLine(line_no))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(IdentError::MalformedLine(line_no));
        }
        let keyword = keyword.trim().trim_matches('"');
        if keyword.is_empty() {
            return Err(IdentError::MalformedLine(line_no));
        }
        let channel = keyword
            .parse::<ChannelId>()
            .map_err(|_| IdentError::UnknownKeyword(line_no))?;
        out.push(ChannelPrediction::new(channel, score));
    }
    Ok(out)
}

fn strip_decorations(raw: &str) -> &str {
    let mut line = raw.trim();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.starts_with(char::is_whitespace) {
                line = r.trim_start();
            }
        }
    }
    if line.len() >= 2 && line.starts_with('"') && line.ends_with('"') {
        line = line[1..line.len() - 1].trim();
    }
    line
}

/// Fraction of positions where the predicted channel equals the truth
/// (`None` matches `None`).
pub fn score_identification(predictions: &[ChannelPrediction], truth: &[Option<ChannelId>]) -> Result<f64, IdentError> {
    if predictions.len() != truth.len() {
        return Err(IdentError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(IdentError::EmptyBatch);
    }
    let correct = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.channel() == **t)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Parse a truth label: a channel name or `None`.
pub fn parse_truth_label(raw: &str) -> Result<Option<ChannelId>, IdentError> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("none") || raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<ChannelId>()
        .map(Some)
        .map_err(|_| IdentError::Lexicon(format!("unknown channel label {raw:?}")))
}

/// Lowercase word tokens; hyphens inside words are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Cue words (or multi-word phrases) per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLexicon {
    cues: BTreeMap<ChannelId, BTreeSet<Vec<String>>>,
}

impl ChannelLexicon {
    /// Every channel needs at least one cue.
    pub fn new<I, S>(cues: I) -> Result<Self, IdentError>
    where
        I: IntoIterator<Item = (ChannelId, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut map: BTreeMap<ChannelId, BTreeSet<Vec<String>>> = BTreeMap::new();
        for (channel, words) in cues {
            let slot = map.entry(channel).or_default();
            for w in words {
                let toks = tokenize(w.as_ref());
                if toks.is_empty() {
                    return Err(IdentError::Lexicon(format!("empty cue for {channel}")));
                }
                slot.insert(toks);
            }
        }
        for c in ChannelId::ALL {
            if map.get(&c).is_none_or(BTreeSet::is_empty) {
                return Err(IdentError::Lexicon(format!("channel {c} has no cues")));
            }
        }
        Ok(ChannelLexicon { cues: map })
    }

    /// Load from `channel: [cue, cue, ...]` lines.
    pub fn load(source: &str) -> Result<Self, IdentError> {
        let entries =
            listfile::parse(source).map_err(|e| IdentError::Lexicon(format!("line {}: {}", e.line, e.message)))?;
        let mut cues = Vec::new();
        for e in entries {
            let channel = e
                .key
                .parse::<ChannelId>()
                .map_err(|_| IdentError::Lexicon(format!("line {}: unknown channel {:?}", e.line, e.key)))?;
            cues.push((channel, e.items));
        }
        Self::new(cues)
    }

    pub fn builtin() -> Self {
        Self::load(BUILTIN_LEXICON).expect("builtin lexicon is valid")
    }

    pub fn cues(&self, channel: ChannelId) -> impl Iterator<Item = String> + '_ {
        self.cues[&channel].iter().map(|t| t.join(" "))
    }
}

pub const BUILTIN_LEXICON: &str = include_str!("../fixtures/channel_lexicon.txt");

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Score each channel by distinct cues present over token count (capped at 1)
/// and return the best. Ties go to the earlier channel in canonical order.
pub fn identify_lexicon(description: &str, lexicon: &ChannelLexicon) -> ChannelPrediction {
    let tokens = tokenize(description);
    if tokens.is_empty() {
        return ChannelPrediction::none();
    }
    let mut best: Option<(ChannelId, usize)> = None;
    for channel in ChannelId::ALL {
        let hits = lexicon.cues[&channel]
            .iter()
            .filter(|cue| contains_phrase(&tokens, cue))
            .count();
        if hits > 0 && best.is_none_or(|(_, h)| hits > h) {
            best = Some((channel, hits));
        }
    }
    match best {
        Some((channel, hits)) => ChannelPrediction::new(channel, hits as f64 / tokens.len() as f64),
        None => ChannelPrediction::none(),
    }
}

pub trait ChannelIdentifier {
    fn identify_batch(&self, descriptions: &[String]) -> Result<Vec<ChannelPrediction>, IdentError>;
}

#[derive(Debug, Clone)]
pub struct LexiconIdentifier {
    lexicon: ChannelLexicon,
}

impl LexiconIdentifier {
    pub fn new(lexicon: ChannelLexicon) -> Self {
        LexiconIdentifier { lexicon }
    }
}

impl Default for LexiconIdentifier {
    fn default() -> Self {
        Self::new(ChannelLexicon::builtin())
    }
}

impl ChannelIdentifier for LexiconIdentifier {
    fn identify_batch(&self, descriptions: &[String]) -> Result<Vec<ChannelPrediction>, IdentError> {
        if descriptions.is_empty() {
            return Err(IdentError::EmptyBatch);
        }
        Ok(descriptions
            .iter()
            .map(|d| identify_lexicon(d, &self.lexicon))
            .collect())
    }
}
