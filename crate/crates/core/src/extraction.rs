//! Baseline rule extraction and exact-match evaluation.
//!
//! The extractor splits a description into a trigger clause and an action
//! clause on a connective, then picks the longest service alias found in
//! each clause. It only recovers services that are named in the text; vague
//! descriptions mostly come out as `unknown`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::tokenize;
use crate::listfile;
use crate::model::normalize_service_name;

/// Title emitted when a clause names no known service.
pub const UNKNOWN_TITLE: &str = "unknown";

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("length mismatch: {predictions} predictions vs {truth} ground-truth records")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateRecordId(String),
    #[error("prediction for record {0:?} has no ground truth")]
    UnknownRecord(String),
    #[error("service lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("predictions file row {row}: {message}")]
    PredictionsFormat { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPrediction {
    pub record_id: String,
    pub predicted_trigger_title: String,
    pub predicted_action_title: String,
}

impl ExtractionPrediction {
    /// Titles are normalized; anything that normalizes to nothing becomes `unknown`.
    pub fn new(record_id: impl Into<String>, trigger: &str, action: &str) -> Self {
        ExtractionPrediction {
            record_id: record_id.into(),
            predicted_trigger_title: normalize_or_unknown(trigger),
            predicted_action_title: normalize_or_unknown(action),
        }
    }
}

fn normalize_or_unknown(title: &str) -> String {
    normalize_service_name(title).unwrap_or_else(|_| UNKNOWN_TITLE.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecificityLabel {
    Specific,
    Vague,
}

impl fmt::Display for SpecificityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecificityLabel::Specific => "specific",
            SpecificityLabel::Vague => "vague",
        })
    }
}

/// Record subset selector for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Specific,
    Vague,
    All,
}

impl Group {
    pub fn admits(self, label: SpecificityLabel) -> bool {
        match self {
            Group::All => true,
            Group::Specific => label == SpecificityLabel::Specific,
            Group::Vague => label == SpecificityLabel::Vague,
        }
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "specific" => Ok(Group::Specific),
            "vague" => Ok(Group::Vague),
            "all" => Ok(Group::All),
            other => Err(format!("unknown group {other:?} (expected specific, vague or all)")),
        }
    }
}

/// A description is specific when both normalized titles occur as substrings
/// of the normalized description.
pub fn specificity_of(description: &str, trigger_title: &str, action_title: &str) -> SpecificityLabel {
    let Ok(text) = normalize_service_name(description) else {
        return SpecificityLabel::Vague;
    };
    let named = |title: &str| {
        normalize_service_name(title)
            .map(|t| text.contains(&t))
            .unwrap_or(false)
    };
    if named(trigger_title) && named(action_title) {
        SpecificityLabel::Specific
    } else {
        SpecificityLabel::Vague
    }
}

static IF_THEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)^\s*if\s+(.+?)\s*,?\s+then\b\s*(.+)$").unwrap());
static IF_COMMA: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)^\s*if\s+(.+?)\s*,\s*(.+)$").unwrap());
static WHEN_COMMA: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)^\s*when(?:ever)?\s+(.+?)\s*,\s*(.+)$").unwrap());
static Y_WHEN_X: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)^(.+?)\s*,?\s+when(?:ever)?\s+(.+)$").unwrap());
static Y_IF_X: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)^(.+?)\s*,?\s+if\s+(.+)$").unwrap());

fn clean_clause(s: &str) -> String {
    s.trim().trim_end_matches(['.', '!', '?', ',', ';']).trim().to_string()
}

/// Split a description into `(trigger_clause, action_clause)`.
///
/// Patterns are tried in order, case-insensitively: `if X then Y`,
/// `if X, Y`, `when X, Y`, `Y when X`, `Y if X`. Without a connective both
/// clauses are the whole text.
pub fn split_clauses(description: &str) -> (String, String) {
    let forward = [&*IF_THEN, &*IF_COMMA, &*WHEN_COMMA];
    for re in forward {
        if let Some(c) = re.captures(description) {
            return (clean_clause(&c[1]), clean_clause(&c[2]));
        }
    }
    for re in [&*Y_WHEN_X, &*Y_IF_X] {
        if let Some(c) = re.captures(description) {
            return (clean_clause(&c[2]), clean_clause(&c[1]));
        }
    }
    let whole = clean_clause(description);
    (whole.clone(), whole)
}

/// Service name → surface aliases. The service name itself (underscores read
/// as spaces) is always an alias.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceLexicon {
    aliases: BTreeMap<String, BTreeSet<Vec<String>>>,
}

impl ServiceLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a service (normalized) with extra aliases. Unnormalizable names are ignored.
    pub fn add<I, S>(&mut self, service: &str, aliases: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let Ok(name) = normalize_service_name(service) else {
            return;
        };
        let slot = self.aliases.entry(name.clone()).or_default();
        slot.insert(tokenize(&name.replace('_', " ")));
        for a in aliases {
            let toks = tokenize(a.as_ref());
            if !toks.is_empty() {
                slot.insert(toks);
            }
        }
    }

    /// Every title aliased only by itself.
    pub fn self_aliased<I, S>(titles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = ServiceLexicon::new();
        for t in titles {
            lex.add(t.as_ref(), std::iter::empty::<&str>());
        }
        lex
    }

    /// Load `service: [alias, ...]` lines.
    pub fn load(source: &str) -> Result<Self, ExtractionError> {
        let entries = listfile::parse(source).map_err(|e| ExtractionError::Lexicon {
            line: e.line,
            message: e.message,
        })?;
        let mut lex = ServiceLexicon::new();
        for e in entries {
            if normalize_service_name(&e.key).is_err() {
                return Err(ExtractionError::Lexicon {
                    line: e.line,
                    message: format!("service name {:?} is empty after normalization", e.key),
                });
            }
            lex.add(&e.key, &e.items);
        }
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    pub fn services(&self) -> impl Iterator<Item = &str> {
        self.aliases.keys().map(String::as_str)
    }

    /// All alias hits in `tokens`, ranked best first: longest alias, then
    /// earliest position, then service name.
    fn ranked_matches(&self, tokens: &[String]) -> Vec<AliasHit<'_>> {
        let mut hits = Vec::new();
        for (service, aliases) in &self.aliases {
            for alias in aliases {
                let width: usize = alias.iter().map(String::len).sum::<usize>() + alias.len() - 1;
                if let Some(pos) = tokens.windows(alias.len()).position(|w| w == alias.as_slice()) {
                    hits.push(AliasHit { service, width, pos });
                }
            }
        }
        hits.sort_by(|a, b| {
            b.width
                .cmp(&a.width)
                .then(a.pos.cmp(&b.pos))
                .then(a.service.cmp(b.service))
        });
        hits
    }
}

#[derive(Debug, Clone, Copy)]
struct AliasHit<'a> {
    service: &'a str,
    width: usize,
    pos: usize,
}

/// Extract `(trigger_title, action_title)` from a description.
///
/// When no connective splits the text, the two best-ranked distinct services
/// are taken and ordered by where they occur.
pub fn extract_rule(record_id: &str, description: &str, lexicon: &ServiceLexicon) -> ExtractionPrediction {
    let (trigger_clause, action_clause) = split_clauses(description);
    if trigger_clause == action_clause {
        let hits = lexicon.ranked_matches(&tokenize(&trigger_clause));
        let Some(first) = hits.first().copied() else {
            return ExtractionPrediction::new(record_id, UNKNOWN_TITLE, UNKNOWN_TITLE);
        };
        let second = hits.iter().find(|h| h.service != first.service).copied();
        return match second {
            None => ExtractionPrediction::new(record_id, first.service, first.service),
            Some(second) => {
                let (t, a) = if second.pos < first.pos {
                    (second, first)
                } else {
                    (first, second)
                };
                ExtractionPrediction::new(record_id, t.service, a.service)
            }
        };
    }
    let best = |clause: &str| {
        lexicon
            .ranked_matches(&tokenize(clause))
            .first()
            .map(|h| h.service.to_string())
            .unwrap_or_else(|| UNKNOWN_TITLE.to_string())
    };
    ExtractionPrediction::new(record_id, &best(&trigger_clause), &best(&action_clause))
}

/// Ground truth for one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRecord {
    pub record_id: String,
    pub trigger_title: String,
    pub action_title: String,
}

impl TruthRecord {
    pub fn new(record_id: impl Into<String>, trigger: &str, action: &str) -> Self {
        TruthRecord {
            record_id: record_id.into(),
            trigger_title: normalize_or_unknown(trigger),
            action_title: normalize_or_unknown(action),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    /// Both titles belong to the ground truth but in the wrong order.
    OrderFlipped,
    /// At least one predicted title is not in the ground truth.
    TitleMismatch,
}

/// Judge one prediction. Correct requires both titles to exist in the ground
/// truth and the trigger/action order to match.
pub fn judge(prediction: &ExtractionPrediction, truth: &TruthRecord) -> Verdict {
    let t = prediction.predicted_trigger_title.as_str();
    let a = prediction.predicted_action_title.as_str();
    let in_truth =
        |title: &str| title != UNKNOWN_TITLE && (title == truth.trigger_title || title == truth.action_title);
    if !(in_truth(t) && in_truth(a)) {
        return Verdict::TitleMismatch;
    }
    if t == truth.trigger_title && a == truth.action_title {
        Verdict::Correct
    } else {
        Verdict::OrderFlipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub order_flipped: usize,
    pub title_mismatch: usize,
    pub total: usize,
}

impl Accuracy {
    /// `correct / total`, `None` for an empty sample.
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Exact-match accuracy, pairing predictions and truth by record id.
pub fn evaluate_accuracy(
    predictions: &[ExtractionPrediction],
    truth: &[TruthRecord],
) -> Result<Accuracy, ExtractionError> {
    if predictions.len() != truth.len() {
        return Err(ExtractionError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    let mut by_id: HashMap<&str, &TruthRecord> = HashMap::with_capacity(truth.len());
    for t in truth {
        if by_id.insert(&t.record_id, t).is_some() {
            return Err(ExtractionError::DuplicateRecordId(t.record_id.clone()));
        }
    }
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut acc = Accuracy {
        total: truth.len(),
        ..Accuracy::default()
    };
    for p in predictions {
        if !seen.insert(p.record_id.as_str()) {
            return Err(ExtractionError::DuplicateRecordId(p.record_id.clone()));
        }
        let t = by_id
            .get(p.record_id.as_str())
            .ok_or_else(|| ExtractionError::UnknownRecord(p.record_id.clone()))?;
        match judge(p, t) {
            Verdict::Correct => acc.correct += 1,
            Verdict::OrderFlipped => acc.order_flipped += 1,
            Verdict::TitleMismatch => acc.title_mismatch += 1,
        }
    }
    Ok(acc)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    record_id: String,
    trigger_title: String,
    action_title: String,
}

/// Predictions wire format: CSV with header `record_id,trigger_title,action_title`.
pub fn write_predictions<W: Write>(out: W, predictions: &[ExtractionPrediction]) -> Result<(), ExtractionError> {
    let mut w = csv::Writer::from_writer(out);
    for p in predictions {
        w.serialize(PredictionRow {
            record_id: p.record_id.clone(),
            trigger_title: p.predicted_trigger_title.clone(),
            action_title: p.predicted_action_title.clone(),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<ExtractionPrediction>, ExtractionError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| ExtractionError::PredictionsFormat {
            row: i + 2,
            message: e.to_string(),
        })?;
        if row.record_id.is_empty() {
            return Err(ExtractionError::PredictionsFormat {
                row: i + 2,
                message: "empty record_id".into(),
            });
        }
        out.push(ExtractionPrediction::new(
            row.record_id,
            &row.trigger_title,
            &row.action_title,
        ));
    }
    Ok(out)
}
