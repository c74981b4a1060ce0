//! Corpus loading, splitting and the end-to-end audit pipeline.
//!
//! Three on-disk shapes are read here:
//!
//! * IFTTT-style CSV: header with `title`, `description`, `triggerTitle`,
//!   `actionTitle` (any order, extra columns ignored, optional `id`).
//! * Rule-set CSV: `rule_id, trigger_title, trigger_channel, action_title,
//!   action_channel, location, description`; only `rule_id`,
//!   `trigger_title` and `action_title` are required.
//! * App descriptors: JSON `{"apps": [...]}`, see [`AppDescriptor`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ChannelCatalog, EffectSource};
use crate::detector::{detect_all, DetectError, DetectOptions, VulnerabilityReport};
use crate::extraction::{specificity_of, SpecificityLabel, TruthRecord};
use crate::model::{make_rule, normalize_service_name, ChannelId, ChannelSet, ModelError, RuleSet, TriggerActionRule};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("test fraction must be strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("descriptor error: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub record_id: String,
    pub title: String,
    pub description: String,
    pub truth_trigger_title: String,
    pub truth_action_title: String,
    pub joined_text: String,
}

impl CorpusRecord {
    pub fn new(
        record_id: impl Into<String>,
        title: &str,
        description: &str,
        trigger: &str,
        action: &str,
        separator: &str,
    ) -> Result<Self, ModelError> {
        let joined_text = join_text(title, description, separator);
        if joined_text.is_empty() {
            return Err(ModelError::NameEmpty(String::new()));
        }
        Ok(CorpusRecord {
            record_id: record_id.into(),
            title: title.to_string(),
            description: description.to_string(),
            truth_trigger_title: normalize_service_name(trigger)?,
            truth_action_title: normalize_service_name(action)?,
            joined_text,
        })
    }

    pub fn truth(&self) -> TruthRecord {
        TruthRecord::new(&self.record_id, &self.truth_trigger_title, &self.truth_action_title)
    }

    pub fn specificity(&self) -> SpecificityLabel {
        classify_specificity(self)
    }
}

fn join_text(title: &str, description: &str, separator: &str) -> String {
    match (title.trim(), description.trim()) {
        ("", d) => d.to_string(),
        (t, "") => t.to_string(),
        (t, d) => format!("{t}{separator}{d}"),
    }
}

/// Specific iff both ground-truth titles appear in the joined text.
pub fn classify_specificity(record: &CorpusRecord) -> SpecificityLabel {
    specificity_of(
        &record.joined_text,
        &record.truth_trigger_title,
        &record.truth_action_title,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedRow {
    /// 1-based line number in the source, header is line 1.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedCorpus {
    pub records: Vec<CorpusRecord>,
    pub dropped: Vec<DroppedRow>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub separator: String,
    pub filter_noise: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            separator: " ".to_string(),
            filter_noise: true,
        }
    }
}

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "to", "of", "in", "on", "off", "at", "for", "with", "by", "from", "and", "or", "if", "when",
    "then", "is", "are", "be", "it", "my", "your", "me", "you", "i", "new", "all", "every", "get", "turn", "send",
    "save", "post", "add", "this", "that", "as", "up", "into", "whenever",
];

/// Reason to drop `text` as non-English noise, if any.
///
/// Kept text must be at least 90% ASCII among its alphabetic characters and
/// contain at least one common English function word.
pub fn noise_reason(text: &str) -> Option<String> {
    let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return Some("no alphabetic characters".into());
    }
    let ascii = letters.iter().filter(|c| c.is_ascii()).count();
    if (ascii as f64) < 0.9 * letters.len() as f64 {
        return Some(format!("{}% non-ASCII letters", 100 - 100 * ascii / letters.len()));
    }
    if text
        .chars()
        .any(|c| c.is_control() && c != '\t' && c != '\n' && c != '\r')
    {
        return Some("control characters".into());
    }
    let lower = text.to_lowercase();
    let has_stop_word = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .any(|w| STOP_WORDS.contains(&w));
    if !has_stop_word {
        return Some("no English function words".into());
    }
    None
}

/// Load IFTTT-style records.
///
/// Rows failing the noise filter are dropped and listed in
/// [`LoadedCorpus::dropped`]; structurally broken rows are errors.
pub fn load_ifttt_csv<R: Read>(source: R, options: &LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(LoadedCorpus::default());
    }
    let col = |name: &str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let title_c = col("title")?;
    let desc_c = col("description")?;
    let trig_c = col("triggerTitle")?;
    let act_c = col("actionTitle")?;
    let id_c = headers.iter().position(|h| h.trim() == "id");

    let mut out = LoadedCorpus::default();
    let mut ids = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CorpusError::Parse {
            row: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(i + 2, |p| p.line() as usize);
        let field = |c: usize, name: &str| -> Result<&str, CorpusError> {
            match row.get(c).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(CorpusError::Parse {
                    row: line,
                    message: format!("missing {name}"),
                }),
            }
        };
        let title = row.get(title_c).unwrap_or("").trim();
        let description = row.get(desc_c).unwrap_or("").trim();
        let trigger = field(trig_c, "triggerTitle")?;
        let action = field(act_c, "actionTitle")?;
        let record_id = match id_c {
            Some(c) => field(c, "id")?.to_string(),
            None => format!("row{line}"),
        };
        if !ids.insert(record_id.clone()) {
            return Err(CorpusError::Parse {
                row: line,
                message: format!("duplicate id {record_id:?}"),
            });
        }
        let joined = join_text(title, description, &options.separator);
        if joined.is_empty() {
            return Err(CorpusError::Parse {
                row: line,
                message: "title and description are both empty".into(),
            });
        }
        if options.filter_noise {
            if let Some(reason) = noise_reason(&joined) {
                log::info!("dropping row {line}: {reason}");
                out.dropped.push(DroppedRow { row: line, reason });
                continue;
            }
        }
        let record =
            CorpusRecord::new(record_id, title, description, trigger, action, &options.separator).map_err(|e| {
                CorpusError::Parse {
                    row: line,
                    message: e.to_string(),
                }
            })?;
        out.records.push(record);
    }
    Ok(out)
}

/// Write records back in the IFTTT CSV shape (with an `id` column).
pub fn write_ifttt_csv<W: Write>(out: W, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "title", "description", "triggerTitle", "actionTitle"])?;
    for r in records {
        w.write_record([
            r.record_id.as_str(),
            r.title.as_str(),
            r.description.as_str(),
            r.truth_trigger_title.as_str(),
            r.truth_action_title.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded train/test split. The test set holds `round(n * test_fraction)`
/// records; both halves keep the corpus order.
pub fn split_train_test(
    corpus: &[CorpusRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<CorpusRecord>, Vec<CorpusRecord>), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let n = corpus.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (rec, t) in corpus.iter().zip(is_test) {
        if t {
            test.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Deserialize)]
struct RuleRow {
    rule_id: String,
    trigger_title: String,
    #[serde(default)]
    trigger_channel: Option<String>,
    action_title: String,
    #[serde(default)]
    action_channel: Option<String>,
    #[serde(default)]
    location: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

impl RuleRow {
    fn into_rule(self) -> Result<TriggerActionRule, ModelError> {
        let rule = make_rule(
            &self.rule_id,
            &self.trigger_title,
            self.trigger_channel.as_deref(),
            &self.action_title,
            self.action_channel.as_deref(),
            self.location.as_deref(),
        )?;
        Ok(match self.description.filter(|d| !d.trim().is_empty()) {
            Some(d) => rule.with_description(d),
            None => rule,
        })
    }
}

/// Load a rule-set CSV.
pub fn load_rule_set<R: Read>(source: R) -> Result<RuleSet, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut rules = RuleSet::default();
    for (i, row) in rdr.deserialize::<RuleRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CorpusError::Parse {
            row: line,
            message: e.to_string(),
        })?;
        let rule = row.into_rule().map_err(|e| CorpusError::Parse {
            row: line,
            message: e.to_string(),
        })?;
        rules.push(rule)?;
    }
    Ok(rules)
}

/// One rule inside an app descriptor file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorRule {
    pub rule_id: String,
    pub trigger_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_channel: Option<String>,
    pub action_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_channel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    /// Effect channels of the action service as assigned for this app.
    #[serde(default)]
    pub channels: Vec<ChannelId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DescriptorFile {
    apps: Vec<RawApp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawApp {
    app_id: String,
    #[serde(default)]
    description: String,
    rules: Vec<DescriptorRule>,
}

/// An app: its description, rules and per-rule assigned effect channels.
///
/// Rule ids are qualified as `app_id/rule_id` so apps may reuse local ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppDescriptor {
    pub app_id: String,
    pub description: String,
    pub rules: Vec<TriggerActionRule>,
    pub assigned_channels: Vec<ChannelSet>,
}

impl AppDescriptor {
    pub fn new(
        app_id: &str,
        description: &str,
        rules: Vec<(TriggerActionRule, ChannelSet)>,
    ) -> Result<Self, CorpusError> {
        let app_id = app_id.trim();
        if app_id.is_empty() {
            return Err(CorpusError::Descriptor("empty app_id".into()));
        }
        if rules.is_empty() {
            return Err(CorpusError::Descriptor(format!("app {app_id:?} has no rules")));
        }
        let (rules, assigned_channels): (Vec<_>, Vec<_>) = rules
            .into_iter()
            .map(|(mut r, ch)| {
                r.rule_id = format!("{app_id}/{}", r.rule_id);
                (r, ch)
            })
            .unzip();
        Ok(AppDescriptor {
            app_id: app_id.to_string(),
            description: description.to_string(),
            rules,
            assigned_channels,
        })
    }
}

pub fn load_descriptors<R: Read>(source: R) -> Result<Vec<AppDescriptor>, CorpusError> {
    let file: DescriptorFile = serde_json::from_reader(source)?;
    let mut apps = Vec::with_capacity(file.apps.len());
    let mut seen = HashSet::new();
    for raw in file.apps {
        if !seen.insert(raw.app_id.clone()) {
            return Err(CorpusError::Descriptor(format!("duplicate app_id {:?}", raw.app_id)));
        }
        let mut rules = Vec::with_capacity(raw.rules.len());
        for r in raw.rules {
            let mut rule = make_rule(
                &r.rule_id,
                &r.trigger_title,
                r.trigger_channel.as_deref(),
                &r.action_title,
                r.action_channel.as_deref(),
                r.location.as_deref(),
            )
            .map_err(|e| CorpusError::Descriptor(format!("app {:?} rule {:?}: {e}", raw.app_id, r.rule_id)))?;
            if !raw.description.is_empty() {
                rule = rule.with_description(raw.description.clone());
            }
            rules.push((rule, r.channels.into_iter().collect()));
        }
        apps.push(AppDescriptor::new(&raw.app_id, &raw.description, rules)?);
    }
    Ok(apps)
}

/// Which effect source wins when both the catalog and the descriptor assign
/// channels to a rule's action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelPrecedence {
    /// Catalog entry wins; descriptor channels fill in services the catalog lacks.
    #[default]
    Catalog,
    /// Non-empty descriptor channels win; the catalog fills in the rest.
    Descriptor,
    Union,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AuditOptions {
    pub detect: DetectOptions,
    pub precedence: ChannelPrecedence,
}

/// Per-rule effect sets resolved from a catalog and descriptor assignments.
#[derive(Debug, Clone)]
pub struct ResolvedEffects {
    by_rule: HashMap<String, ChannelSet>,
}

impl ResolvedEffects {
    pub fn resolve(apps: &[AppDescriptor], catalog: &ChannelCatalog, precedence: ChannelPrecedence) -> Self {
        let mut by_rule = HashMap::new();
        for app in apps {
            for (rule, assigned) in app.rules.iter().zip(&app.assigned_channels) {
                let service = rule.action_title();
                let from_catalog = catalog.effects_of(service);
                let effects = match precedence {
                    ChannelPrecedence::Catalog if catalog.contains(service) => from_catalog,
                    ChannelPrecedence::Catalog => *assigned,
                    ChannelPrecedence::Descriptor if !assigned.is_empty() => *assigned,
                    ChannelPrecedence::Descriptor => from_catalog,
                    ChannelPrecedence::Union => from_catalog.union(*assigned),
                };
                by_rule.insert(rule.rule_id.clone(), effects);
            }
        }
        ResolvedEffects { by_rule }
    }
}

impl EffectSource for ResolvedEffects {
    fn action_effects(&self, rule: &TriggerActionRule) -> ChannelSet {
        self.by_rule.get(&rule.rule_id).copied().unwrap_or_default()
    }
}

/// Flatten all apps' rules, resolve their effects and run detection.
pub fn run_audit(
    apps: &[AppDescriptor],
    catalog: &ChannelCatalog,
    options: &AuditOptions,
) -> Result<VulnerabilityReport, CorpusError> {
    let rules: Vec<TriggerActionRule> = apps.iter().flat_map(|a| a.rules.iter().cloned()).collect();
    let effects = ResolvedEffects::resolve(apps, catalog, options.precedence);
    Ok(detect_all(&rules, &effects, &options.detect)?)
}

/// Distinct locations used by a set of apps.
pub fn app_locations(apps: &[AppDescriptor]) -> BTreeSet<String> {
    apps.iter()
        .flat_map(|a| a.rules.iter().map(|r| r.location.clone()))
        .collect()
}
