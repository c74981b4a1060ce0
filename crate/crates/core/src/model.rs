//! Service and trigger-action rule types.
//!
//! A rule is `trigger -> action` where the trigger names a service plus the
//! event it reports (an environment channel, a device-state token, or
//! nothing) and the action names a service plus the functionality invoked.
//! All titles are canonical service names produced by
//! [`normalize_service_name`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Location sentinel for rules whose placement is not known.
pub const UNSPECIFIED_LOCATION: &str = "unspecified";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("service name is empty after normalization (input {0:?})")]
    NameEmpty(String),
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("unknown environment channel {0:?}")]
    UnknownChannel(String),
}

/// One of the six physical environment channels.
///
/// The declaration order is the canonical channel order used for tie-breaks,
/// prompt keyword lists and set rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelId {
    Temperature,
    Illumination,
    Humidity,
    Smoke,
    Sound,
    AirQuality,
}

impl ChannelId {
    pub const ALL: [ChannelId; 6] = [
        ChannelId::Temperature,
        ChannelId::Illumination,
        ChannelId::Humidity,
        ChannelId::Smoke,
        ChannelId::Sound,
        ChannelId::AirQuality,
    ];

    /// Canonical identifier, e.g. `air_quality`.
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelId::Temperature => "temperature",
            ChannelId::Illumination => "illumination",
            ChannelId::Humidity => "humidity",
            ChannelId::Smoke => "smoke",
            ChannelId::Sound => "sound",
            ChannelId::AirQuality => "air_quality",
        }
    }

    /// Human keyword, e.g. `air quality`.
    pub fn keyword(self) -> &'static str {
        match self {
            ChannelId::AirQuality => "air quality",
            other => other.as_str(),
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelId {
    type Err = ModelError;

    /// Case-insensitive; `air quality`, `air-quality` and `air_quality` are
    /// all accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        ChannelId::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| ModelError::UnknownChannel(s.to_string()))
    }
}

impl Serialize for ChannelId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ChannelId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A set of environment channels, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const fn empty() -> Self {
        ChannelSet(0)
    }

    pub fn single(channel: ChannelId) -> Self {
        ChannelSet(channel.bit())
    }

    pub fn from_bits_truncate(bits: u8) -> Self {
        ChannelSet(bits & 0b0011_1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, channel: ChannelId) {
        self.0 |= channel.bit();
    }

    pub fn contains(self, channel: ChannelId) -> bool {
        self.0 & channel.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: ChannelSet) -> ChannelSet {
        ChannelSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ChannelSet) -> ChannelSet {
        ChannelSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: ChannelSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Channels in canonical order.
    pub fn iter(self) -> impl Iterator<Item = ChannelId> {
        ChannelId::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl FromIterator<ChannelId> for ChannelSet {
    fn from_iter<I: IntoIterator<Item = ChannelId>>(iter: I) -> Self {
        let mut set = ChannelSet::empty();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

impl fmt::Debug for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(c.as_str())?;
        }
        f.write_str("}")
    }
}

impl Serialize for ChannelSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let channels = Vec::<ChannelId>::deserialize(deserializer)?;
        Ok(channels.into_iter().collect())
    }
}

/// Canonicalize a service name.
///
/// Lowercases, turns whitespace and underscore runs into a single `_`, keeps
/// alphanumerics and hyphens, drops every other character, and trims leading
/// and trailing separators.
pub fn normalize_service_name(raw: &str) -> Result<String, ModelError> {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.chars() {
        if ch.is_whitespace() || ch == '_' {
            pending_sep = !out.is_empty();
        } else if ch.is_alphanumeric() || ch == '-' {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.extend(ch.to_lowercase());
        }
    }
    if out.is_empty() {
        Err(ModelError::NameEmpty(raw.to_string()))
    } else {
        Ok(out)
    }
}

/// A service `<id, functionalities, effects>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceProfile {
    id: String,
    functionalities: BTreeSet<String>,
    effects: ChannelSet,
}

impl ServiceProfile {
    pub fn new<I, S>(id: &str, functionalities: I, effects: ChannelSet) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Ok(ServiceProfile {
            id: normalize_service_name(id)?,
            functionalities: functionalities.into_iter().map(Into::into).collect(),
            effects,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn functionalities(&self) -> &BTreeSet<String> {
        &self.functionalities
    }

    pub fn effects(&self) -> ChannelSet {
        self.effects
    }
}

/// What the trigger service reports.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TriggerChannel {
    Environment(ChannelId),
    /// Device state, time, presence or any other non-environment event.
    DeviceState(String),
    Absent,
}

impl TriggerChannel {
    /// Classify a raw trigger-channel string. Strings naming one of the six
    /// channels become environment triggers, everything else is kept verbatim
    /// as a device-state token.
    pub fn parse(raw: Option<&str>) -> Self {
        match raw.map(str::trim) {
            None | Some("") => TriggerChannel::Absent,
            Some(s) => match s.parse::<ChannelId>() {
                Ok(c) => TriggerChannel::Environment(c),
                Err(_) => TriggerChannel::DeviceState(s.to_string()),
            },
        }
    }

    pub fn environment(&self) -> Option<ChannelId> {
        match self {
            TriggerChannel::Environment(c) => Some(*c),
            _ => None,
        }
    }

    /// Raw string form, `None` when absent.
    pub fn as_raw(&self) -> Option<&str> {
        match self {
            TriggerChannel::Environment(c) => Some(c.as_str()),
            TriggerChannel::DeviceState(s) => Some(s),
            TriggerChannel::Absent => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriggerComponent {
    pub trigger_title: String,
    pub trigger_channel: TriggerChannel,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionComponent {
    pub action_title: String,
    pub action_channel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriggerActionRule {
    pub rule_id: String,
    pub trigger: TriggerComponent,
    pub action: ActionComponent,
    pub location: String,
    pub description: Option<String>,
}

impl TriggerActionRule {
    pub fn trigger_title(&self) -> &str {
        &self.trigger.trigger_title
    }

    pub fn action_title(&self) -> &str {
        &self.action.action_title
    }

    pub fn trigger_environment(&self) -> Option<ChannelId> {
        self.trigger.trigger_channel.environment()
    }

    pub fn location_is_unspecified(&self) -> bool {
        self.location == UNSPECIFIED_LOCATION
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn with_location(mut self, location: Option<&str>) -> Self {
        self.location = canonical_location(location);
        self
    }
}

fn canonical_location(location: Option<&str>) -> String {
    match location.map(str::trim) {
        None | Some("") => UNSPECIFIED_LOCATION.to_string(),
        Some(l) => l.to_string(),
    }
}

/// Build a validated rule. Titles are normalized; a missing or blank location
/// becomes [`UNSPECIFIED_LOCATION`].
pub fn make_rule(
    rule_id: &str,
    trigger_title: &str,
    trigger_channel: Option<&str>,
    action_title: &str,
    action_channel: Option<&str>,
    location: Option<&str>,
) -> Result<TriggerActionRule, ModelError> {
    let rule_id = rule_id.trim();
    if rule_id.is_empty() {
        return Err(ModelError::NameEmpty(rule_id.to_string()));
    }
    Ok(TriggerActionRule {
        rule_id: rule_id.to_string(),
        trigger: TriggerComponent {
            trigger_title: normalize_service_name(trigger_title)?,
            trigger_channel: TriggerChannel::parse(trigger_channel),
        },
        action: ActionComponent {
            action_title: normalize_service_name(action_title)?,
            action_channel: action_channel
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        },
        location: canonical_location(location),
        description: None,
    })
}

/// A list of rules with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<TriggerActionRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<TriggerActionRule>) -> Result<Self, ModelError> {
        check_unique_ids(&rules)?;
        Ok(RuleSet { rules })
    }

    pub fn push(&mut self, rule: TriggerActionRule) -> Result<(), ModelError> {
        if self.rules.iter().any(|r| r.rule_id == rule.rule_id) {
            return Err(ModelError::DuplicateRuleId(rule.rule_id));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn rules(&self) -> &[TriggerActionRule] {
        &self.rules
    }

    pub fn into_rules(self) -> Vec<TriggerActionRule> {
        self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub(crate) fn check_unique_ids(rules: &[TriggerActionRule]) -> Result<(), ModelError> {
    let mut seen = HashSet::with_capacity(rules.len());
    for r in rules {
        if !seen.insert(r.rule_id.as_str()) {
            return Err(ModelError::DuplicateRuleId(r.rule_id.clone()));
        }
    }
    Ok(())
}
