//! Physical inter-rule vulnerability detection.
//!
//! Two kinds of finding are produced for rules placed at a common location:
//!
//! * **chain**: the action service of `r_i` changes a channel that `r_j`'s
//!   trigger senses, `eff(action_i) ∩ {trigger_channel_j} ≠ ∅`. Evaluated on
//!   ordered pairs. Triggering and disabling are not distinguished.
//! * **interference**: two distinct action services change a shared channel,
//!   `s_i ≠ s_j ∧ eff(s_i) ∩ eff(s_j) ≠ ∅`. Evaluated on unordered pairs and
//!   reported with `first_rule_id < second_rule_id`.
//!
//! Chain findings are then linked into multi-hop [`ChainPath`]s.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::EffectSource;
use crate::model::{check_unique_ids, ChannelId, ChannelSet, ModelError, TriggerActionRule, UNSPECIFIED_LOCATION};

pub const DEFAULT_MAX_CHAIN_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("rule {0:?} compared with itself")]
    SameRule(String),
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("chain assembly needs chain findings, got {0} for {1:?}")]
    BadKind(VulnerabilityKind, String),
}

impl From<ModelError> for DetectError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DuplicateRuleId(id) => DetectError::DuplicateRuleId(id),
            other => unreachable!("unexpected model error {other}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VulnerabilityKind {
    Chain,
    Interference,
}

impl VulnerabilityKind {
    pub fn label(self) -> &'static str {
        match self {
            VulnerabilityKind::Chain => "chain (trigger-or-disable)",
            VulnerabilityKind::Interference => "interference",
        }
    }
}

impl fmt::Display for VulnerabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VulnerabilityKind::Chain => "chain",
            VulnerabilityKind::Interference => "interference",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vulnerability {
    pub kind: VulnerabilityKind,
    pub first_rule_id: String,
    pub second_rule_id: String,
    pub witness_channels: ChannelSet,
    pub location: String,
}

impl Vulnerability {
    fn sort_key(&self) -> (&str, VulnerabilityKind, &str, &str) {
        (&self.location, self.kind, &self.first_rule_id, &self.second_rule_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainPath {
    pub rule_ids: Vec<String>,
    /// Witness channels of each hop; `hop_channels.len() == rule_ids.len() - 1`.
    pub hop_channels: Vec<ChannelSet>,
}

/// A rule whose own action feeds its own trigger channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelfChainWarning {
    pub rule_id: String,
    pub channel: ChannelId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub chain: usize,
    pub interference: usize,
}

impl KindCounts {
    pub fn total(&self) -> usize {
        self.chain + self.interference
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSetMetadata {
    pub rule_count: usize,
    pub locations: Vec<String>,
    pub strict_location: bool,
    pub max_chain_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnerabilityReport {
    pub metadata: RuleSetMetadata,
    pub counts: KindCounts,
    pub vulnerabilities: Vec<Vulnerability>,
    pub chains: Vec<ChainPath>,
    pub warnings: Vec<SelfChainWarning>,
}

impl VulnerabilityReport {
    pub fn total_findings(&self) -> usize {
        self.counts.total()
    }

    pub fn chain_fraction(&self) -> Option<f64> {
        let total = self.counts.total();
        (total > 0).then(|| self.counts.chain as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectOptions {
    /// Exclude rules at the `unspecified` location instead of pairing them
    /// with every location.
    pub strict_location: bool,
    pub max_chain_len: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            strict_location: false,
            max_chain_len: DEFAULT_MAX_CHAIN_LEN,
        }
    }
}

/// Location shared by two rules, or `None` when they are not co-located.
///
/// `unspecified` pairs with anything unless `strict` is set, in which case
/// it pairs with nothing.
pub fn shared_location(a: &TriggerActionRule, b: &TriggerActionRule, strict: bool) -> Option<String> {
    match (a.location_is_unspecified(), b.location_is_unspecified()) {
        (false, false) => (a.location == b.location).then(|| a.location.clone()),
        _ if strict => None,
        (true, true) => Some(UNSPECIFIED_LOCATION.to_string()),
        (true, false) => Some(b.location.clone()),
        (false, true) => Some(a.location.clone()),
    }
}

fn chain_witness<E: EffectSource + ?Sized>(
    r_i: &TriggerActionRule,
    r_j: &TriggerActionRule,
    effects: &E,
) -> ChannelSet {
    match r_j.trigger_environment() {
        Some(channel) => effects.action_effects(r_i).intersection(ChannelSet::single(channel)),
        None => ChannelSet::empty(),
    }
}

fn interference_witness<E: EffectSource + ?Sized>(
    r_i: &TriggerActionRule,
    r_j: &TriggerActionRule,
    effects: &E,
) -> ChannelSet {
    if r_i.action_title() == r_j.action_title() {
        return ChannelSet::empty();
    }
    effects.action_effects(r_i).intersection(effects.action_effects(r_j))
}

/// Chain from `r_i` into `r_j`, if any. Rules must share a location under
/// the lenient location policy.
pub fn detect_chain<E: EffectSource + ?Sized>(
    r_i: &TriggerActionRule,
    r_j: &TriggerActionRule,
    effects: &E,
) -> Result<Option<Vulnerability>, DetectError> {
    if r_i.rule_id == r_j.rule_id {
        return Err(DetectError::SameRule(r_i.rule_id.clone()));
    }
    Ok(shared_location(r_i, r_j, false).and_then(|loc| chain_at(r_i, r_j, effects, loc)))
}

fn chain_at<E: EffectSource + ?Sized>(
    r_i: &TriggerActionRule,
    r_j: &TriggerActionRule,
    effects: &E,
    location: String,
) -> Option<Vulnerability> {
    let witness = chain_witness(r_i, r_j, effects);
    (!witness.is_empty()).then(|| Vulnerability {
        kind: VulnerabilityKind::Chain,
        first_rule_id: r_i.rule_id.clone(),
        second_rule_id: r_j.rule_id.clone(),
        witness_channels: witness,
        location,
    })
}

/// Interference between two rules, canonicalized so the smaller rule id comes first.
pub fn detect_interference<E: EffectSource + ?Sized>(
    r_i: &TriggerActionRule,
    r_j: &TriggerActionRule,
    effects: &E,
) -> Result<Option<Vulnerability>, DetectError> {
    if r_i.rule_id == r_j.rule_id {
        return Err(DetectError::SameRule(r_i.rule_id.clone()));
    }
    Ok(shared_location(r_i, r_j, false).and_then(|loc| interference_at(r_i, r_j, effects, loc)))
}

fn interference_at<E: EffectSource + ?Sized>(
    r_i: &TriggerActionRule,
    r_j: &TriggerActionRule,
    effects: &E,
    location: String,
) -> Option<Vulnerability> {
    let witness = interference_witness(r_i, r_j, effects);
    if witness.is_empty() {
        return None;
    }
    let (first, second) = if r_i.rule_id <= r_j.rule_id {
        (r_i, r_j)
    } else {
        (r_j, r_i)
    };
    Some(Vulnerability {
        kind: VulnerabilityKind::Interference,
        first_rule_id: first.rule_id.clone(),
        second_rule_id: second.rule_id.clone(),
        witness_channels: witness,
        location,
    })
}

/// Run both detectors over every co-located pair and assemble a report.
pub fn detect_all<E: EffectSource + ?Sized>(
    rules: &[TriggerActionRule],
    effects: &E,
    options: &DetectOptions,
) -> Result<VulnerabilityReport, DetectError> {
    check_unique_ids(rules)?;

    let mut findings = Vec::new();
    for (i, r_i) in rules.iter().enumerate() {
        for (j, r_j) in rules.iter().enumerate().skip(i + 1) {
            debug_assert!(i < j);
            let Some(location) = shared_location(r_i, r_j, options.strict_location) else {
                continue;
            };
            findings.extend(chain_at(r_i, r_j, effects, location.clone()));
            findings.extend(chain_at(r_j, r_i, effects, location.clone()));
            findings.extend(interference_at(r_i, r_j, effects, location));
        }
    }
    findings.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let counts = KindCounts {
        chain: findings.iter().filter(|v| v.kind == VulnerabilityKind::Chain).count(),
        interference: findings
            .iter()
            .filter(|v| v.kind == VulnerabilityKind::Interference)
            .count(),
    };

    let chain_edges: Vec<Vulnerability> = findings
        .iter()
        .filter(|v| v.kind == VulnerabilityKind::Chain)
        .cloned()
        .collect();
    let chains = build_chains(&chain_edges, options.max_chain_len)?;

    let mut warnings: Vec<SelfChainWarning> = rules
        .iter()
        .filter_map(|r| {
            let channel = r.trigger_environment()?;
            effects.action_effects(r).contains(channel).then(|| SelfChainWarning {
                rule_id: r.rule_id.clone(),
                channel,
            })
        })
        .collect();
    warnings.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));

    let locations: BTreeSet<String> = rules.iter().map(|r| r.location.clone()).collect();

    Ok(VulnerabilityReport {
        metadata: RuleSetMetadata {
            rule_count: rules.len(),
            locations: locations.into_iter().collect(),
            strict_location: options.strict_location,
            max_chain_len: options.max_chain_len,
        },
        counts,
        vulnerabilities: findings,
        chains,
        warnings,
    })
}

/// Enumerate all simple paths of 2..=`max_len` rules through the chain graph.
///
/// Output is sorted lexicographically by rule-id sequence.
pub fn build_chains(chain_vulns: &[Vulnerability], max_len: usize) -> Result<Vec<ChainPath>, DetectError> {
    let mut graph: BTreeMap<&str, BTreeMap<&str, ChannelSet>> = BTreeMap::new();
    for v in chain_vulns {
        if v.kind != VulnerabilityKind::Chain {
            return Err(DetectError::BadKind(v.kind, v.first_rule_id.clone()));
        }
        if v.first_rule_id == v.second_rule_id {
            continue;
        }
        let hop = graph
            .entry(&v.first_rule_id)
            .or_default()
            .entry(&v.second_rule_id)
            .or_default();
        *hop = hop.union(v.witness_channels);
    }

    let mut paths = Vec::new();
    if max_len < 2 {
        return Ok(paths);
    }
    let mut stack_ids: Vec<&str> = Vec::new();
    let mut stack_hops: Vec<ChannelSet> = Vec::new();
    for &start in graph.keys() {
        stack_ids.push(start);
        extend_paths(&graph, max_len, &mut stack_ids, &mut stack_hops, &mut paths);
        stack_ids.pop();
    }
    paths.sort_by(|a, b| a.rule_ids.cmp(&b.rule_ids));
    Ok(paths)
}

fn extend_paths<'a>(
    graph: &BTreeMap<&'a str, BTreeMap<&'a str, ChannelSet>>,
    max_len: usize,
    ids: &mut Vec<&'a str>,
    hops: &mut Vec<ChannelSet>,
    out: &mut Vec<ChainPath>,
) {
    if ids.len() >= max_len {
        return;
    }
    let Some(next) = graph.get(ids[ids.len() - 1]) else {
        return;
    };
    for (&succ, &witness) in next {
        if ids.contains(&succ) {
            continue;
        }
        ids.push(succ);
        hops.push(witness);
        out.push(ChainPath {
            rule_ids: ids.iter().map(|s| s.to_string()).collect(),
            hop_channels: hops.clone(),
        });
        extend_paths(graph, max_len, ids, hops, out);
        ids.pop();
        hops.pop();
    }
}
