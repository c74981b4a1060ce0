//! Report rendering.
//!
//! Structured output is JSON tagged with [`SCHEMA`]; text output is for
//! people. Both are byte-stable for equal inputs: findings are already sorted
//! by the detector and no clock is read unless a timestamp is passed in.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    ChainPath, KindCounts, RuleSetMetadata, SelfChainWarning, Vulnerability, VulnerabilityKind, VulnerabilityReport,
};
use crate::extraction::Accuracy;
use crate::model::ChannelSet;

pub const SCHEMA: &str = "tap-audit/v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected text or structured)")]
    UnknownFormat(String),
    #[error("unsupported schema {0:?}")]
    Schema(String),
    #[error("inconsistent report: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Structured,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub format: ReportFormat,
    pub body: Vec<u8>,
}

impl RenderedReport {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.body).expect("rendered reports are UTF-8")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StructuredReport {
    schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
    metadata: RuleSetMetadata,
    counts: StructuredCounts,
    findings: Vec<StructuredFinding>,
    chains: Vec<ChainPath>,
    warnings: Vec<StructuredWarning>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StructuredCounts {
    chain: usize,
    interference: usize,
    total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StructuredFinding {
    kind: VulnerabilityKind,
    label: String,
    first_rule_id: String,
    second_rule_id: String,
    witness_channels: ChannelSet,
    location: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StructuredWarning {
    kind: String,
    #[serde(flatten)]
    warning: SelfChainWarning,
}

/// Render with no timestamp.
pub fn render_report(report: &VulnerabilityReport, format: ReportFormat) -> RenderedReport {
    render_report_at(report, format, None)
}

/// Render, stamping `generated_at_unix` when given.
pub fn render_report_at(report: &VulnerabilityReport, format: ReportFormat, timestamp: Option<u64>) -> RenderedReport {
    let body = match format {
        ReportFormat::Structured => render_structured(report, timestamp),
        ReportFormat::Text => render_text(report, timestamp),
    };
    RenderedReport {
        format,
        body: body.into_bytes(),
    }
}

fn render_structured(report: &VulnerabilityReport, timestamp: Option<u64>) -> String {
    let doc = StructuredReport {
        schema: SCHEMA.to_string(),
        generated_at_unix: timestamp,
        metadata: report.metadata.clone(),
        counts: StructuredCounts {
            chain: report.counts.chain,
            interference: report.counts.interference,
            total: report.counts.total(),
        },
        findings: report
            .vulnerabilities
            .iter()
            .map(|v| StructuredFinding {
                kind: v.kind,
                label: v.kind.label().to_string(),
                first_rule_id: v.first_rule_id.clone(),
                second_rule_id: v.second_rule_id.clone(),
                witness_channels: v.witness_channels,
                location: v.location.clone(),
            })
            .collect(),
        chains: report.chains.clone(),
        warnings: report
            .warnings
            .iter()
            .map(|w| StructuredWarning {
                kind: "self_chain".to_string(),
                warning: w.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report serialization");
    s.push('\n');
    s
}

/// Parse structured output back into a report.
pub fn parse_structured(body: &[u8]) -> Result<VulnerabilityReport, ReportError> {
    let doc: StructuredReport = serde_json::from_slice(body)?;
    if doc.schema != SCHEMA {
        return Err(ReportError::Schema(doc.schema));
    }
    let vulnerabilities: Vec<Vulnerability> = doc
        .findings
        .into_iter()
        .map(|f| Vulnerability {
            kind: f.kind,
            first_rule_id: f.first_rule_id,
            second_rule_id: f.second_rule_id,
            witness_channels: f.witness_channels,
            location: f.location,
        })
        .collect();
    let chain = vulnerabilities
        .iter()
        .filter(|v| v.kind == VulnerabilityKind::Chain)
        .count();
    let counts = KindCounts {
        chain,
        interference: vulnerabilities.len() - chain,
    };
    if counts.chain != doc.counts.chain
        || counts.interference != doc.counts.interference
        || counts.total() != doc.counts.total
    {
        return Err(ReportError::Inconsistent("counts do not match findings".into()));
    }
    if let Some(bad) = doc.warnings.iter().find(|w| w.kind != "self_chain") {
        return Err(ReportError::Inconsistent(format!(
            "unknown warning kind {:?}",
            bad.kind
        )));
    }
    Ok(VulnerabilityReport {
        metadata: doc.metadata,
        counts,
        vulnerabilities,
        chains: doc.chains,
        warnings: doc.warnings.into_iter().map(|w| w.warning).collect(),
    })
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{n} {word}")
    } else {
        format!("{n} {word}s")
    }
}

fn render_text(report: &VulnerabilityReport, timestamp: Option<u64>) -> String {
    let mut out = String::new();
    let meta = &report.metadata;
    writeln!(out, "tap-audit report ({SCHEMA})").unwrap();
    if let Some(ts) = timestamp {
        writeln!(out, "generated at: {ts} (unix seconds)").unwrap();
    }
    writeln!(
        out,
        "rules: {}  locations: {}  location policy: {}",
        meta.rule_count,
        if meta.locations.is_empty() {
            "-".to_string()
        } else {
            meta.locations.join(", ")
        },
        if meta.strict_location { "strict" } else { "lenient" }
    )
    .unwrap();

    let mut current: Option<(&str, VulnerabilityKind)> = None;
    for v in &report.vulnerabilities {
        if current.map(|(l, _)| l) != Some(v.location.as_str()) {
            writeln!(out, "\n[{}]", v.location).unwrap();
            current = None;
        }
        if current.map(|(_, k)| k) != Some(v.kind) {
            writeln!(out, "  {}:", v.kind.label()).unwrap();
        }
        current = Some((&v.location, v.kind));
        let arrow = match v.kind {
            VulnerabilityKind::Chain => "->",
            VulnerabilityKind::Interference => "<->",
        };
        writeln!(
            out,
            "    {} {arrow} {}  via {}",
            v.first_rule_id, v.second_rule_id, v.witness_channels
        )
        .unwrap();
    }

    if !report.chains.is_empty() {
        writeln!(out, "\nchain paths (max {} rules):", meta.max_chain_len).unwrap();
        for p in &report.chains {
            let mut line = p.rule_ids[0].clone();
            for (id, hop) in p.rule_ids[1..].iter().zip(&p.hop_channels) {
                write!(
                    line,
                    " -[{}]-> {id}",
                    hop.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(",")
                )
                .unwrap();
            }
            writeln!(out, "  {line}").unwrap();
        }
    }

    if !report.warnings.is_empty() {
        writeln!(out, "\nwarnings:").unwrap();
        for w in &report.warnings {
            writeln!(
                out,
                "  self-chain: rule {} feeds its own trigger via {}",
                w.rule_id, w.channel
            )
            .unwrap();
        }
    }

    writeln!(
        out,
        "\n{} ({} chain, {} interference)",
        plural(report.counts.total(), "finding"),
        report.counts.chain,
        report.counts.interference
    )
    .unwrap();
    out
}

/// One evaluation line per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub group: String,
    #[serde(flatten)]
    pub accuracy: Accuracy,
    pub fraction: Option<f64>,
}

impl EvaluationRow {
    pub fn new(group: impl Into<String>, accuracy: Accuracy) -> Self {
        EvaluationRow {
            group: group.into(),
            fraction: accuracy.fraction(),
            accuracy,
        }
    }
}

pub fn render_evaluation(rows: &[EvaluationRow], format: ReportFormat) -> RenderedReport {
    let body = match format {
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "schema": SCHEMA,
                "evaluation": rows,
            }))
            .expect("evaluation serialization");
            s.push('\n');
            s
        }
        ReportFormat::Text => {
            let mut out = String::new();
            writeln!(
                out,
                "{:<10} {:>8} {:>8} {:>9}  {:>8} {:>8}",
                "group", "samples", "correct", "accuracy", "flipped", "mismatch"
            )
            .unwrap();
            for r in rows {
                let acc = match r.fraction {
                    Some(f) => format!("{:.2}%", 100.0 * f),
                    None => "n/a".to_string(),
                };
                writeln!(
                    out,
                    "{:<10} {:>8} {:>8} {:>9}  {:>8} {:>8}",
                    r.group,
                    r.accuracy.total,
                    r.accuracy.correct,
                    acc,
                    r.accuracy.order_flipped,
                    r.accuracy.title_mismatch
                )
                .unwrap();
            }
            out
        }
    };
    RenderedReport {
        format,
        body: body.into_bytes(),
    }
}
