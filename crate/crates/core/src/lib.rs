//! Trigger-action rule extraction and physical inter-rule vulnerability
//! detection for smart-home automations.
//!
//! Rules of the form `trigger -> action` interact through the physical
//! environment: an action that heats a room can fire a rule triggered by
//! temperature (a *chain*), and two actions that both change temperature
//! work against each other (*interference*). This crate finds those
//! interactions before the rules are deployed.
//!
//! Pipeline pieces:
//!
//! * [`model`]: rule and channel types, service-name normalization
//! * [`catalog`]: which channels each service changes
//! * [`ident`], [`remote`]: channel identification from descriptions
//! * [`extraction`]: baseline `trigger -> action` extraction and exact-match scoring
//! * [`detector`]: chain / interference detection and chain-path assembly
//! * [`corpus`]: loaders, train/test split and the audit pipeline
//! * [`report`]: text and structured (`tap-audit/v1`) rendering

pub mod catalog;
pub mod corpus;
pub mod detector;
pub mod extraction;
pub mod ident;
mod listfile;
pub mod model;
pub mod remote;
pub mod report;

pub use catalog::{ChannelCatalog, EffectSource};
pub use detector::{
    build_chains, detect_all, detect_chain, detect_interference, ChainPath, DetectOptions, Vulnerability,
    VulnerabilityKind, VulnerabilityReport,
};
pub use model::{make_rule, normalize_service_name, ChannelId, ChannelSet, TriggerActionRule};
