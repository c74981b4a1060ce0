//! Service → environment-channel effect catalog.
//!
//! Catalog files use the `service: [channel, ...]` list grammar (see
//! [`crate::listfile`]). Service names are normalized on load, repeated
//! entries for one service are merged by union, and any channel outside the
//! six canonical ones is rejected.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::listfile;
use crate::model::{normalize_service_name, ChannelId, ChannelSet, TriggerActionRule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("catalog line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("catalog line {line}: unknown channel {name:?}")]
    UnknownChannel { line: usize, name: String },
}

/// Anything that can say which channels a rule's action changes.
pub trait EffectSource {
    fn action_effects(&self, rule: &TriggerActionRule) -> ChannelSet;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelCatalog {
    entries: BTreeMap<String, ChannelSet>,
}

impl ChannelCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(source: &str) -> Result<Self, CatalogError> {
        let entries = listfile::parse(source).map_err(|e| CatalogError::Parse {
            line: e.line,
            message: e.message,
        })?;
        let mut catalog = ChannelCatalog::new();
        for entry in entries {
            let service = normalize_service_name(&entry.key).map_err(|_| CatalogError::Parse {
                line: entry.line,
                message: format!("service name {:?} is empty after normalization", entry.key),
            })?;
            let mut set = ChannelSet::empty();
            for item in &entry.items {
                let channel = item.parse::<ChannelId>().map_err(|_| CatalogError::UnknownChannel {
                    line: entry.line,
                    name: item.clone(),
                })?;
                set.insert(channel);
            }
            catalog.merge(service, set);
        }
        Ok(catalog)
    }

    /// Union `effects` into the entry for `service` (already normalized).
    fn merge(&mut self, service: String, effects: ChannelSet) {
        let slot = self.entries.entry(service).or_default();
        *slot = slot.union(effects);
    }

    /// Insert or extend an entry; the name is normalized first.
    pub fn insert(&mut self, service: &str, effects: ChannelSet) -> Result<(), crate::model::ModelError> {
        let service = normalize_service_name(service)?;
        self.merge(service, effects);
        Ok(())
    }

    /// Effects of a service; unknown or unnormalizable names yield the empty set.
    pub fn effects_of(&self, service: &str) -> ChannelSet {
        match normalize_service_name(service) {
            Ok(name) => self.entries.get(&name).copied().unwrap_or_default(),
            Err(_) => ChannelSet::empty(),
        }
    }

    pub fn contains(&self, service: &str) -> bool {
        normalize_service_name(service)
            .map(|n| self.entries.contains_key(&n))
            .unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ChannelSet)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Serialize in the load format, services sorted, channels in canonical order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (service, set) in &self.entries {
            let names: Vec<&str> = set.iter().map(ChannelId::as_str).collect();
            out.push_str(&listfile::render_entry(service, &names));
            out.push('\n');
        }
        out
    }
}

impl EffectSource for ChannelCatalog {
    fn action_effects(&self, rule: &TriggerActionRule) -> ChannelSet {
        self.effects_of(rule.action_title())
    }
}
