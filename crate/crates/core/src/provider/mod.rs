//! Substitute distributions per masked prompt.
//!
//! Three backends share one [`SubstituteProvider`] interface: a store
//! loaded from a substitute file, an HTTP client for a live model sidecar
//! and a seeded synthetic generator for tests.

mod http;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::patterns::MaskedPrompt;

pub use http::HttpProvider;
pub use synthetic::{SenseAssignment, SyntheticProvider, SyntheticSenseSpec};

/// Default number of substitutes kept per prompt.
pub const DEFAULT_TOP_K: usize = 150;

/// Ranked substitutes for one prompt. Probabilities are raw model
/// probabilities; a top-k truncated list sums to less than 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstituteDistribution {
    pub prompt_id: String,
    entries: Vec<(String, f64)>,
}

/// Orders by probability descending, then substitute ascending.
pub(crate) fn rank_order(
    a: &(impl AsRef<str>, f64),
    b: &(impl AsRef<str>, f64),
) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.as_ref().cmp(b.0.as_ref()))
}

impl SubstituteDistribution {
    /// Validates and sorts entries.
    pub fn new(prompt_id: impl Into<String>, mut entries: Vec<(String, f64)>) -> Result<Self> {
        let prompt_id = prompt_id.into();
        for (substitute, p) in &entries {
            if substitute.is_empty() {
                return Err(Error::Validation(format!("{prompt_id}: empty substitute")));
            }
            if !p.is_finite() || *p <= 0.0 || *p > 1.0 {
                return Err(Error::Validation(format!(
                    "{prompt_id}: probability {p} of {substitute:?} outside (0, 1]"
                )));
            }
        }
        entries.sort_by(rank_order);
        Ok(Self { prompt_id, entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, top_k: usize) {
        self.entries.truncate(top_k);
    }
}

/// Wire form: `{"prompt_id": ..., "entries": [[substitute, probability], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstituteRecord {
    pub prompt_id: String,
    pub entries: Vec<(String, f64)>,
}

impl From<&SubstituteDistribution> for SubstituteRecord {
    fn from(d: &SubstituteDistribution) -> Self {
        Self {
            prompt_id: d.prompt_id.clone(),
            entries: d.entries.clone(),
        }
    }
}

/// Result of a batch fetch. Every requested id is in exactly one of the two.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fetched {
    pub found: BTreeMap<String, SubstituteDistribution>,
    pub missing: BTreeSet<String>,
}

pub trait SubstituteProvider: Send + Sync {
    fn fetch(&self, prompts: &[MaskedPrompt]) -> Result<Fetched>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub records: usize,
    pub duplicates: usize,
    pub rejected: usize,
}

/// In-memory store keyed by prompt id.
#[derive(Debug, Clone, Default)]
pub struct SubstituteStore {
    map: HashMap<String, SubstituteDistribution>,
}

impl SubstituteStore {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, prompt_id: &str) -> Option<&SubstituteDistribution> {
        self.map.get(prompt_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SubstituteDistribution> {
        self.map.values()
    }

    pub fn insert(&mut self, dist: SubstituteDistribution) -> Option<SubstituteDistribution> {
        self.map.insert(dist.prompt_id.clone(), dist)
    }

    /// Parses substitute records. Later duplicates replace earlier ones;
    /// records with invalid probabilities are dropped and counted.
    pub fn read<R: BufRead>(reader: R) -> Result<(Self, LoadReport)> {
        let mut store = Self::default();
        let mut report = LoadReport::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SubstituteRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            report.records += 1;
            match SubstituteDistribution::new(record.prompt_id, record.entries) {
                Ok(dist) => {
                    if store.insert(dist).is_some() {
                        report.duplicates += 1;
                    }
                }
                Err(e) => {
                    log::warn!("substitute line {}: {e}; record rejected", i + 1);
                    report.rejected += 1;
                }
            }
        }
        if report.duplicates > 0 {
            log::warn!(
                "{} duplicate prompt ids, last record kept",
                report.duplicates
            );
        }
        Ok((store, report))
    }

    pub fn load(path: &Path) -> Result<(Self, LoadReport)> {
        Self::read(jsonl::open(path)?)
    }
}

impl SubstituteProvider for SubstituteStore {
    fn fetch(&self, prompts: &[MaskedPrompt]) -> Result<Fetched> {
        let mut out = Fetched::default();
        for prompt in prompts {
            match self.map.get(&prompt.prompt_id) {
                Some(d) => {
                    out.found.insert(prompt.prompt_id.clone(), d.clone());
                }
                None => {
                    out.missing.insert(prompt.prompt_id.clone());
                }
            }
        }
        Ok(out)
    }
}

pub fn load_substitute_file(path: &Path) -> Result<(SubstituteStore, LoadReport)> {
    SubstituteStore::load(path)
}

pub fn write_substitutes<'a, W: Write>(
    writer: W,
    dists: impl IntoIterator<Item = &'a SubstituteDistribution>,
) -> Result<()> {
    let records: Vec<SubstituteRecord> = dists.into_iter().map(SubstituteRecord::from).collect();
    jsonl::write_records(writer, &records)
}
