use std::collections::{BTreeSet, HashMap};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{Fetched, SubstituteDistribution, SubstituteProvider};
use crate::error::{Error, Result};
use crate::patterns::MaskedPrompt;
use crate::rng;

/// A sense described by the substitutes it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSenseSpec {
    pub sense_id: String,
    pub vocabulary: Vec<String>,
    /// Symmetric Dirichlet concentration of the drawn probabilities.
    pub concentration: f64,
}

/// One line of a sense assignment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseAssignment {
    pub example_id: String,
    #[serde(flatten)]
    pub sense: SyntheticSenseSpec,
}

/// Emits distributions concentrated on each usage's sense vocabulary.
///
/// Each prompt draws Dirichlet weights over the vocabulary from a stream
/// keyed by `(seed, prompt_id)`, so the output is independent of batching.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    senses: HashMap<String, SyntheticSenseSpec>,
    seed: u64,
    top_k: usize,
}

impl SyntheticProvider {
    pub fn new(
        senses: HashMap<String, SyntheticSenseSpec>,
        seed: u64,
        top_k: usize,
    ) -> Result<Self> {
        for (example_id, spec) in &senses {
            if spec.vocabulary.is_empty() {
                return Err(Error::Validation(format!(
                    "sense {} of {example_id}: empty vocabulary",
                    spec.sense_id
                )));
            }
            if !(spec.concentration > 0.0 && spec.concentration.is_finite()) {
                return Err(Error::Validation(format!(
                    "sense {} of {example_id}: concentration must be positive",
                    spec.sense_id
                )));
            }
        }
        Ok(Self {
            senses,
            seed,
            top_k,
        })
    }

    pub fn from_assignments(
        assignments: Vec<SenseAssignment>,
        seed: u64,
        top_k: usize,
    ) -> Result<Self> {
        let senses = assignments
            .into_iter()
            .map(|a| (a.example_id, a.sense))
            .collect();
        Self::new(senses, seed, top_k)
    }

    pub fn distribution(&self, prompt: &MaskedPrompt) -> Option<SubstituteDistribution> {
        let spec = self.senses.get(&prompt.example_id)?;
        let vocab: BTreeSet<&str> = spec.vocabulary.iter().map(String::as_str).collect();
        let gamma = Gamma::new(spec.concentration, 1.0).expect("validated concentration");
        let mut rng = rng::keyed_rng(self.seed, &prompt.prompt_id);
        let draws: Vec<f64> = vocab
            .iter()
            .map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE))
            .collect();
        let total: f64 = draws.iter().sum();
        let entries = vocab
            .iter()
            .zip(&draws)
            .map(|(s, d)| ((*s).to_owned(), (d / total).clamp(f64::MIN_POSITIVE, 1.0)))
            .collect();
        let mut dist = SubstituteDistribution::new(prompt.prompt_id.clone(), entries)
            .expect("positive normalized draws");
        dist.truncate(self.top_k);
        Some(dist)
    }
}

impl SubstituteProvider for SyntheticProvider {
    fn fetch(&self, prompts: &[MaskedPrompt]) -> Result<Fetched> {
        let mut out = Fetched::default();
        for prompt in prompts {
            match self.distribution(prompt) {
                Some(d) => {
                    out.found.insert(prompt.prompt_id.clone(), d);
                }
                None => {
                    out.missing.insert(prompt.prompt_id.clone());
                }
            }
        }
        Ok(out)
    }
}
