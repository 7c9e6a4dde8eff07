//! Substitute normalization and cross-pattern combination.
//!
//! Raw substitutes are lowercased, cut to their last word and stemmed;
//! duplicates after normalization have their probabilities summed. The
//! per-pattern distributions of one usage are then averaged with the
//! pattern weights. A substitute a pattern did not generate is credited
//! with that pattern's smallest probability.

use std::collections::{BTreeMap, BTreeSet};

use rust_stemmers::Algorithm;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{PatternSet, WEIGHT_SUM_TOLERANCE};
use crate::provider::{SubstituteDistribution, rank_order};

pub trait Stemmer: Send + Sync {
    fn stem(&self, word: &str) -> String;
}

/// Leaves words untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityStemmer;

impl Stemmer for IdentityStemmer {
    fn stem(&self, word: &str) -> String {
        word.to_owned()
    }
}

/// Snowball stemmer for one language.
pub struct SnowballStemmer {
    language: String,
    inner: rust_stemmers::Stemmer,
}

impl SnowballStemmer {
    pub fn new(language: &str) -> Result<Self> {
        let algorithm = match language {
            "arabic" => Algorithm::Arabic,
            "danish" => Algorithm::Danish,
            "dutch" => Algorithm::Dutch,
            "english" => Algorithm::English,
            "finnish" => Algorithm::Finnish,
            "french" => Algorithm::French,
            "german" => Algorithm::German,
            "greek" => Algorithm::Greek,
            "hungarian" => Algorithm::Hungarian,
            "italian" => Algorithm::Italian,
            "norwegian" => Algorithm::Norwegian,
            "portuguese" => Algorithm::Portuguese,
            "romanian" => Algorithm::Romanian,
            "russian" => Algorithm::Russian,
            "spanish" => Algorithm::Spanish,
            "swedish" => Algorithm::Swedish,
            "tamil" => Algorithm::Tamil,
            "turkish" => Algorithm::Turkish,
            other => {
                return Err(Error::Validation(format!(
                    "no Snowball stemmer for {other:?}"
                )));
            }
        };
        Ok(Self {
            language: language.to_owned(),
            inner: rust_stemmers::Stemmer::create(algorithm),
        })
    }

    pub fn spanish() -> Self {
        Self::new("spanish").expect("spanish is supported")
    }

    pub fn language(&self) -> &str {
        &self.language
    }
}

impl Stemmer for SnowballStemmer {
    fn stem(&self, word: &str) -> String {
        self.inner.stem(word).into_owned()
    }
}

impl std::fmt::Debug for SnowballStemmer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SnowballStemmer")
            .field("language", &self.language)
            .finish()
    }
}

/// Lowercase, keep the last whitespace-separated word, stem.
/// Returns `None` when nothing is left.
pub fn normalize_substitute(raw: &str, stemmer: &dyn Stemmer) -> Option<String> {
    let lower = raw.to_lowercase();
    let last = lower.split_whitespace().last()?;
    let stem = stemmer.stem(last);
    (!stem.is_empty()).then_some(stem)
}

/// Probabilities over normalized substitutes of one usage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizedDistribution {
    pub example_id: String,
    pub entries: BTreeMap<String, f64>,
}

impl NormalizedDistribution {
    pub fn min_probability(&self) -> Option<f64> {
        self.entries.values().copied().reduce(f64::min)
    }

    /// Entries by probability descending, ties broken lexicographically.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.entries.iter().map(|(s, p)| (s.as_str(), *p)).collect();
        v.sort_by(rank_order);
        v
    }

    /// The `k` most probable substitutes.
    pub fn top_terms(&self, k: usize) -> Vec<String> {
        self.ranked()
            .into_iter()
            .take(k)
            .map(|(s, _)| s.to_owned())
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// Sums the probabilities of equal keys.
pub fn merge_duplicates(
    example_id: impl Into<String>,
    entries: impl IntoIterator<Item = (String, f64)>,
) -> NormalizedDistribution {
    let mut merged = BTreeMap::new();
    for (key, p) in entries {
        *merged.entry(key).or_insert(0.0) += p;
    }
    NormalizedDistribution {
        example_id: example_id.into(),
        entries: merged,
    }
}

/// Normalizes every substitute of a raw distribution and merges duplicates.
pub fn normalize_distribution(
    dist: &SubstituteDistribution,
    example_id: &str,
    stemmer: &dyn Stemmer,
) -> NormalizedDistribution {
    let normalized = dist
        .entries()
        .iter()
        .filter_map(|(raw, p)| normalize_substitute(raw, stemmer).map(|s| (s, *p)));
    merge_duplicates(example_id, normalized)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationSpec {
    weights: BTreeMap<String, f64>,
}

impl CombinationSpec {
    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation(
                "combination needs at least one pattern".into(),
            ));
        }
        if let Some((id, w)) = weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Validation(format!(
                "pattern {id}: negative weight {w}"
            )));
        }
        let total: f64 = weights.values().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "combination weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn from_set(set: &PatternSet) -> Result<Self> {
        Self::new(
            set.patterns
                .iter()
                .map(|p| (p.pattern_id.clone(), p.weight))
                .collect(),
        )
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub distribution: NormalizedDistribution,
    /// Patterns without a distribution; their weight went to the others.
    pub redistributed: Vec<String>,
    /// Patterns whose distribution was empty and contributed nothing.
    pub empty: Vec<String>,
}

/// Weighted average of per-pattern distributions with min-probability
/// fallback. The result is not renormalized.
///
/// Patterns are visited in id order whatever the input order, so the
/// floating-point sum is identical for any permutation of the input.
pub fn combine_patterns(
    example_id: &str,
    per_pattern: &BTreeMap<String, NormalizedDistribution>,
    spec: &CombinationSpec,
) -> Result<Combination> {
    if let Some(unknown) = per_pattern
        .keys()
        .find(|id| !spec.weights.contains_key(*id))
    {
        return Err(Error::Validation(format!(
            "{example_id}: pattern {unknown} is not part of the combination"
        )));
    }
    let present: Vec<(&String, f64, &NormalizedDistribution)> = spec
        .weights
        .iter()
        .filter_map(|(id, w)| per_pattern.get(id).map(|d| (id, *w, d)))
        .collect();
    let redistributed: Vec<String> = spec
        .weights
        .keys()
        .filter(|id| !per_pattern.contains_key(*id))
        .cloned()
        .collect();
    let present_weight: f64 = present.iter().map(|(_, w, _)| w).sum();
    if present.is_empty() || present_weight <= 0.0 {
        return Err(Error::Validation(format!(
            "{example_id}: no weighted pattern produced substitutes"
        )));
    }
    if !redistributed.is_empty() {
        log::debug!("{example_id}: weight of {redistributed:?} redistributed");
    }
    let scale = if redistributed.is_empty() {
        1.0
    } else {
        1.0 / present_weight
    };

    let mut empty = Vec::new();
    let fallbacks: Vec<f64> = present
        .iter()
        .map(|(id, _, dist)| {
            dist.min_probability().unwrap_or_else(|| {
                log::warn!("{example_id}: pattern {id} has no substitutes, contributes 0");
                empty.push((*id).clone());
                0.0
            })
        })
        .collect();

    let support: BTreeSet<&String> = present
        .iter()
        .flat_map(|(_, _, d)| d.entries.keys())
        .collect();
    let mut entries = BTreeMap::new();
    for s in support {
        let mut p = 0.0;
        for ((_, w, dist), fallback) in present.iter().zip(&fallbacks) {
            p += w * scale * dist.entries.get(s).copied().unwrap_or(*fallback);
        }
        entries.insert(s.clone(), p);
    }
    Ok(Combination {
        distribution: NormalizedDistribution {
            example_id: example_id.to_owned(),
            entries,
        },
        redistributed,
        empty,
    })
}

/// Wire form: `{"example_id": ..., "entries": [[stem, prob], ...]}`,
/// entries by probability descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedRecord {
    pub example_id: String,
    pub entries: Vec<(String, f64)>,
}

impl From<&NormalizedDistribution> for CombinedRecord {
    fn from(d: &NormalizedDistribution) -> Self {
        Self {
            example_id: d.example_id.clone(),
            entries: d
                .ranked()
                .into_iter()
                .map(|(s, p)| (s.to_owned(), p))
                .collect(),
        }
    }
}

impl From<CombinedRecord> for NormalizedDistribution {
    fn from(r: CombinedRecord) -> Self {
        Self {
            example_id: r.example_id,
            entries: r.entries.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(entries: &[(&str, f64)]) -> NormalizedDistribution {
        NormalizedDistribution {
            example_id: "e".into(),
            entries: entries.iter().map(|(s, p)| (s.to_string(), *p)).collect(),
        }
    }

    fn spec(weights: &[(&str, f64)]) -> CombinationSpec {
        CombinationSpec::new(weights.iter().map(|(s, w)| (s.to_string(), *w)).collect()).unwrap()
    }

    // Expected stems frozen from the reference Snowball Spanish stemmer
    // (NLTK SpanishStemmer and snowballstemmer agree on all of these).
    const SPANISH_STEMS: &[(&str, &str)] = &[
        ("documentos", "document"),
        ("lp", "lp"),
        ("libros", "libr"),
        ("datos", "dat"),
        ("actos", "actos"),
        ("textos", "text"),
        ("archivos", "archiv"),
        ("escritos", "escrit"),
        ("informes", "inform"),
        ("expedientes", "expedient"),
        ("contratos", "contrat"),
        ("nacionales", "nacional"),
        ("canción", "cancion"),
        ("televisión", "television"),
        ("señal", "señal"),
        ("vídeo", "vide"),
        ("memoria", "memori"),
        ("corriendo", "corr"),
        ("rápidamente", "rapid"),
    ];

    #[test]
    fn snowball_spanish_matches_reference_stems() {
        let stemmer = SnowballStemmer::spanish();
        for (word, stem) in SPANISH_STEMS {
            assert_eq!(stemmer.stem(word), *stem, "{word}");
        }
    }

    #[test]
    fn normalizes_multiword_and_case() {
        let stemmer = SnowballStemmer::spanish();
        assert_eq!(
            normalize_substitute("dos documentos", &stemmer).as_deref(),
            Some("document")
        );
        assert_eq!(normalize_substitute("LP", &stemmer).as_deref(), Some("lp"));
        assert_eq!(normalize_substitute("   ", &stemmer), None);
        assert_eq!(normalize_substitute("", &IdentityStemmer), None);
    }

    #[test]
    fn snowball_stems_are_mostly_fixed_points() {
        // Snowball strips residual vowels a second time, so vide -> vid.
        let stemmer = SnowballStemmer::spanish();
        let moving: Vec<&str> = SPANISH_STEMS
            .iter()
            .filter(|(word, _)| {
                let once = normalize_substitute(word, &stemmer).unwrap();
                normalize_substitute(&once, &stemmer).unwrap() != once
            })
            .map(|(word, _)| *word)
            .collect();
        assert_eq!(moving, vec!["vídeo", "rápidamente"]);
    }

    #[test]
    fn merge_sums_duplicates() {
        let m = merge_duplicates(
            "e",
            [("document".to_string(), 0.3), ("document".to_string(), 0.1)],
        );
        assert_eq!(m.entries.len(), 1);
        assert!((m.entries["document"] - 0.4).abs() < 1e-15);
        let m = merge_duplicates("e", [("a".to_string(), 0.2), ("b".to_string(), 0.3)]);
        assert_eq!(m, dist(&[("a", 0.2), ("b", 0.3)]));
        assert!(merge_duplicates("e", []).entries.is_empty());
    }

    #[test]
    fn normalize_distribution_merges_after_stemming() {
        let raw = SubstituteDistribution::new(
            "p",
            vec![
                ("documentos".into(), 0.367),
                ("dos documentos".into(), 0.01),
                ("Libros".into(), 0.16),
            ],
        )
        .unwrap();
        let n = normalize_distribution(&raw, "e", &SnowballStemmer::spanish());
        assert!((n.entries["document"] - 0.377).abs() < 1e-12);
        assert_eq!(n.entries["libr"], 0.16);
    }

    #[test]
    fn combines_with_min_fallback() {
        let per = BTreeMap::from([
            ("A".to_string(), dist(&[("doc", 0.4), ("libro", 0.6)])),
            ("B".to_string(), dist(&[("doc", 0.2), ("dato", 0.8)])),
        ]);
        let c = combine_patterns("e", &per, &spec(&[("A", 0.5), ("B", 0.5)])).unwrap();
        let e = &c.distribution.entries;
        assert!((e["doc"] - 0.30).abs() < 1e-12);
        assert!((e["libro"] - 0.40).abs() < 1e-12);
        assert!((e["dato"] - 0.60).abs() < 1e-12);
    }

    #[test]
    fn single_pattern_is_identity() {
        let d = dist(&[("a", 0.7), ("b", 0.1)]);
        let per = BTreeMap::from([("A".to_string(), d.clone())]);
        let c = combine_patterns("e", &per, &spec(&[("A", 1.0)])).unwrap();
        assert_eq!(c.distribution, d);
    }

    #[test]
    fn agreeing_patterns() {
        let per = BTreeMap::from([
            ("A".to_string(), dist(&[("x", 0.5)])),
            ("B".to_string(), dist(&[("x", 0.5)])),
        ]);
        let c = combine_patterns("e", &per, &spec(&[("A", 0.6), ("B", 0.4)])).unwrap();
        assert!((c.distribution.entries["x"] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_pattern_weight_is_redistributed() {
        let per = BTreeMap::from([("A".to_string(), dist(&[("x", 0.5), ("y", 0.2)]))]);
        let c = combine_patterns("e", &per, &spec(&[("A", 0.25), ("B", 0.75)])).unwrap();
        assert_eq!(c.redistributed, vec!["B".to_string()]);
        assert!((c.distribution.entries["x"] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_pattern_contributes_zero() {
        let per = BTreeMap::from([
            ("A".to_string(), dist(&[("x", 0.5)])),
            ("B".to_string(), dist(&[])),
        ]);
        let c = combine_patterns("e", &per, &spec(&[("A", 0.5), ("B", 0.5)])).unwrap();
        assert_eq!(c.empty, vec!["B".to_string()]);
        assert!((c.distribution.entries["x"] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unknown_pattern_is_rejected() {
        let per = BTreeMap::from([("Z".to_string(), dist(&[("x", 0.5)]))]);
        assert!(combine_patterns("e", &per, &spec(&[("A", 1.0)])).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(CombinationSpec::new(BTreeMap::from([("a".to_string(), 0.9)])).is_err());
        assert!(
            CombinationSpec::new(BTreeMap::from([
                ("a".to_string(), 1.5),
                ("b".to_string(), -0.5)
            ]))
            .is_err()
        );
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        fn per_pattern() -> impl Strategy<Value = Vec<Vec<(String, f64)>>> {
            prop::collection::vec(prop::collection::vec(("[a-f]", 0.001f64..1.0), 1..6), 1..5)
        }

        proptest! {
            #[test]
            fn merge_preserves_mass(entries in prop::collection::vec(("[a-d]", 0.0f64..1.0), 0..20)) {
                let before: f64 = entries.iter().map(|(_, p)| p).sum();
                let merged = merge_duplicates("e", entries);
                prop_assert!((merged.total() - before).abs() <= 1e-12);
            }

            #[test]
            fn normalization_idempotent_with_identity(raw in "[A-Za-zñÑ ]{0,20}") {
                if let Some(once) = normalize_substitute(&raw, &IdentityStemmer) {
                    prop_assert_eq!(normalize_substitute(&once, &IdentityStemmer), Some(once));
                }
            }

            #[test]
            fn combination_is_bounded_and_order_free(pats in per_pattern(), rotate in 0usize..5) {
                let n = pats.len();
                let per: BTreeMap<String, NormalizedDistribution> = pats
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (format!("p{i}"), merge_duplicates("e", e.clone())))
                    .collect();
                let weights: BTreeMap<String, f64> =
                    (0..n).map(|i| (format!("p{i}"), 1.0 / n as f64)).collect();
                let total: f64 = weights.values().sum();
                prop_assume!((total - 1.0).abs() <= WEIGHT_SUM_TOLERANCE);
                let spec = CombinationSpec::new(weights).unwrap();
                let c = combine_patterns("e", &per, &spec).unwrap();
                for (s, p) in &c.distribution.entries {
                    let values: Vec<f64> = per
                        .values()
                        .map(|d| d.entries.get(s).copied().unwrap_or_else(|| d.min_probability().unwrap()))
                        .collect();
                    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
                }
                // Rebuild the input map with rotated insertion order.
                let mut keys: Vec<_> = per.keys().cloned().collect();
                keys.rotate_left(rotate % n);
                let rotated: BTreeMap<String, NormalizedDistribution> =
                    keys.into_iter().map(|k| (k.clone(), per[&k].clone())).collect();
                prop_assert_eq!(combine_patterns("e", &rotated, &spec).unwrap(), c);
            }
        }
    }
}
