//! Bag-of-substitutes vectors.
//!
//! A word's vocabulary is the set of substitutes found in the top-k lists of
//! strictly more than `min_df` and strictly less than `max_df` of its
//! usages. Each usage becomes a sparse count vector over that vocabulary,
//! and old and new usages are compared by cosine distance.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::error::{Error, Result};

pub const DEFAULT_MIN_DF: f64 = 0.03;
pub const DEFAULT_MAX_DF: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct WordVocabulary {
    pub word: String,
    /// Sorted lexicographically; a term's position is its vector index.
    pub terms: Vec<String>,
    pub df: BTreeMap<String, f64>,
}

impl WordVocabulary {
    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Document-frequency filter over per-usage top-k term lists.
pub fn build_vocabulary(
    word: &str,
    term_lists: &[Vec<String>],
    min_df: f64,
    max_df: f64,
) -> Result<WordVocabulary> {
    if term_lists.is_empty() {
        return Err(Error::Unrepresentable(word.to_owned()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for list in term_lists {
        let unique: BTreeSet<&str> = list.iter().map(String::as_str).collect();
        for term in unique {
            *counts.entry(term).or_default() += 1;
        }
    }
    let n = term_lists.len() as f64;
    let df: BTreeMap<String, f64> = counts
        .into_iter()
        .map(|(t, c)| (t.to_owned(), c as f64 / n))
        .filter(|(_, df)| min_df < *df && *df < max_df)
        .collect();
    if df.is_empty() {
        return Err(Error::Unrepresentable(word.to_owned()));
    }
    Ok(WordVocabulary {
        word: word.to_owned(),
        terms: df.keys().cloned().collect(),
        df,
    })
}

/// Sparse nonnegative counts, sorted by vocabulary index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BosVector {
    pub example_id: String,
    pub counts: Vec<(usize, u32)>,
}

impl BosVector {
    pub fn new(
        example_id: impl Into<String>,
        counts: impl IntoIterator<Item = (usize, u32)>,
    ) -> Self {
        let mut merged: BTreeMap<usize, u32> = BTreeMap::new();
        for (i, c) in counts {
            if c > 0 {
                *merged.entry(i).or_default() += c;
            }
        }
        Self {
            example_id: example_id.into(),
            counts: merged.into_iter().collect(),
        }
    }

    pub fn from_dense(example_id: impl Into<String>, dense: &[u32]) -> Self {
        Self::new(example_id, dense.iter().copied().enumerate())
    }

    pub fn is_zero(&self) -> bool {
        self.counts.is_empty()
    }

    fn squared_norm(&self) -> f64 {
        self.counts
            .iter()
            .map(|&(_, c)| (c as f64) * (c as f64))
            .sum()
    }

    fn dot(&self, other: &Self) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.counts.len() && j < other.counts.len() {
            let (a, ca) = self.counts[i];
            let (b, cb) = other.counts[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += ca as f64 * cb as f64;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Presence counts of vocabulary terms among each usage's top-k terms.
/// `top_terms` pairs an example id with its already truncated top-k list.
pub fn build_bos_vectors<S: AsRef<str>>(
    top_terms: &[(S, Vec<String>)],
    vocab: &WordVocabulary,
) -> Vec<BosVector> {
    top_terms
        .iter()
        .map(|(example_id, terms)| {
            let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
            for term in terms {
                if let Some(i) = vocab.index_of(term) {
                    *counts.entry(i).or_default() += 1;
                }
            }
            // Keys were merged upstream, so a term can occur only once.
            assert!(
                counts.values().all(|&c| c == 1),
                "{}: duplicate term in top-k list",
                example_id.as_ref()
            );
            BosVector::new(example_id.as_ref(), counts)
        })
        .collect()
}

/// `1 - cos(a, b)`, or 1 when either vector is all zero.
pub fn cosine_distance(a: &BosVector, b: &BosVector) -> f64 {
    let norms = a.squared_norm() * b.squared_norm();
    if norms == 0.0 {
        return 1.0;
    }
    (1.0 - a.dot(b) / norms.sqrt()).clamp(0.0, 1.0)
}

/// Old × new cosine distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(rows: Vec<String>, cols: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(rows.len() * cols.len(), values.len(), "matrix shape");
        Self { rows, cols, values }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.n_cols() {
            values.extend(self.column(j));
        }
        Self {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            values,
        }
    }

    /// Text dump: a header naming the files that hold row and column ids,
    /// then one tab-separated row per line with 9 decimals.
    pub fn write_text<W: Write>(&self, mut w: W, rows_ref: &str, cols_ref: &str) -> Result<()> {
        writeln!(
            w,
            "# rows={rows_ref} cols={cols_ref} shape={}x{}",
            self.n_rows(),
            self.n_cols()
        )?;
        for i in 0..self.n_rows() {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.9}")).collect();
            writeln!(w, "{}", line.join("\t"))?;
        }
        Ok(())
    }
}

pub fn cross_distances(old: &[BosVector], new: &[BosVector]) -> DistanceMatrix {
    let mut values = Vec::with_capacity(old.len() * new.len());
    for a in old {
        for b in new {
            values.push(cosine_distance(a, b));
        }
    }
    DistanceMatrix {
        rows: old.iter().map(|v| v.example_id.clone()).collect(),
        cols: new.iter().map(|v| v.example_id.clone()).collect(),
        values,
    }
}
