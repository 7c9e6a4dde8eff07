//! Lemma-annotated corpora, usage extraction and balanced sampling.
//!
//! Corpus files hold one sentence per line: the surface tokens, a TAB, and
//! the lemmas, each side separated by whitespace. Lemmas are lowercased on
//! ingest so lookups are exact matches on lowercase strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default number of usages taken per period.
pub const DEFAULT_SAMPLE_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Old,
    New,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Old => "old",
            Period::New => "new",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    tokens: Vec<String>,
    lemmas: Vec<String>,
    doc_id: String,
}

impl TokenizedSentence {
    pub fn new(
        tokens: Vec<String>,
        lemmas: Vec<String>,
        doc_id: impl Into<String>,
    ) -> Result<Self> {
        if tokens.len() != lemmas.len() || tokens.is_empty() {
            return Err(Error::LengthMismatch {
                tokens: tokens.len(),
                lemmas: lemmas.len(),
            });
        }
        Ok(Self {
            tokens,
            lemmas,
            doc_id: doc_id.into(),
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lemmas(&self) -> &[String] {
        &self.lemmas
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One occurrence of a target lemma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageExample {
    pub word: String,
    pub period: Period,
    pub sentence: Arc<TokenizedSentence>,
    pub target_index: usize,
    pub example_id: String,
}

impl UsageExample {
    /// The inflected form at the target position.
    pub fn surface(&self) -> &str {
        &self.sentence.tokens()[self.target_index]
    }
}

/// Wire form of a usage: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub example_id: String,
    pub word: String,
    pub period: Period,
    pub tokens: Vec<String>,
    pub lemmas: Vec<String>,
    pub target_index: usize,
}

impl From<&UsageExample> for UsageRecord {
    fn from(ex: &UsageExample) -> Self {
        Self {
            example_id: ex.example_id.clone(),
            word: ex.word.clone(),
            period: ex.period,
            tokens: ex.sentence.tokens().to_vec(),
            lemmas: ex.sentence.lemmas().to_vec(),
            target_index: ex.target_index,
        }
    }
}

impl UsageRecord {
    pub fn into_example(self) -> Result<UsageExample> {
        let doc_id = self
            .example_id
            .rsplit_once(':')
            .map(|(doc, _)| doc.to_owned())
            .unwrap_or_else(|| self.example_id.clone());
        let sentence = TokenizedSentence::new(self.tokens, self.lemmas, doc_id)?;
        if self.target_index >= sentence.len() || sentence.lemmas()[self.target_index] != self.word
        {
            return Err(Error::Validation(format!(
                "usage {}: lemma at target_index {} is not {:?}",
                self.example_id, self.target_index, self.word
            )));
        }
        Ok(UsageExample {
            word: self.word,
            period: self.period,
            sentence: Arc::new(sentence),
            target_index: self.target_index,
            example_id: self.example_id,
        })
    }
}

/// Lemma → usages for one period. Immutable once built.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    period: Period,
    entries: BTreeMap<String, Vec<UsageExample>>,
}

impl CorpusIndex {
    pub fn period(&self) -> Period {
        self.period
    }

    pub fn get(&self, lemma: &str) -> &[UsageExample] {
        self.entries.get(lemma).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_examples(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub index: CorpusIndex,
    pub sentences: usize,
    /// Sentences dropped because tokens and lemmas did not line up.
    pub rejected: usize,
}

/// Splits one `tokens<TAB>lemmas` line. Unequal column lengths are left
/// for the caller, which rejects the sentence.
fn parse_line(line: &str, line_no: usize) -> Result<(Vec<String>, Vec<String>)> {
    let mut columns = line.split('\t');
    let (Some(tokens), Some(lemmas), None) = (columns.next(), columns.next(), columns.next())
    else {
        return Err(Error::parse(line_no, "expected tokens<TAB>lemmas"));
    };
    Ok((
        tokens.split_whitespace().map(str::to_owned).collect(),
        lemmas.split_whitespace().map(str::to_lowercase).collect(),
    ))
}

/// Indexes every lemma occurrence of a corpus stream.
pub fn ingest_corpus<R: BufRead>(reader: R, period: Period) -> Result<IngestReport> {
    ingest_filtered(reader, period, None)
}

/// Like [`ingest_corpus`] but keeps only the lemmas in `targets`.
pub fn ingest_filtered<R: BufRead>(
    reader: R,
    period: Period,
    targets: Option<&BTreeSet<String>>,
) -> Result<IngestReport> {
    let mut entries: BTreeMap<String, Vec<UsageExample>> = BTreeMap::new();
    let mut sentences = 0;
    let mut rejected = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (tokens, lemmas) = parse_line(&line, line_no)?;
        let doc_id = format!("{period}:{line_no}");
        let sentence = match TokenizedSentence::new(tokens, lemmas, doc_id) {
            Ok(s) => Arc::new(s),
            Err(_) => {
                log::warn!(
                    "{period} corpus line {line_no}: token/lemma count mismatch, sentence rejected"
                );
                rejected += 1;
                continue;
            }
        };
        sentences += 1;
        for (idx, lemma) in sentence.lemmas().iter().enumerate() {
            if targets.is_some_and(|t| !t.contains(lemma)) {
                continue;
            }
            let example = UsageExample {
                word: lemma.clone(),
                period,
                sentence: Arc::clone(&sentence),
                target_index: idx,
                example_id: format!("{}:{idx}", sentence.doc_id()),
            };
            entries.entry(lemma.clone()).or_default().push(example);
        }
    }
    Ok(IngestReport {
        index: CorpusIndex { period, entries },
        sentences,
        rejected,
    })
}

/// Equal-size usage samples of one word from both periods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancedSample {
    pub word: String,
    pub n: usize,
    pub old_examples: Vec<UsageExample>,
    pub new_examples: Vec<UsageExample>,
    pub seed: u64,
}

/// Per-word sampling seed, independent of word processing order.
pub fn word_seed(global_seed: u64, word: &str) -> u64 {
    rng::derive_seed(global_seed, word)
}

/// Takes `min(cap, |old|, |new|)` usages from each period without
/// replacement. A period holding exactly that many is taken whole. Sampled
/// usages keep their corpus order.
pub fn sample_balanced(
    word: &str,
    old: &[UsageExample],
    new: &[UsageExample],
    cap: usize,
    seed: u64,
) -> Result<BalancedSample> {
    for (period, list) in [(Period::Old, old), (Period::New, new)] {
        if list.is_empty() {
            return Err(Error::AbsentInPeriod {
                word: word.to_owned(),
                period,
            });
        }
    }
    if cap == 0 {
        return Err(Error::Validation("sampling cap must be at least 1".into()));
    }
    let n = cap.min(old.len()).min(new.len());
    let mut rng = rng::rng_from_seed(seed);
    let mut take = |list: &[UsageExample]| -> Vec<UsageExample> {
        if list.len() == n {
            return list.to_vec();
        }
        let mut picked = index::sample(&mut rng, list.len(), n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| list[i].clone()).collect()
    };
    let old_examples = take(old);
    let new_examples = take(new);
    Ok(BalancedSample {
        word: word.to_owned(),
        n,
        old_examples,
        new_examples,
        seed,
    })
}
