//! Scoring against gold data: Spearman's rho for graded change and F1 for
//! binary change, sense gain and sense loss.
//!
//! Gold words without a prediction count as score 0 / label 0.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::rank::{average_ranks, pearson};

pub type GoldGraded = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldLabels {
    pub change: bool,
    pub gain: Option<bool>,
    pub loss: Option<bool>,
}

pub type GoldBinary = BTreeMap<String, GoldLabels>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Gold words scored.
    pub n: usize,
    /// Gold words that had no prediction.
    pub missing: usize,
}

/// Spearman correlation over the gold word set.
pub fn spearman(pred: &BTreeMap<String, f64>, gold: &GoldGraded) -> Result<SpearmanResult> {
    let common = gold.keys().filter(|w| pred.contains_key(*w)).count();
    if common < 2 {
        return Err(Error::TooFewWords(common));
    }
    let missing = gold.len() - common;
    if missing > 0 {
        log::warn!("{missing} gold words have no prediction; scored as 0");
    }
    let p: Vec<f64> = gold
        .keys()
        .map(|w| pred.get(w).copied().unwrap_or(0.0))
        .collect();
    let g: Vec<f64> = gold.values().copied().collect();
    let (rp, rg) = (average_ranks(&p), average_ranks(&g));
    let rho = pearson(&rp, &rg).ok_or_else(|| {
        Error::ZeroVariance(if rp.iter().all(|r| *r == rp[0]) {
            "prediction"
        } else {
            "gold"
        })
    })?;
    Ok(SpearmanResult {
        rho,
        n: gold.len(),
        missing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub value: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Precision or recall had a zero denominator; `value` is then 0.
    pub undefined: bool,
}

/// F1 of the positive class. Argument order matters.
pub fn f1(pred: &BTreeMap<String, bool>, gold: &BTreeMap<String, bool>) -> F1Score {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (word, &g) in gold {
        let p = pred.get(word).copied().unwrap_or(false);
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let undefined = tp + fp == 0 || tp + fn_ == 0;
    let value = if undefined || tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    };
    F1Score {
        value,
        tp,
        fp,
        fn_,
        undefined,
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').map(str::trim).collect()
}

fn parse_label(s: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(line, format!("label {other:?} is not 0 or 1"))),
    }
}

/// `word<TAB>score` lines; `#` lines and blanks are skipped.
pub fn read_gold_graded<R: BufRead>(reader: R) -> Result<GoldGraded> {
    let mut out = GoldGraded::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(&line);
        let [word, score] = f.as_slice() else {
            return Err(Error::parse(i + 1, "expected word<TAB>score"));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad score {score:?}")))?;
        if !score.is_finite() {
            return Err(Error::parse(i + 1, "score must be finite"));
        }
        out.insert(word.to_lowercase(), score);
    }
    Ok(out)
}

/// `word<TAB>change[<TAB>gain<TAB>loss]` lines; empty or `NA` gain/loss
/// cells mean absent.
pub fn read_gold_binary<R: BufRead>(reader: R) -> Result<GoldBinary> {
    let mut out = GoldBinary::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(&line);
        if f.len() < 2 || f.len() > 4 {
            return Err(Error::parse(
                i + 1,
                "expected word<TAB>change[<TAB>gain<TAB>loss]",
            ));
        }
        let optional = |k: usize| -> Result<Option<bool>> {
            match f.get(k) {
                None | Some(&"") | Some(&"NA") => Ok(None),
                Some(v) => parse_label(v, i + 1).map(Some),
            }
        };
        out.insert(
            f[0].to_lowercase(),
            GoldLabels {
                change: parse_label(f[1], i + 1)?,
                gain: optional(2)?,
                loss: optional(3)?,
            },
        );
    }
    Ok(out)
}

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

/// Predicted labels per word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictedLabels {
    pub change: bool,
    pub gain: bool,
    pub loss: bool,
}

/// CH, GAIN and LOSS F1. Gain and loss are scored only over gold words
/// that changed and carry the corresponding label.
pub fn binary_metrics(
    pred: &BTreeMap<String, PredictedLabels>,
    gold: &GoldBinary,
) -> Vec<MetricRecord> {
    let missing = gold.keys().filter(|w| !pred.contains_key(*w)).count();
    if missing > 0 {
        log::warn!("{missing} gold words have no binary prediction; scored as 0");
    }
    let project = |f: fn(&PredictedLabels) -> bool| -> BTreeMap<String, bool> {
        pred.iter().map(|(w, l)| (w.clone(), f(l))).collect()
    };
    let gold_change: BTreeMap<String, bool> =
        gold.iter().map(|(w, l)| (w.clone(), l.change)).collect();
    let gated = |f: fn(&GoldLabels) -> Option<bool>| -> BTreeMap<String, bool> {
        gold.iter()
            .filter(|(_, l)| l.change)
            .filter_map(|(w, l)| f(l).map(|v| (w.clone(), v)))
            .collect()
    };
    let mut out = Vec::new();
    let ch = f1(&project(|l| l.change), &gold_change);
    out.push(MetricRecord {
        metric: "CH_F1".into(),
        value: ch.value,
        n: gold_change.len(),
    });
    for (name, p, g) in [
        ("GAIN_F1", project(|l| l.gain), gated(|l| l.gain)),
        ("LOSS_F1", project(|l| l.loss), gated(|l| l.loss)),
    ] {
        if g.is_empty() {
            continue;
        }
        let score = f1(&p, &g);
        if score.undefined {
            log::warn!("{name}: precision or recall undefined, reported as 0");
        }
        out.push(MetricRecord {
            metric: name.into(),
            value: score.value,
            n: g.len(),
        });
    }
    out
}

pub fn write_report(path: &Path, records: &[MetricRecord]) -> Result<()> {
    jsonl::write_file(path, records)
}
