//! Change scores and decisions from bag-of-substitutes distances.
//!
//! Graded change is the average pairwise distance (APD) between old and new
//! usages. A word is flagged as changed when its APD exceeds a threshold;
//! for changed words, sense gain and loss are decided by one of three rules:
//!
//! * AID compares the average inner distance of new usages with that of
//!   old usages, shifted by two margins.
//! * min flags gain when some new usage is farther than a threshold from
//!   every old usage, and loss symmetrically.
//! * percentile is min with the nearest-rank 5th percentile in place of
//!   the minimum, so a few close outliers do not mask a new sense.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bos::{BosVector, DistanceMatrix, cosine_distance};
use crate::corpus::Period;
use crate::error::{Error, Result};
use crate::rank::average_ranks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionParams {
    pub change_threshold: f64,
    pub aid_b1: f64,
    pub aid_b2: f64,
    pub minmax_threshold: f64,
    pub percentile_p: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            change_threshold: 0.8,
            aid_b1: 0.03,
            aid_b2: -0.03,
            minmax_threshold: 0.8,
            percentile_p: 5.0,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("change_threshold", self.change_threshold),
            ("minmax_threshold", self.minmax_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.percentile_p > 0.0 && self.percentile_p < 100.0) {
            return Err(Error::Validation(format!(
                "percentile_p = {} outside (0, 100)",
                self.percentile_p
            )));
        }
        if !(self.aid_b1.is_finite() && self.aid_b2.is_finite()) {
            return Err(Error::Validation("AID margins must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AID")]
    Aid,
    #[serde(rename = "min")]
    Min,
    #[serde(rename = "percentile")]
    Percentile,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Aid, Method::Min, Method::Percentile];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Aid => "AID",
            Method::Min => "min",
            Method::Percentile => "percentile",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AID" | "aid" => Ok(Method::Aid),
            "min" => Ok(Method::Min),
            "percentile" | "perc" => Ok(Method::Percentile),
            other => Err(Error::Validation(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedScore {
    pub word: String,
    pub apd: f64,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryVerdict {
    pub word: String,
    pub change: bool,
    pub gain: bool,
    pub loss: bool,
    pub method: Method,
}

/// Mean of all matrix cells.
pub fn apd(matrix: &DistanceMatrix) -> Result<f64> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok(matrix.values().iter().sum::<f64>() / matrix.values().len() as f64)
}

/// Average ranks of APD values; the highest APD gets the highest rank.
pub fn rank_words(scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let values: Vec<f64> = scores.values().copied().collect();
    scores.keys().cloned().zip(average_ranks(&values)).collect()
}

pub fn graded_scores(scores: &BTreeMap<String, f64>) -> Vec<GradedScore> {
    let ranks = rank_words(scores);
    scores
        .iter()
        .map(|(word, apd)| GradedScore {
            word: word.clone(),
            apd: *apd,
            rank: ranks[word],
        })
        .collect()
}

pub fn detect_change(apd_value: f64, params: &DetectionParams) -> bool {
    apd_value > params.change_threshold
}

/// Mean cosine distance over unordered pairs of distinct vectors.
pub fn average_inner_distance(vecs: &[BosVector], period: Period) -> Result<f64> {
    if vecs.len() < 2 {
        return Err(Error::TooFewVectors {
            period,
            got: vecs.len(),
        });
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            sum += cosine_distance(&vecs[i], &vecs[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AidOutcome {
    /// Inner distance of new usages.
    pub aid_new: f64,
    /// Inner distance of old usages.
    pub aid_old: f64,
    pub gain: bool,
    pub loss: bool,
}

pub fn aid_rule(aid_new: f64, aid_old: f64, params: &DetectionParams) -> AidOutcome {
    AidOutcome {
        aid_new,
        aid_old,
        gain: aid_new > aid_old - params.aid_b1,
        loss: aid_old > aid_new - params.aid_b2,
    }
}

pub fn aid_detect(
    old: &[BosVector],
    new: &[BosVector],
    params: &DetectionParams,
) -> Result<AidOutcome> {
    let aid_old = average_inner_distance(old, Period::Old)?;
    let aid_new = average_inner_distance(new, Period::New)?;
    Ok(aid_rule(aid_new, aid_old, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Min,
    Percentile,
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[k.clamp(1, sorted.len()) - 1]
}

fn aggregate(values: &[f64], mode: Aggregate, p: f64) -> f64 {
    match mode {
        Aggregate::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregate::Percentile => nearest_rank_percentile(values, p),
    }
}

/// Per-new-usage score: min or percentile of its distances to old usages.
pub fn new_usage_scores(matrix: &DistanceMatrix, mode: Aggregate, p: f64) -> Vec<f64> {
    (0..matrix.n_cols())
        .map(|j| aggregate(&matrix.column(j), mode, p))
        .collect()
}

/// Per-old-usage score: min or percentile of its distances to new usages.
pub fn old_usage_scores(matrix: &DistanceMatrix, mode: Aggregate, p: f64) -> Vec<f64> {
    (0..matrix.n_rows())
        .map(|i| aggregate(matrix.row(i), mode, p))
        .collect()
}

/// `(gain, loss)` from the min or percentile rule.
pub fn minmax_detect(
    matrix: &DistanceMatrix,
    params: &DetectionParams,
    mode: Aggregate,
) -> Result<(bool, bool)> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let t = params.minmax_threshold;
    let p = params.percentile_p;
    let gain = new_usage_scores(matrix, mode, p).into_iter().any(|s| s > t);
    let loss = old_usage_scores(matrix, mode, p).into_iter().any(|s| s > t);
    Ok((gain, loss))
}

/// New usages whose percentile distance to the old usages exceeds the
/// min/percentile threshold.
pub fn far_new_usages(matrix: &DistanceMatrix, params: &DetectionParams) -> Vec<bool> {
    new_usage_scores(matrix, Aggregate::Percentile, params.percentile_p)
        .into_iter()
        .map(|s| s > params.minmax_threshold)
        .collect()
}

/// Everything a verdict needs for one word.
pub struct WordEvidence<'a> {
    pub word: &'a str,
    pub apd: f64,
    pub old: &'a [BosVector],
    pub new: &'a [BosVector],
    pub matrix: &'a DistanceMatrix,
}

/// Change from the APD threshold; gain and loss only when changed.
pub fn verdict(
    evidence: &WordEvidence<'_>,
    method: Method,
    params: &DetectionParams,
) -> Result<BinaryVerdict> {
    let change = detect_change(evidence.apd, params);
    let (gain, loss) = if !change {
        (false, false)
    } else {
        match method {
            Method::Aid => {
                let o = aid_detect(evidence.old, evidence.new, params)?;
                (o.gain, o.loss)
            }
            Method::Min => minmax_detect(evidence.matrix, params, Aggregate::Min)?,
            Method::Percentile => minmax_detect(evidence.matrix, params, Aggregate::Percentile)?,
        }
    };
    Ok(BinaryVerdict {
        word: evidence.word.to_owned(),
        change,
        gain,
        loss,
        method,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeRow {
    pub stem: String,
    pub p_new: f64,
    pub p_old: f64,
    /// `None` stands for an infinite ratio (`p_old == 0`).
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeReport {
    pub word: String,
    pub rows: Vec<DiscriminativeRow>,
}

pub const DEFAULT_MIN_P_NEW: f64 = 0.2;

/// Substitutes frequent among far new usages and rare among old usages.
///
/// `P(w|M)` is the share of far new usages whose top-k list contains `w`,
/// `P(w|O)` the share of old usages. Rows are ordered by `P(w|M)/P(w|O)`
/// with infinite ratios first; a substitute never seen in old usages is
/// kept only when `P(w|M) > min_p_new`.
pub fn discriminative_substitutes(
    word: &str,
    old_terms: &[Vec<String>],
    new_terms: &[Vec<String>],
    far_mask: &[bool],
    min_p_new: f64,
) -> Result<DiscriminativeReport> {
    assert_eq!(new_terms.len(), far_mask.len(), "far mask length");
    let far: Vec<&Vec<String>> = new_terms
        .iter()
        .zip(far_mask)
        .filter_map(|(t, &f)| f.then_some(t))
        .collect();
    if far.is_empty() {
        return Err(Error::NoGainEvidence(word.to_owned()));
    }
    let share = |lists: &[&Vec<String>]| -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for list in lists {
            let unique: BTreeSet<&String> = list.iter().collect();
            for t in unique {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        let n = lists.len().max(1) as f64;
        counts.into_iter().map(|(t, c)| (t, c as f64 / n)).collect()
    };
    let p_new = share(&far);
    let old_refs: Vec<&Vec<String>> = old_terms.iter().collect();
    let p_old = share(&old_refs);

    let mut rows: Vec<DiscriminativeRow> = p_new
        .into_iter()
        .filter_map(|(stem, pn)| {
            let po = p_old.get(&stem).copied().unwrap_or(0.0);
            if po == 0.0 && pn <= min_p_new {
                return None;
            }
            let ratio = (po > 0.0).then(|| pn / po);
            Some(DiscriminativeRow {
                stem,
                p_new: pn,
                p_old: po,
                ratio,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        let ra = a.ratio.unwrap_or(f64::INFINITY);
        let rb = b.ratio.unwrap_or(f64::INFINITY);
        rb.total_cmp(&ra)
            .then_with(|| b.p_new.total_cmp(&a.p_new))
            .then_with(|| a.stem.cmp(&b.stem))
    });
    Ok(DiscriminativeReport {
        word: word.to_owned(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> DistanceMatrix {
        DistanceMatrix::from_values(
            (0..rows).map(|i| format!("o{i}")).collect(),
            (0..cols).map(|j| format!("n{j}")).collect(),
            values,
        )
    }

    fn dense(rows: &[&[u32]]) -> Vec<BosVector> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| BosVector::from_dense(format!("e{i}"), r))
            .collect()
    }

    #[test]
    fn apd_is_the_cell_mean() {
        assert_eq!(apd(&matrix(2, 2, vec![0.0; 4])).unwrap(), 0.0);
        assert_eq!(apd(&matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0])).unwrap(), 0.5);
        assert!(matches!(
            apd(&matrix(0, 0, vec![])),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn ranks_average_ties() {
        let scores = BTreeMap::from([
            ("a".to_string(), 0.5),
            ("b".to_string(), 0.9),
            ("c".to_string(), 0.5),
        ]);
        let r = rank_words(&scores);
        assert_eq!((r["a"], r["b"], r["c"]), (1.5, 3.0, 1.5));
        let equal: BTreeMap<String, f64> = (0..4).map(|i| (format!("w{i}"), 0.3)).collect();
        assert!(rank_words(&equal).values().all(|&r| r == 2.5));
    }

    #[test]
    fn change_threshold_is_strict() {
        let p = DetectionParams::default();
        assert!(detect_change(0.85, &p));
        assert!(!detect_change(0.8, &p));
        assert!(!detect_change(0.0, &p));
    }

    #[test]
    fn aid_new_sense_case() {
        let old = dense(&[&[1, 0], &[1, 0], &[1, 0]]);
        let new = dense(&[&[1, 0], &[0, 1]]);
        let o = aid_detect(&old, &new, &DetectionParams::default()).unwrap();
        assert_eq!((o.aid_old, o.aid_new), (0.0, 1.0));
        assert!(o.gain && !o.loss);
    }

    #[test]
    fn aid_identical_sets() {
        let vecs = dense(&[&[1, 0, 1], &[0, 1, 1], &[1, 1, 0]]);
        let o = aid_detect(&vecs, &vecs, &DetectionParams::default()).unwrap();
        assert_eq!(o.aid_old, o.aid_new);
        assert!(o.gain && !o.loss);
        let zero = DetectionParams {
            aid_b1: 0.0,
            aid_b2: 0.0,
            ..Default::default()
        };
        let o = aid_detect(&vecs, &vecs, &zero).unwrap();
        assert!(!o.gain && !o.loss);
    }

    #[test]
    fn aid_needs_two_vectors() {
        let err = aid_detect(
            &dense(&[&[1]]),
            &dense(&[&[1], &[1]]),
            &DetectionParams::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::TooFewVectors {
                period: Period::Old,
                got: 1
            }
        ));
    }

    #[test]
    fn identical_sets_have_no_far_usages() {
        let vecs = dense(&[&[1, 0], &[0, 1]]);
        let m = crate::bos::cross_distances(&vecs, &vecs);
        for mode in [Aggregate::Min, Aggregate::Percentile] {
            assert_eq!(
                minmax_detect(&m, &DetectionParams::default(), mode).unwrap(),
                (false, false)
            );
        }
    }

    #[test]
    fn percentile_ignores_a_few_close_usages() {
        let mut col = vec![0.1; 4];
        col.extend(vec![0.9; 96]);
        let m = matrix(100, 1, col);
        let p = DetectionParams::default();
        assert!(!minmax_detect(&m, &p, Aggregate::Min).unwrap().0);
        assert!(minmax_detect(&m, &p, Aggregate::Percentile).unwrap().0);
        assert_eq!(nearest_rank_percentile(&m.column(0), 5.0), 0.9);
    }

    #[test]
    fn all_far_means_gain_and_loss() {
        let m = matrix(3, 3, vec![1.0; 9]);
        for mode in [Aggregate::Min, Aggregate::Percentile] {
            assert_eq!(
                minmax_detect(&m, &DetectionParams::default(), mode).unwrap(),
                (true, true)
            );
        }
    }

    #[test]
    fn unchanged_words_have_no_gain_or_loss() {
        let vecs = dense(&[&[1, 0], &[0, 1]]);
        let m = matrix(2, 2, vec![1.0; 4]);
        let ev = WordEvidence {
            word: "w",
            apd: 0.5,
            old: &vecs,
            new: &vecs,
            matrix: &m,
        };
        for method in Method::ALL {
            let v = verdict(&ev, method, &DetectionParams::default()).unwrap();
            assert_eq!((v.change, v.gain, v.loss), (false, false, false));
        }
    }

    fn terms(lists: &[&[&str]]) -> Vec<Vec<String>> {
        lists
            .iter()
            .map(|l| l.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn discriminative_rows() {
        // 5 old usages, 10 far new usages.
        let old = terms(&[&["x"], &["x"], &["y"], &["y"], &["y"]]);
        let mut new_lists: Vec<&[&str]> = Vec::new();
        for i in 0..10 {
            new_lists.push(match i {
                0 => &["lp", "x", "rare"],
                1..=3 => &["lp", "x"],
                4..=6 => &["lp"],
                _ => &["y"],
            });
        }
        let new = terms(&new_lists);
        let report = discriminative_substitutes("disco", &old, &new, &[true; 10], 0.2).unwrap();
        let by_stem: BTreeMap<_, _> = report.rows.iter().map(|r| (r.stem.as_str(), r)).collect();
        // lp: 7/10 far, never old -> infinite
        assert_eq!(by_stem["lp"].ratio, None);
        assert!((by_stem["lp"].p_new - 0.7).abs() < 1e-15);
        // rare: 0.1 far, never old -> excluded
        assert!(!by_stem.contains_key("rare"));
        // x: 0.4 / 0.4 = 1; y: 0.3 / 0.6 = 0.5
        assert!((by_stem["x"].ratio.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            report
                .rows
                .iter()
                .map(|r| r.stem.as_str())
                .collect::<Vec<_>>(),
            ["lp", "x", "y"]
        );
    }

    #[test]
    fn discriminative_ratio_and_mask() {
        let old = terms(&[&["a"], &["b"], &["c"], &["d"], &["e"]]);
        let new = terms(&[&["a"], &["a"], &["z"], &["z"], &["z"]]);
        // only the first two new usages are far: P(a|M) = 1, P(a|O) = 0.2
        let mask = [true, true, false, false, false];
        let r = discriminative_substitutes("w", &old, &new, &mask, 0.2).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!((r.rows[0].ratio.unwrap() - 5.0).abs() < 1e-12);
        let err = discriminative_substitutes("w", &old, &new, &[false; 5], 0.2).unwrap_err();
        assert!(matches!(err, Error::NoGainEvidence(_)));
    }

    #[test]
    fn params_validation() {
        assert!(DetectionParams::default().validate().is_ok());
        let bad = DetectionParams {
            percentile_p: 100.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use proptest::prelude::*;

        use super::*;
        use crate::rank::pearson;

        fn square() -> impl Strategy<Value = DistanceMatrix> {
            (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
                prop::collection::vec(0.0f64..=1.0, r * c).prop_map(move |v| matrix(r, c, v))
            })
        }

        proptest! {
            #[test]
            fn transpose_swaps_gain_and_loss(m in square(), t in 0.0f64..1.0) {
                let params = DetectionParams { minmax_threshold: t, ..Default::default() };
                for mode in [Aggregate::Min, Aggregate::Percentile] {
                    let (g, l) = minmax_detect(&m, &params, mode).unwrap();
                    prop_assert_eq!(minmax_detect(&m.transpose(), &params, mode).unwrap(), (l, g));
                }
            }

            #[test]
            fn percentile_dominates_min(m in square()) {
                let mins = new_usage_scores(&m, Aggregate::Min, 5.0);
                let percs = new_usage_scores(&m, Aggregate::Percentile, 5.0);
                for (a, b) in mins.iter().zip(&percs) {
                    prop_assert!(b >= a);
                }
            }

            #[test]
            fn ranks_follow_distinct_scores(values in prop::collection::btree_set(0u32..10_000, 2..30)) {
                let scores: BTreeMap<String, f64> = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("w{i:03}"), *v as f64 / 10_000.0))
                    .collect();
                let ranks = rank_words(&scores);
                let x: Vec<f64> = crate::rank::average_ranks(&scores.values().copied().collect::<Vec<_>>());
                let y: Vec<f64> = ranks.values().copied().collect();
                prop_assert_eq!(pearson(&x, &y), Some(1.0));
                let n = scores.len() as f64;
                prop_assert_eq!(y.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
            }

            #[test]
            fn aid_is_scale_invariant(
                rows in prop::collection::vec(prop::collection::vec(0u32..3, 4), 4..10),
                k in 2u32..5,
            ) {
                let half = rows.len() / 2;
                let vecs: Vec<BosVector> = rows.iter().enumerate()
                    .map(|(i, r)| BosVector::from_dense(format!("e{i}"), r)).collect();
                let scaled: Vec<BosVector> = rows.iter().enumerate()
                    .map(|(i, r)| BosVector::from_dense(format!("e{i}"), &r.iter().map(|c| c * k).collect::<Vec<_>>()))
                    .collect();
                let p = DetectionParams::default();
                let a = aid_detect(&vecs[..half], &vecs[half..], &p).unwrap();
                let b = aid_detect(&scaled[..half], &scaled[half..], &p).unwrap();
                prop_assert!((a.aid_new - b.aid_new).abs() <= 1e-12);
                prop_assert!((a.aid_old - b.aid_old).abs() <= 1e-12);
                prop_assert_eq!((a.gain, a.loss), (b.gain, b.loss));
            }
        }
    }
}
