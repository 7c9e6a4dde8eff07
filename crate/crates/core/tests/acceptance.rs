//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use lscd_core::bos::{self, BosVector};
use lscd_core::detect::{self, Aggregate, DetectionParams};
use lscd_core::eval;
use lscd_core::patterns::PatternSet;
use lscd_core::pipeline::{self, Pipeline, Stage};
use lscd_core::postproc::{self, CombinationSpec, NormalizedDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(what.into()) }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!(
            "took {:.2}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

fn brute_cosine_distance(a: &[u32], b: &[u32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

fn apd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(640);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let dims = rng.gen_range(1..=30);
        let n_old = rng.gen_range(1..=20);
        let n_new = rng.gen_range(1..=20);
        let mut draw = |n: usize| -> Vec<Vec<u32>> {
            (0..n)
                .map(|_| {
                    (0..dims)
                        .map(|_| {
                            if rng.gen_bool(0.3) {
                                rng.gen_range(1..=5)
                            } else {
                                0
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let old = draw(n_old);
        let new = draw(n_new);
        let mut sum = 0.0;
        for o in &old {
            for n in &new {
                sum += brute_cosine_distance(o, n);
            }
        }
        let expected = sum / (n_old * n_new) as f64;
        let to_vecs = |rows: &[Vec<u32>]| -> Vec<BosVector> {
            rows.iter()
                .enumerate()
                .map(|(i, r)| BosVector::from_dense(format!("e{i}"), r))
                .collect()
        };
        let got = detect::apd(&bos::cross_distances(&to_vecs(&old), &to_vecs(&new)))
            .map_err(|e| e.to_string())?;
        let diff = (got - expected).abs();
        worst = worst.max(diff);
        check(diff <= 1e-12, format!("case {case}: {got} vs {expected}"))?;
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "200 sets, max |diff| {worst:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn synthetic_separation() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::load(&common::write_fixture(dir.path(), 2021, 0));
    let out = config.output_dir.clone();
    let p = Pipeline::new(config).map_err(|e| e.to_string())?;
    p.run(&[
        Stage::Extract,
        Stage::Sample,
        Stage::Prompts,
        Stage::Substitutes,
        Stage::Combine,
        Stage::Vectors,
        Stage::Graded,
        Stage::Binary,
    ])
    .map_err(|e| e.to_string())?;
    let graded = pipeline::read_graded(&out.join(pipeline::GRADED)).map_err(|e| e.to_string())?;
    let (changed, stable) = (graded["changed"], graded["stable"]);
    check(
        changed > stable,
        format!("APD changed {changed} <= stable {stable}"),
    )?;
    let params = DetectionParams::default();
    check(
        detect::detect_change(changed, &params),
        format!("changed not flagged, APD {changed}"),
    )?;
    check(
        !detect::detect_change(stable, &params),
        format!("stable flagged, APD {stable}"),
    )?;
    for method in [detect::Method::Min, detect::Method::Percentile] {
        let labels = pipeline::read_binary(&out.join(pipeline::binary_file(method)))
            .map_err(|e| e.to_string())?;
        let c = labels["changed"];
        check(
            c.change && c.gain && !c.loss,
            format!("{method}: changed got {c:?}"),
        )?;
        check(
            !labels["stable"].change,
            format!("{method}: stable marked changed"),
        )?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "APD changed {changed:.3}, stable {stable:.3}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn dense(rows: &[&[u32]]) -> Vec<BosVector> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| BosVector::from_dense(format!("e{i}"), r))
        .collect()
}

fn rule_hand_cases() -> Outcome {
    let p = DetectionParams::default();
    let e = |x: lscd_core::Error| x.to_string();

    let old = dense(&[&[1, 0], &[1, 0], &[1, 0]]);
    let two_clusters = dense(&[&[1, 0], &[0, 1]]);
    let a = detect::aid_detect(&old, &two_clusters, &p).map_err(e)?;
    check(
        a.aid_new == 1.0 && a.gain && !a.loss,
        format!("orthogonal clusters: {a:?}"),
    )?;

    let same = dense(&[&[1, 1, 0], &[0, 1, 1], &[1, 0, 1]]);
    let a = detect::aid_detect(&same, &same, &p).map_err(e)?;
    check(
        a.aid_new == a.aid_old && a.gain && !a.loss,
        format!("identical sets: {a:?}"),
    )?;

    let zero = DetectionParams {
        aid_b1: 0.0,
        aid_b2: 0.0,
        ..p
    };
    let a = detect::aid_detect(&same, &same, &zero).map_err(e)?;
    check(!a.gain && !a.loss, format!("zero margins: {a:?}"))?;

    let mut col = vec![0.1; 4];
    col.extend([0.9; 96]);
    let m = bos::DistanceMatrix::from_values(
        (0..100).map(|i| format!("o{i}")).collect(),
        vec!["n0".into()],
        col,
    );
    let min = detect::minmax_detect(&m, &p, Aggregate::Min).map_err(e)?;
    let perc = detect::minmax_detect(&m, &p, Aggregate::Percentile).map_err(e)?;
    check(!min.0, "4/96 split: min mode must not report gain")?;
    check(perc.0, "4/96 split: percentile mode must report gain")?;
    Ok("AID x3, zero margins, 4/96 min vs percentile".into())
}

/// Weighted mean with min-probability fallback, written from the rule.
fn direct_combination(
    weights: &[f64],
    present: &[Option<Vec<(String, f64)>>],
) -> BTreeMap<String, f64> {
    let any_missing = present.iter().any(Option::is_none);
    let mass: f64 = weights
        .iter()
        .zip(present)
        .filter(|(_, d)| d.is_some())
        .map(|(w, _)| w)
        .sum();
    let mut support = BTreeSet::new();
    for d in present.iter().flatten() {
        for (s, _) in d {
            support.insert(s.clone());
        }
    }
    let mut out = BTreeMap::new();
    for s in support {
        let mut total = 0.0;
        for (w, d) in weights.iter().zip(present) {
            let Some(d) = d else { continue };
            let w = if any_missing { w / mass } else { *w };
            let p = match d.iter().find(|(t, _)| *t == s) {
                Some((_, p)) => *p,
                None => d.iter().map(|(_, p)| *p).fold(f64::INFINITY, f64::min),
            };
            if p.is_finite() {
                total += w * p;
            }
        }
        out.insert(s, total);
    }
    out
}

fn combination_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(643);
    let pool = [
        "casa", "perro", "gato", "mesa", "libro", "coche", "sol", "mar", "rio",
    ];
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let k = rng.gen_range(2..=4);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let head: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - head;
        let present: Vec<Option<Vec<(String, f64)>>> = (0..k)
            .map(|i| {
                if i > 0 && rng.gen_bool(0.15) {
                    return None;
                }
                let n = rng.gen_range(usize::from(i == 0)..=6);
                let mut words: Vec<&str> = pool.to_vec();
                let mut entries = Vec::new();
                for _ in 0..n {
                    let w = words.swap_remove(rng.gen_range(0..words.len()));
                    entries.push((w.to_owned(), rng.gen_range(0.001..0.3)));
                }
                Some(entries)
            })
            .collect();
        let ids: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
        let spec = CombinationSpec::new(ids.iter().cloned().zip(weights.iter().copied()).collect())
            .map_err(|e| e.to_string())?;
        let per_pattern: BTreeMap<String, NormalizedDistribution> = ids
            .iter()
            .zip(&present)
            .filter_map(|(id, d)| {
                d.as_ref().map(|d| {
                    (
                        id.clone(),
                        postproc::merge_duplicates("x", d.iter().cloned()),
                    )
                })
            })
            .collect();
        let got =
            postproc::combine_patterns("x", &per_pattern, &spec).map_err(|e| e.to_string())?;
        let expected = direct_combination(&weights, &present);
        check(
            got.distribution.entries.keys().eq(expected.keys()),
            format!("case {case}: support differs"),
        )?;
        for (s, p) in &expected {
            let diff = (got.distribution.entries[s] - p).abs();
            worst = worst.max(diff);
            check(
                diff <= 1e-12,
                format!("case {case}, {s}: {} vs {p}", got.distribution.entries[s]),
            )?;
        }
    }
    Ok(format!("100 cases, max |diff| {worst:.1e}"))
}

fn df_boundaries() -> Outcome {
    let kept = |k: usize| -> Result<bool, String> {
        let lists: Vec<Vec<String>> = (0..1000)
            .map(|i| {
                let mut l = vec!["pad".to_owned()];
                if i < k {
                    l.push("t".to_owned());
                }
                if i % 2 == 0 {
                    l.push("half".to_owned());
                }
                l
            })
            .collect();
        let v = bos::build_vocabulary("w", &lists, 0.03, 0.9).map_err(|e| e.to_string())?;
        Ok(v.index_of("t").is_some())
    };
    for (k, want) in [(30, false), (31, true), (899, true), (900, false)] {
        check(
            kept(k)? == want,
            format!("df {}: expected kept={want}", k as f64 / 1000.0),
        )?;
    }
    Ok("0.03 out, 0.031 in, 0.899 in, 0.9 out".into())
}

fn spearman_cases() -> Outcome {
    let map = |xs: &[f64]| -> BTreeMap<String, f64> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| (format!("w{i}"), *x))
            .collect()
    };
    let rho = |p: &BTreeMap<String, f64>, g: &BTreeMap<String, f64>| -> Result<f64, String> {
        eval::spearman(p, g)
            .map(|r| r.rho)
            .map_err(|e| e.to_string())
    };
    let gold = map(&[1.0, 2.0, 3.0, 4.0]);
    check((rho(&gold, &gold)? - 1.0).abs() < 1e-12, "identity")?;
    check(
        (rho(&map(&[4.0, 3.0, 2.0, 1.0]), &gold)? + 1.0).abs() < 1e-12,
        "reversal",
    )?;
    // 1 - 6 * sum(d^2) / (n (n^2 - 1)) with one adjacent swap: 1 - 12/60
    check(
        (rho(&map(&[2.0, 1.0, 3.0, 4.0]), &gold)? - 0.8).abs() < 1e-12,
        "adjacent swap",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(645);
    for case in 0..50 {
        let n = rng.gen_range(3..=40);
        let pred = map(&(0..n).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        let g = map(&(0..n).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        let base = rho(&pred, &g)?;
        let transformed: BTreeMap<String, f64> = pred
            .iter()
            .map(|(w, x)| (w.clone(), (3.0 * x).exp() + x.powi(3)))
            .collect();
        check(
            (rho(&transformed, &g)? - base).abs() < 1e-12,
            format!("monotone case {case}"),
        )?;
    }
    Ok("identity, reversal, swap 0.8, 50 monotone maps".into())
}

fn weight_audit() -> Outcome {
    let set = PatternSet::builtin("m1_7").ok_or("m1_7 missing")?;
    let weights: Vec<f64> = set.patterns.iter().map(|p| p.weight).collect();
    let expected = [0.25, 0.25, 0.25, 0.0625, 0.0625, 0.0625, 0.0625];
    check(weights == expected, format!("weights {weights:?}"))?;
    let sum: f64 = weights.iter().sum();
    check(sum == 1.0, format!("sum {sum}"))?;
    Ok(format!("{weights:?}, sum {sum}"))
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut trees = Vec::new();
    for workers in [1, 4] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = common::load(&common::write_fixture(dir.path(), 77, workers));
        let out = config.output_dir.clone();
        let p = Pipeline::new(config).map_err(|e| e.to_string())?;
        p.run(&Stage::ALL).map_err(|e| e.to_string())?;
        let mut tree = files(&out);
        // wall times differ between runs
        tree.remove(pipeline::MANIFEST);
        trees.push(tree);
    }
    check(trees[0].keys().eq(trees[1].keys()), "file sets differ")?;
    for (name, bytes) in &trees[0] {
        check(trees[1][name] == *bytes, format!("{name} differs"))?;
    }
    Ok(format!(
        "{} files identical across 1 and 4 workers",
        trees[0].len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("APD oracle equivalence", apd_oracle),
        ("synthetic end-to-end separation", synthetic_separation),
        ("detection-rule hand cases", rule_hand_cases),
        ("combination oracle", combination_oracle),
        ("vocabulary filter boundaries", df_boundaries),
        ("Spearman", spearman_cases),
        ("pattern-weight audit", weight_audit),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
