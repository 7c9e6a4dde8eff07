//! Stage-by-stage pipeline over files in the output directory.
//!
//! Every stage reads the files of earlier stages and writes its own, so the
//! expensive substitute stage can run once and the cheap stages can be
//! repeated. Each run of a stage appends a record to `manifest.jsonl`
//! holding digests of its inputs and outputs; a stage whose inputs and
//! outputs still match its last record is skipped.
//!
//! | stage         | reads                                   | writes                                        |
//! |---------------|-----------------------------------------|-----------------------------------------------|
//! | `extract`     | corpora, targets                        | `usages.jsonl`, `extract_report.tsv`          |
//! | `sample`      | `usages.jsonl`, targets                 | `sample.jsonl`, `sample_summary.tsv`, `skipped.tsv` |
//! | `prompts`     | `sample.jsonl`                          | `prompts.jsonl`                               |
//! | `substitutes` | `prompts.jsonl`, provider               | `substitutes.jsonl`                           |
//! | `combine`     | `prompts.jsonl`, `substitutes.jsonl`    | `combined.jsonl`, `combine_warnings.tsv`      |
//! | `vectors`     | `sample.jsonl`, `combined.jsonl`        | `vectors.jsonl`, `unrepresentable.tsv`, `matrices/` |
//! | `graded`      | `vectors.jsonl`                         | `graded.tsv`                                  |
//! | `binary`      | `vectors.jsonl`                         | `binary_<method>.tsv`                         |
//! | `discrim`     | `vectors.jsonl`, substitutes            | `discriminative.tsv`                          |
//! | `eval`        | `graded.tsv`, `binary_<method>.tsv`, gold | `eval.jsonl`                                |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bos::{self, BosVector, DistanceMatrix};
use crate::config::{ProviderConfig, RunConfig};
use crate::corpus::{self, Period, UsageExample, UsageRecord};
use crate::detect::{self, Method, WordEvidence};
use crate::error::{Error, Result};
use crate::eval::{self, MetricRecord, PredictedLabels};
use crate::jsonl;
use crate::patterns::{self, MaskedPrompt, PatternSet};
use crate::postproc::{self, CombinationSpec, CombinedRecord, NormalizedDistribution, Stemmer};
use crate::provider::{
    HttpProvider, SenseAssignment, SubstituteDistribution, SubstituteProvider, SubstituteRecord,
    SubstituteStore, SyntheticProvider,
};

pub const USAGES: &str = "usages.jsonl";
pub const EXTRACT_REPORT: &str = "extract_report.tsv";
pub const SAMPLE: &str = "sample.jsonl";
pub const SAMPLE_SUMMARY: &str = "sample_summary.tsv";
pub const SKIPPED: &str = "skipped.tsv";
pub const PROMPTS: &str = "prompts.jsonl";
pub const SUBSTITUTES: &str = "substitutes.jsonl";
pub const COMBINED: &str = "combined.jsonl";
pub const COMBINE_WARNINGS: &str = "combine_warnings.tsv";
pub const VECTORS: &str = "vectors.jsonl";
pub const UNREPRESENTABLE: &str = "unrepresentable.tsv";
pub const MATRICES: &str = "matrices";
pub const GRADED: &str = "graded.tsv";
pub const DISCRIMINATIVE: &str = "discriminative.tsv";
pub const EVAL: &str = "eval.jsonl";
pub const MANIFEST: &str = "manifest.jsonl";

pub fn binary_file(method: Method) -> String {
    format!("binary_{}.tsv", method.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Extract,
    Sample,
    Prompts,
    Substitutes,
    Combine,
    Vectors,
    Graded,
    Binary,
    Discrim,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Extract,
        Stage::Sample,
        Stage::Prompts,
        Stage::Substitutes,
        Stage::Combine,
        Stage::Vectors,
        Stage::Graded,
        Stage::Binary,
        Stage::Discrim,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Sample => "sample",
            Stage::Prompts => "prompts",
            Stage::Substitutes => "substitutes",
            Stage::Combine => "combine",
            Stage::Vectors => "vectors",
            Stage::Graded => "graded",
            Stage::Binary => "binary",
            Stage::Discrim => "discrim",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub stage: String,
    pub input_digest: String,
    pub output_digest: String,
    pub seed: u64,
    pub seconds: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub cached: bool,
    pub elapsed: Duration,
}

/// A stage input and the stage that produces it.
struct Input {
    path: PathBuf,
    requires: &'static str,
}

pub struct Pipeline {
    config: RunConfig,
    patterns: PatternSet,
    stemmer: Box<dyn Stemmer>,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let patterns = config.pattern_set()?;
        let stemmer = config.stemmer()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            patterns,
            stemmer,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    /// Stages run by default: all of them, minus `eval` without gold data.
    pub fn default_stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Eval || !self.config.gold.is_empty())
            .collect()
    }

    /// Runs the given stages in pipeline order.
    pub fn run(&self, stages: &[Stage]) -> Result<Vec<StageOutcome>> {
        let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
        wanted.into_iter().map(|s| self.run_stage(s)).collect()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        let inputs = self.inputs(stage);
        for input in &inputs {
            if !input.path.exists() {
                return Err(Error::MissingInput {
                    stage: stage.name(),
                    requires: input.requires,
                    path: input.path.clone(),
                });
            }
        }
        std::fs::create_dir_all(&self.config.output_dir)
            .map_err(|e| Error::file(&self.config.output_dir, e))?;
        let input_digest = self.input_digest(stage, &inputs)?;
        if let Some(prev) = self.last_record(stage)?
            && prev.input_digest == input_digest
            && let Some(out) = self.output_digest(stage)?
            && out == prev.output_digest
        {
            log::info!("{stage}: inputs unchanged, skipped");
            self.append_manifest(&ManifestRecord {
                stage: stage.name().into(),
                input_digest,
                output_digest: out,
                seed: self.config.seed,
                seconds: 0.0,
                cached: true,
            })?;
            return Ok(StageOutcome {
                stage,
                cached: true,
                elapsed: Duration::ZERO,
            });
        }
        let start = Instant::now();
        self.pool.install(|| self.execute(stage))?;
        let elapsed = start.elapsed();
        let output_digest = self.output_digest(stage)?.expect("stage wrote its outputs");
        self.append_manifest(&ManifestRecord {
            stage: stage.name().into(),
            input_digest,
            output_digest,
            seed: self.config.seed,
            seconds: elapsed.as_secs_f64(),
            cached: false,
        })?;
        log::info!("{stage}: done in {:.2}s", elapsed.as_secs_f64());
        Ok(StageOutcome {
            stage,
            cached: false,
            elapsed,
        })
    }

    fn inputs(&self, stage: Stage) -> Vec<Input> {
        let c = &self.config;
        let ext = |p: &Path| Input {
            path: p.to_path_buf(),
            requires: "validate-config",
        };
        let own = |name: &str, requires: &'static str| Input {
            path: self.out(name),
            requires,
        };
        match stage {
            Stage::Extract => vec![
                ext(&c.corpus.old),
                ext(&c.corpus.new),
                ext(&c.corpus.targets),
            ],
            Stage::Sample => vec![own(USAGES, "extract"), ext(&c.corpus.targets)],
            Stage::Prompts => vec![own(SAMPLE, "sample")],
            Stage::Substitutes => {
                let mut v = vec![own(PROMPTS, "prompts")];
                match &c.provider {
                    ProviderConfig::File { path } => v.push(ext(path)),
                    ProviderConfig::Synthetic { senses } => v.push(ext(senses)),
                    ProviderConfig::Http { .. } => {}
                }
                v
            }
            Stage::Combine => vec![own(PROMPTS, "prompts"), own(SUBSTITUTES, "substitutes")],
            Stage::Vectors => vec![own(SAMPLE, "sample"), own(COMBINED, "combine")],
            Stage::Graded | Stage::Binary => vec![own(VECTORS, "vectors")],
            Stage::Discrim => match self.discrim_pattern() {
                Some(_) => vec![
                    own(VECTORS, "vectors"),
                    own(PROMPTS, "prompts"),
                    own(SUBSTITUTES, "substitutes"),
                ],
                None => vec![own(VECTORS, "vectors"), own(COMBINED, "combine")],
            },
            Stage::Eval => {
                let mut v = vec![own(GRADED, "graded")];
                if c.gold.binary.is_some() {
                    // binary_<method>.tsv: the name is dynamic, `requires` is static
                    v.push(Input {
                        path: self.out(&binary_file(c.binary.eval_method)),
                        requires: "binary",
                    });
                }
                v.extend(
                    [&c.gold.graded_jsd, &c.gold.graded_compare, &c.gold.binary]
                        .into_iter()
                        .flatten()
                        .map(|p| ext(p)),
                );
                v
            }
        }
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let names: Vec<String> = match stage {
            Stage::Extract => vec![USAGES.into(), EXTRACT_REPORT.into()],
            Stage::Sample => vec![SAMPLE.into(), SAMPLE_SUMMARY.into(), SKIPPED.into()],
            Stage::Prompts => vec![PROMPTS.into()],
            Stage::Substitutes => vec![SUBSTITUTES.into()],
            Stage::Combine => vec![COMBINED.into(), COMBINE_WARNINGS.into()],
            Stage::Vectors => {
                let mut v = vec![VECTORS.to_string(), UNREPRESENTABLE.into()];
                if self.config.vectors.dump_matrices {
                    v.push(MATRICES.into());
                }
                v
            }
            Stage::Graded => vec![GRADED.into()],
            Stage::Binary => self
                .config
                .binary
                .methods
                .iter()
                .map(|m| binary_file(*m))
                .collect(),
            Stage::Discrim => vec![DISCRIMINATIVE.into()],
            Stage::Eval => vec![EVAL.into()],
        };
        names.iter().map(|n| self.out(n)).collect()
    }

    /// Parameters that shape a stage's outputs besides its input files.
    fn stage_params(&self, stage: Stage) -> serde_json::Value {
        let c = &self.config;
        let patterns: Vec<(&str, &str, f64)> = self
            .patterns
            .patterns
            .iter()
            .map(|p| (p.pattern_id.as_str(), p.template.as_str(), p.weight))
            .collect();
        match stage {
            Stage::Extract => serde_json::json!({}),
            Stage::Sample => serde_json::json!({ "seed": c.seed, "cap": c.sample_cap }),
            Stage::Prompts => serde_json::json!({ "patterns": patterns, "mask": c.mask_token }),
            Stage::Substitutes => {
                serde_json::json!({ "provider": c.provider, "top_k": c.top_k, "seed": c.seed })
            }
            Stage::Combine => serde_json::json!({ "patterns": patterns, "stemmer": c.stemmer }),
            Stage::Vectors => serde_json::json!({ "top_k": c.top_k, "vectors": c.vectors }),
            Stage::Graded => serde_json::json!({}),
            Stage::Binary => {
                serde_json::json!({ "detection": c.detection, "methods": c.binary.methods })
            }
            Stage::Discrim => serde_json::json!({
                "detection": c.detection,
                "discrim": c.discrim,
                "pattern": self.discrim_pattern(),
                "top_k": c.top_k,
                "stemmer": c.stemmer,
            }),
            Stage::Eval => {
                serde_json::json!({ "eval_method": c.binary.eval_method, "gold": c.gold })
            }
        }
    }

    fn input_digest(&self, stage: Stage, inputs: &[Input]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(self.stage_params(stage).to_string().as_bytes());
        for input in inputs {
            hash_path(&mut h, &input.path)?;
        }
        Ok(hex::encode(h.finalize()))
    }

    /// `None` when some output is missing.
    fn output_digest(&self, stage: Stage) -> Result<Option<String>> {
        let mut h = Sha256::new();
        for path in self.outputs(stage) {
            if !path.exists() {
                return Ok(None);
            }
            hash_path(&mut h, &path)?;
        }
        Ok(Some(hex::encode(h.finalize())))
    }

    fn last_record(&self, stage: Stage) -> Result<Option<ManifestRecord>> {
        let path = self.out(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let records: Vec<ManifestRecord> = jsonl::read_file(&path)?;
        Ok(records.into_iter().rev().find(|r| r.stage == stage.name()))
    }

    fn append_manifest(&self, record: &ManifestRecord) -> Result<()> {
        let path = self.out(MANIFEST);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::file(&path, e))?;
        serde_json::to_writer(&mut f, record)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    fn execute(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Extract => self.extract(),
            Stage::Sample => self.sample(),
            Stage::Prompts => self.prompts(),
            Stage::Substitutes => self.substitutes(),
            Stage::Combine => self.combine(),
            Stage::Vectors => self.vectors(),
            Stage::Graded => self.graded(),
            Stage::Binary => self.binary(),
            Stage::Discrim => self.discrim(),
            Stage::Eval => self.eval(),
        }
    }

    fn extract(&self) -> Result<()> {
        let c = &self.config;
        let targets = read_targets(&c.corpus.targets)?;
        let mut records = Vec::new();
        let mut report = String::from("period\tsentences\trejected\texamples\n");
        let mut indexes = Vec::new();
        for (period, path) in [(Period::Old, &c.corpus.old), (Period::New, &c.corpus.new)] {
            let r = corpus::ingest_filtered(jsonl::open(path)?, period, Some(&targets))?;
            report.push_str(&format!(
                "{period}\t{}\t{}\t{}\n",
                r.sentences,
                r.rejected,
                r.index.total_examples()
            ));
            indexes.push(r.index);
        }
        for word in &targets {
            for index in &indexes {
                records.extend(index.get(word).iter().map(UsageRecord::from));
            }
        }
        jsonl::write_file(&self.out(USAGES), &records)?;
        write_text(&self.out(EXTRACT_REPORT), &report)
    }

    fn sample(&self) -> Result<()> {
        let c = &self.config;
        let targets = read_targets(&c.corpus.targets)?;
        let mut by_word: BTreeMap<String, (Vec<UsageExample>, Vec<UsageExample>)> = BTreeMap::new();
        for record in jsonl::read_file::<UsageRecord>(&self.out(USAGES))? {
            let ex = record.into_example()?;
            let slot = by_word.entry(ex.word.clone()).or_default();
            match ex.period {
                Period::Old => slot.0.push(ex),
                Period::New => slot.1.push(ex),
            }
        }
        let empty = (Vec::new(), Vec::new());
        let targets: Vec<&String> = targets.iter().collect();
        let results: Vec<Result<corpus::BalancedSample>> = targets
            .par_iter()
            .map(|word| {
                let (old, new) = by_word.get(*word).unwrap_or(&empty);
                corpus::sample_balanced(
                    word,
                    old,
                    new,
                    c.sample_cap,
                    corpus::word_seed(c.seed, word),
                )
            })
            .collect();
        let mut records = Vec::new();
        let mut summary = String::from("word\tn\tseed\n");
        let mut skipped = String::from("word\treason\n");
        for (word, result) in targets.iter().zip(results) {
            match result {
                Ok(s) => {
                    summary.push_str(&format!("{}\t{}\t{}\n", s.word, s.n, s.seed));
                    records.extend(
                        s.old_examples
                            .iter()
                            .chain(&s.new_examples)
                            .map(UsageRecord::from),
                    );
                }
                Err(e @ Error::AbsentInPeriod { .. }) => {
                    log::warn!("{e}; word skipped");
                    skipped.push_str(&format!("{word}\t{e}\n"));
                }
                Err(e) => return Err(e),
            }
        }
        jsonl::write_file(&self.out(SAMPLE), &records)?;
        write_text(&self.out(SAMPLE_SUMMARY), &summary)?;
        write_text(&self.out(SKIPPED), &skipped)
    }

    fn prompts(&self) -> Result<()> {
        let examples = read_sample(&self.out(SAMPLE))?;
        let prompts: Vec<MaskedPrompt> = examples
            .iter()
            .flat_map(|ex| {
                self.patterns
                    .patterns
                    .iter()
                    .map(move |p| patterns::apply_pattern(p, ex, &self.config.mask_token))
            })
            .collect();
        jsonl::write_file(&self.out(PROMPTS), &prompts)
    }

    fn substitutes(&self) -> Result<()> {
        let prompts: Vec<MaskedPrompt> = jsonl::read_file(&self.out(PROMPTS))?;
        let provider = build_provider(&self.config)?;
        let batch = match &self.config.provider {
            ProviderConfig::Http { batch_size, .. } => *batch_size,
            _ => 4096,
        };
        let dists = fetch_all(provider.as_ref(), &prompts, batch, self.config.top_k)?;
        let records: Vec<SubstituteRecord> = dists.iter().map(SubstituteRecord::from).collect();
        jsonl::write_file(&self.out(SUBSTITUTES), &records)
    }

    fn combine(&self) -> Result<()> {
        let prompts: Vec<MaskedPrompt> = jsonl::read_file(&self.out(PROMPTS))?;
        let (store, report) = SubstituteStore::load(&self.out(SUBSTITUTES))?;
        if report.rejected > 0 {
            log::warn!("{} substitute records rejected", report.rejected);
        }
        let combined = combine_prompts(&prompts, &store, &self.patterns, self.stemmer.as_ref())?;
        let mut warnings = String::from("example_id\tkind\tpattern_id\n");
        let mut records = Vec::with_capacity(combined.len());
        for c in &combined {
            let id = &c.distribution.example_id;
            for p in &c.redistributed {
                warnings.push_str(&format!("{id}\tmissing\t{p}\n"));
            }
            for p in &c.empty {
                warnings.push_str(&format!("{id}\tempty\t{p}\n"));
            }
            records.push(CombinedRecord::from(&c.distribution));
        }
        jsonl::write_file(&self.out(COMBINED), &records)?;
        write_text(&self.out(COMBINE_WARNINGS), &warnings)
    }

    fn vectors(&self) -> Result<()> {
        let c = &self.config;
        let groups = group_sample(&read_sample(&self.out(SAMPLE))?);
        let combined = read_combined(&self.out(COMBINED))?;
        let results: Vec<(String, Result<WordVectors>)> = groups
            .par_iter()
            .map(|(word, (old, new))| {
                let r = word_vectors(
                    word,
                    old,
                    new,
                    &combined,
                    c.top_k,
                    c.vectors.min_df,
                    c.vectors.max_df,
                );
                (word.clone(), r)
            })
            .collect();
        let mut records = Vec::new();
        let mut unrepresentable = String::from("word\treason\n");
        for (word, r) in results {
            match r {
                Ok(wv) => records.push(wv),
                Err(e @ Error::Unrepresentable(_)) => {
                    log::warn!("{e}; word excluded");
                    unrepresentable
                        .push_str(&format!("{word}\tempty vocabulary after df filtering\n"));
                }
                Err(e) => return Err(e),
            }
        }
        if c.vectors.dump_matrices {
            let dir = self.out(MATRICES);
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
            }
            for (i, wv) in records.iter().enumerate() {
                let stem = format!("{i:05}_{}", sanitize(&wv.word));
                let m = wv.matrix();
                write_text(&dir.join(format!("{stem}.rows")), &lines(&m.rows))?;
                write_text(&dir.join(format!("{stem}.cols")), &lines(&m.cols))?;
                let mut w = jsonl::create(&dir.join(format!("{stem}.tsv")))?;
                m.write_text(&mut w, &format!("{stem}.rows"), &format!("{stem}.cols"))?;
                w.flush()?;
            }
        }
        jsonl::write_file(&self.out(VECTORS), &records)?;
        write_text(&self.out(UNREPRESENTABLE), &unrepresentable)
    }

    fn graded(&self) -> Result<()> {
        let words: Vec<WordVectors> = jsonl::read_file(&self.out(VECTORS))?;
        let scores: BTreeMap<String, f64> = words
            .par_iter()
            .map(|wv| Ok((wv.word.clone(), detect::apd(&wv.matrix())?)))
            .collect::<Result<_>>()?;
        write_text(
            &self.out(GRADED),
            &format_graded(&detect::graded_scores(&scores)),
        )
    }

    fn binary(&self) -> Result<()> {
        let words: Vec<WordVectors> = jsonl::read_file(&self.out(VECTORS))?;
        let params = self.config.detection;
        for &method in &self.config.binary.methods {
            let verdicts: Vec<detect::BinaryVerdict> = words
                .par_iter()
                .map(|wv| wv.verdict(method, &params))
                .collect::<Result<_>>()?;
            write_text(
                &self.out(&binary_file(method)),
                &format_binary(method, &verdicts),
            )?;
        }
        Ok(())
    }

    fn discrim_pattern(&self) -> Option<String> {
        match &self.config.discrim.pattern {
            Some(p) => Some(p.clone()),
            None => self.patterns.get("M_y_T").map(|p| p.pattern_id.clone()),
        }
    }

    fn discrim(&self) -> Result<()> {
        let c = &self.config;
        let words: Vec<WordVectors> = jsonl::read_file(&self.out(VECTORS))?;
        let dists: HashMap<String, NormalizedDistribution> = match self.discrim_pattern() {
            Some(pattern) => {
                let prompts: Vec<MaskedPrompt> = jsonl::read_file(&self.out(PROMPTS))?;
                let (store, _) = SubstituteStore::load(&self.out(SUBSTITUTES))?;
                prompts
                    .iter()
                    .filter(|p| p.pattern_id == pattern)
                    .filter_map(|p| {
                        store.get(&p.prompt_id).map(|d| {
                            let n = postproc::normalize_distribution(
                                d,
                                &p.example_id,
                                self.stemmer.as_ref(),
                            );
                            (p.example_id.clone(), n)
                        })
                    })
                    .collect()
            }
            None => read_combined(&self.out(COMBINED))?,
        };
        let top = |id: &str| -> Vec<String> {
            dists
                .get(id)
                .map(|d| d.top_terms(c.top_k))
                .unwrap_or_default()
        };
        let reports: Vec<Option<detect::DiscriminativeReport>> = words
            .par_iter()
            .map(|wv| {
                let m = wv.matrix();
                if !detect::detect_change(detect::apd(&m)?, &c.detection) {
                    return Ok(None);
                }
                let far = detect::far_new_usages(&m, &c.detection);
                if !far.contains(&true) {
                    return Ok(None);
                }
                let old: Vec<Vec<String>> = wv.old.iter().map(|v| top(&v.example_id)).collect();
                let new: Vec<Vec<String>> = wv.new.iter().map(|v| top(&v.example_id)).collect();
                detect::discriminative_substitutes(&wv.word, &old, &new, &far, c.discrim.min_p_new)
                    .map(Some)
            })
            .collect::<Result<_>>()?;
        let mut out = String::new();
        for report in reports.iter().flatten() {
            out.push_str(&format_discriminative(report));
        }
        write_text(&self.out(DISCRIMINATIVE), &out)
    }

    fn eval(&self) -> Result<()> {
        let c = &self.config;
        if c.gold.is_empty() {
            return Err(Error::Validation(
                "eval needs at least one gold file".into(),
            ));
        }
        let mut records = Vec::new();
        let graded = read_graded(&self.out(GRADED))?;
        for (metric, path) in [
            ("JSD_SPR", &c.gold.graded_jsd),
            ("COMPARE_SPR", &c.gold.graded_compare),
        ] {
            if let Some(path) = path {
                let gold = eval::read_gold_graded(jsonl::open(path)?)?;
                let r = eval::spearman(&graded, &gold)?;
                records.push(MetricRecord {
                    metric: metric.into(),
                    value: r.rho,
                    n: r.n,
                });
            }
        }
        if let Some(path) = &c.gold.binary {
            let gold = eval::read_gold_binary(jsonl::open(path)?)?;
            let pred = read_binary(&self.out(&binary_file(c.binary.eval_method)))?;
            records.extend(eval::binary_metrics(&pred, &gold));
        }
        eval::write_report(&self.out(EVAL), &records)
    }
}

fn hash_path(h: &mut Sha256, path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::file(path, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            hash_path(h, &e)?;
        }
        return Ok(());
    }
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    if let Some(name) = path.file_name() {
        h.update(name.as_encoded_bytes());
    }
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn sanitize(word: &str) -> String {
    word.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

/// Target lemmas, lowercased; blank and `#` lines skipped.
pub fn read_targets(path: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in jsonl::open(path)?.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() && !word.starts_with('#') {
            out.insert(word.to_lowercase());
        }
    }
    Ok(out)
}

pub fn read_sample(path: &Path) -> Result<Vec<UsageExample>> {
    jsonl::read_file::<UsageRecord>(path)?
        .into_iter()
        .map(UsageRecord::into_example)
        .collect()
}

/// A word with its sampled old and new example ids.
pub type SampleGroup = (String, (Vec<String>, Vec<String>));

/// Sampled example ids per word, old and new, in file order.
pub fn group_sample(examples: &[UsageExample]) -> Vec<SampleGroup> {
    let mut groups: BTreeMap<String, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for ex in examples {
        let slot = groups.entry(ex.word.clone()).or_default();
        match ex.period {
            Period::Old => slot.0.push(ex.example_id.clone()),
            Period::New => slot.1.push(ex.example_id.clone()),
        }
    }
    groups.into_iter().collect()
}

pub fn read_combined(path: &Path) -> Result<HashMap<String, NormalizedDistribution>> {
    Ok(jsonl::read_file::<CombinedRecord>(path)?
        .into_iter()
        .map(|r| (r.example_id.clone(), NormalizedDistribution::from(r)))
        .collect())
}

pub fn build_provider(config: &RunConfig) -> Result<Box<dyn SubstituteProvider>> {
    Ok(match &config.provider {
        ProviderConfig::File { path } => {
            let (store, report) = SubstituteStore::load(path)?;
            if report.rejected > 0 || report.duplicates > 0 {
                log::warn!(
                    "{}: {} records rejected, {} duplicates",
                    path.display(),
                    report.rejected,
                    report.duplicates
                );
            }
            Box::new(store)
        }
        ProviderConfig::Http {
            endpoint,
            attempts,
            timeout_secs,
            ..
        } => Box::new(HttpProvider::new(
            endpoint.clone(),
            config.top_k,
            *attempts,
            Duration::from_secs(*timeout_secs),
        )),
        ProviderConfig::Synthetic { senses } => {
            let assignments: Vec<SenseAssignment> = jsonl::read_file(senses)?;
            Box::new(SyntheticProvider::from_assignments(
                assignments,
                config.seed,
                config.top_k,
            )?)
        }
    })
}

/// Fetches every prompt in batches; any missing prompt fails the call.
pub fn fetch_all(
    provider: &dyn SubstituteProvider,
    prompts: &[MaskedPrompt],
    batch: usize,
    top_k: usize,
) -> Result<Vec<SubstituteDistribution>> {
    let mut out = Vec::with_capacity(prompts.len());
    let mut missing = Vec::new();
    for chunk in prompts.chunks(batch.max(1)) {
        let mut fetched = provider.fetch(chunk)?;
        for p in chunk {
            match fetched.found.remove(&p.prompt_id) {
                Some(mut d) => {
                    d.truncate(top_k);
                    out.push(d);
                }
                None => missing.push(p.prompt_id.clone()),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Provider(format!(
            "{} prompts missing from provider (first: {})",
            missing.len(),
            missing[0]
        )));
    }
    Ok(out)
}

/// Normalizes and combines the substitutes of each example's prompts.
/// Examples come out in order of first appearance in `prompts`.
pub fn combine_prompts(
    prompts: &[MaskedPrompt],
    store: &SubstituteStore,
    set: &PatternSet,
    stemmer: &dyn Stemmer,
) -> Result<Vec<postproc::Combination>> {
    let spec = CombinationSpec::from_set(set)?;
    let mut order: Vec<&str> = Vec::new();
    let mut by_example: HashMap<&str, Vec<&MaskedPrompt>> = HashMap::new();
    for p in prompts {
        let slot = by_example.entry(&p.example_id).or_default();
        if slot.is_empty() {
            order.push(&p.example_id);
        }
        slot.push(p);
    }
    order
        .par_iter()
        .map(|id| {
            let per_pattern: BTreeMap<String, NormalizedDistribution> = by_example[id]
                .iter()
                .filter_map(|p| {
                    store.get(&p.prompt_id).map(|d| {
                        (
                            p.pattern_id.clone(),
                            postproc::normalize_distribution(d, id, stemmer),
                        )
                    })
                })
                .collect();
            postproc::combine_patterns(id, &per_pattern, &spec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub example_id: String,
    pub counts: Vec<(usize, u32)>,
}

/// One word's vocabulary and old/new vectors; one line of `vectors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVectors {
    pub word: String,
    pub terms: Vec<String>,
    #[serde(with = "vector_list")]
    pub old: Vec<BosVector>,
    #[serde(with = "vector_list")]
    pub new: Vec<BosVector>,
}

mod vector_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::VectorRecord;
    use crate::bos::BosVector;

    pub fn serialize<S: Serializer>(v: &[BosVector], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|b| VectorRecord {
                example_id: b.example_id.clone(),
                counts: b.counts.clone(),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BosVector>, D::Error> {
        Ok(Vec::<VectorRecord>::deserialize(d)?
            .into_iter()
            .map(|r| BosVector::new(r.example_id, r.counts))
            .collect())
    }
}

impl WordVectors {
    pub fn matrix(&self) -> DistanceMatrix {
        bos::cross_distances(&self.old, &self.new)
    }

    pub fn verdict(
        &self,
        method: Method,
        params: &detect::DetectionParams,
    ) -> Result<detect::BinaryVerdict> {
        let m = self.matrix();
        let evidence = WordEvidence {
            word: &self.word,
            apd: detect::apd(&m)?,
            old: &self.old,
            new: &self.new,
            matrix: &m,
        };
        match detect::verdict(&evidence, method, params) {
            Err(e @ Error::TooFewVectors { .. }) => {
                log::warn!("{}: {e}; gain and loss left false", self.word);
                Ok(detect::BinaryVerdict {
                    word: self.word.clone(),
                    change: detect::detect_change(evidence.apd, params),
                    gain: false,
                    loss: false,
                    method,
                })
            }
            other => other,
        }
    }
}

/// Vocabulary and vectors for one word from its combined distributions.
pub fn word_vectors(
    word: &str,
    old_ids: &[String],
    new_ids: &[String],
    combined: &HashMap<String, NormalizedDistribution>,
    top_k: usize,
    min_df: f64,
    max_df: f64,
) -> Result<WordVectors> {
    let top = |id: &String| -> Result<(String, Vec<String>)> {
        let d = combined.get(id).ok_or_else(|| {
            Error::Validation(format!("{word}: no combined distribution for {id}"))
        })?;
        Ok((id.clone(), d.top_terms(top_k)))
    };
    let old: Vec<(String, Vec<String>)> = old_ids.iter().map(top).collect::<Result<_>>()?;
    let new: Vec<(String, Vec<String>)> = new_ids.iter().map(top).collect::<Result<_>>()?;
    let lists: Vec<Vec<String>> = old.iter().chain(&new).map(|(_, t)| t.clone()).collect();
    let vocab = bos::build_vocabulary(word, &lists, min_df, max_df)?;
    Ok(WordVectors {
        word: word.to_owned(),
        old: bos::build_bos_vectors(&old, &vocab),
        new: bos::build_bos_vectors(&new, &vocab),
        terms: vocab.terms,
    })
}

pub fn format_graded(scores: &[detect::GradedScore]) -> String {
    scores
        .iter()
        .map(|s| format!("{}\t{:.6}\t{}\n", s.word, s.apd, s.rank))
        .collect()
}

pub fn format_binary(method: Method, verdicts: &[detect::BinaryVerdict]) -> String {
    let mut out = format!("# method={method}\n");
    for v in verdicts {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            v.word, v.change as u8, v.gain as u8, v.loss as u8
        ));
    }
    out
}

pub fn format_discriminative(report: &detect::DiscriminativeReport) -> String {
    report
        .rows
        .iter()
        .map(|r| {
            let ratio = r
                .ratio
                .map_or_else(|| "inf".to_owned(), |x| format!("{x:.6}"));
            format!(
                "{}\t{}\t{:.6}\t{:.6}\t{ratio}\n",
                report.word, r.stem, r.p_new, r.p_old
            )
        })
        .collect()
}

pub fn read_graded(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in jsonl::open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let apd = f
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(i + 1, "expected word<TAB>apd<TAB>rank"))?;
        out.insert(f[0].to_owned(), apd);
    }
    Ok(out)
}

pub fn read_binary(path: &Path) -> Result<BTreeMap<String, PredictedLabels>> {
    let mut out = BTreeMap::new();
    for (i, line) in jsonl::open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let flag = |k: usize| match f.get(k) {
            Some(&"1") => Ok(true),
            Some(&"0") => Ok(false),
            _ => Err(Error::parse(
                i + 1,
                "expected word<TAB>change<TAB>gain<TAB>loss",
            )),
        };
        out.insert(
            f[0].to_owned(),
            PredictedLabels {
                change: flag(1)?,
                gain: flag(2)?,
                loss: flag(3)?,
            },
        );
    }
    Ok(out)
}
