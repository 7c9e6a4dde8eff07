//! Pattern ablation: graded-change quality for each pattern-set variant.
//!
//! Each cell of connective × mask position × brackets × mask count builds its
//! own pattern set over the sampled usages, fetches substitutes, and scores
//! the resulting APD ranking against the graded gold standards. A cell
//! whose substitutes cannot be obtained is reported as unavailable.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::detect;
use crate::error::{Error, Result};
use crate::eval::{self, GoldGraded};
use crate::jsonl;
use crate::patterns::{self, Connective, MaskPosition, MaskedPrompt};
use crate::pipeline::{self, SAMPLE};
use crate::postproc::{CombinedRecord, NormalizedDistribution, Stemmer};
use crate::provider::{SubstituteProvider, SubstituteStore};

pub const ABLATION: &str = "ablation.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub connective: Connective,
    pub position: MaskPosition,
    pub brackets: bool,
    pub n_masks: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub set_name: String,
    pub cell: Cell,
    pub top_k: usize,
    pub jsd_spr: Option<f64>,
    pub compare_spr: Option<f64>,
    pub status: CellStatus,
}

impl AblationRow {
    /// Sort key: JSD correlation when available, else COMPARE.
    pub fn metric(&self) -> Option<f64> {
        self.jsd_spr.or(self.compare_spr)
    }
}

pub fn cells(config: &RunConfig) -> Vec<Cell> {
    let a = &config.ablation;
    let mut out = Vec::new();
    for &connective in &a.connectives {
        for &position in &a.positions {
            for &brackets in &a.brackets {
                for &n_masks in &a.n_masks {
                    out.push(Cell {
                        connective,
                        position,
                        brackets,
                        n_masks,
                    });
                }
            }
        }
    }
    out
}

struct Gold {
    jsd: Option<GoldGraded>,
    compare: Option<GoldGraded>,
}

/// Runs every cell and writes `ablation.tsv`, best cell first.
pub fn run(config: &RunConfig) -> Result<Vec<AblationRow>> {
    let sample_path = config.output_dir.join(SAMPLE);
    if !sample_path.exists() {
        return Err(Error::MissingInput {
            stage: "ablate",
            requires: "sample",
            path: sample_path,
        });
    }
    let read_gold = |p: &Option<PathBuf>| -> Result<Option<GoldGraded>> {
        p.as_ref()
            .map(|p| eval::read_gold_graded(jsonl::open(p)?))
            .transpose()
    };
    let gold = Gold {
        jsd: read_gold(&config.gold.graded_jsd)?,
        compare: read_gold(&config.gold.graded_compare)?,
    };
    if gold.jsd.is_none() && gold.compare.is_none() {
        return Err(Error::Validation(
            "ablation needs a graded gold file".into(),
        ));
    }
    let examples = pipeline::read_sample(&sample_path)?;
    let groups = pipeline::group_sample(&examples);
    let stemmer = config.stemmer()?;
    let base = match &config.ablation.substitutes_dir {
        Some(_) => None,
        None => Some(pipeline::build_provider(config)?),
    };
    let max_k = config
        .ablation
        .top_k
        .iter()
        .copied()
        .max()
        .unwrap_or(config.top_k);

    let mut rows = Vec::new();
    for cell in cells(config) {
        let set =
            patterns::ablation_set(cell.connective, cell.position, cell.brackets, cell.n_masks)?;
        let prompts: Vec<MaskedPrompt> = examples
            .iter()
            .flat_map(|ex| {
                set.patterns
                    .iter()
                    .map(|p| patterns::apply_pattern(p, ex, &config.mask_token))
            })
            .collect();
        let store = match cell_substitutes(config, base.as_deref(), &set, &prompts, max_k) {
            Ok(store) => store,
            Err(reason) => {
                log::warn!("ablation cell {} unavailable: {reason}", set.name);
                for &top_k in &config.ablation.top_k {
                    rows.push(AblationRow {
                        set_name: set.name.clone(),
                        cell,
                        top_k,
                        jsd_spr: None,
                        compare_spr: None,
                        status: CellStatus::Unavailable(reason.clone()),
                    });
                }
                continue;
            }
        };
        for &top_k in &config.ablation.top_k {
            let truncated = truncate_store(&store, top_k);
            let scores = score_cell(
                config,
                &prompts,
                &truncated,
                &set,
                stemmer.as_ref(),
                &groups,
                top_k,
            )?;
            let spr = |g: &Option<GoldGraded>| -> Result<Option<f64>> {
                g.as_ref()
                    .map(|g| eval::spearman(&scores, g).map(|r| r.rho))
                    .transpose()
            };
            rows.push(AblationRow {
                set_name: set.name.clone(),
                cell,
                top_k,
                jsd_spr: spr(&gold.jsd)?,
                compare_spr: spr(&gold.compare)?,
                status: CellStatus::Ok,
            });
        }
    }
    rows.sort_by(|a, b| match (a.metric(), b.metric()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let path = config.output_dir.join(ABLATION);
    std::fs::write(&path, format_rows(&rows)).map_err(|e| Error::file(&path, e))?;
    Ok(rows)
}

/// Substitutes for all prompts of a cell, or the reason they are missing.
fn cell_substitutes(
    config: &RunConfig,
    base: Option<&dyn SubstituteProvider>,
    set: &patterns::PatternSet,
    prompts: &[MaskedPrompt],
    top_k: usize,
) -> std::result::Result<SubstituteStore, String> {
    let mut store = SubstituteStore::default();
    match (&config.ablation.substitutes_dir, base) {
        (Some(dir), _) => {
            for p in &set.patterns {
                let path = dir.join(format!("{}.jsonl", p.pattern_id));
                if !path.exists() {
                    return Err(format!("no substitute file {}", path.display()));
                }
                let (file, _) = SubstituteStore::load(&path).map_err(|e| e.to_string())?;
                for prompt in prompts.iter().filter(|q| q.pattern_id == p.pattern_id) {
                    match file.get(&prompt.prompt_id) {
                        Some(d) => {
                            store.insert(d.clone());
                        }
                        None => {
                            return Err(format!(
                                "{} lacks prompt {}",
                                path.display(),
                                prompt.prompt_id
                            ));
                        }
                    }
                }
            }
        }
        (None, Some(provider)) => {
            let batch = match &config.provider {
                crate::config::ProviderConfig::Http { batch_size, .. } => *batch_size,
                _ => 4096,
            };
            let dists =
                pipeline::fetch_all(provider, prompts, batch, top_k).map_err(|e| e.to_string())?;
            for d in dists {
                store.insert(d);
            }
        }
        (None, None) => unreachable!("a provider is built when no substitutes directory is set"),
    }
    Ok(store)
}

fn truncate_store(store: &SubstituteStore, top_k: usize) -> SubstituteStore {
    let mut out = SubstituteStore::default();
    for d in store.iter() {
        let mut d = d.clone();
        d.truncate(top_k);
        out.insert(d);
    }
    out
}

fn score_cell(
    config: &RunConfig,
    prompts: &[MaskedPrompt],
    store: &SubstituteStore,
    set: &patterns::PatternSet,
    stemmer: &dyn Stemmer,
    groups: &[pipeline::SampleGroup],
    top_k: usize,
) -> Result<BTreeMap<String, f64>> {
    let combined: HashMap<String, NormalizedDistribution> =
        pipeline::combine_prompts(prompts, store, set, stemmer)?
            .into_iter()
            .map(|c| {
                let d = NormalizedDistribution::from(CombinedRecord::from(&c.distribution));
                (d.example_id.clone(), d)
            })
            .collect();
    let v = &config.vectors;
    let scored: Vec<Option<(String, f64)>> = groups
        .par_iter()
        .map(|(word, (old, new))| {
            match pipeline::word_vectors(word, old, new, &combined, top_k, v.min_df, v.max_df) {
                Ok(wv) => Ok(Some((word.clone(), detect::apd(&wv.matrix())?))),
                Err(Error::Unrepresentable(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().flatten().collect())
}

pub fn format_rows(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "set\tconnective\tposition\tbrackets\tn_masks\ttop_k\tjsd_spr\tcompare_spr\tstatus\n",
    );
    let num = |x: Option<f64>| x.map_or_else(|| "NA".to_owned(), |x| format!("{x:.4}"));
    for r in rows {
        let status = match &r.status {
            CellStatus::Ok => "ok".to_owned(),
            CellStatus::Unavailable(reason) => format!("unavailable: {reason}"),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{status}",
            r.set_name,
            serde_json::to_value(r.cell.connective)
                .expect("enum serializes")
                .as_str()
                .unwrap_or(""),
            r.cell.position,
            r.cell.brackets,
            r.cell.n_masks,
            r.top_k,
            num(r.jsd_spr),
            num(r.compare_spr),
        );
    }
    out
}
