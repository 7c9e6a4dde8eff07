//! Run configuration, read from a single TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every default matches the published method: top-k 150, 100
//! usages per period, change threshold 0.8, AID margins ±0.03 and the 5th
//! percentile.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bos::{DEFAULT_MAX_DF, DEFAULT_MIN_DF};
use crate::corpus::DEFAULT_SAMPLE_CAP;
use crate::detect::{DEFAULT_MIN_P_NEW, DetectionParams, Method};
use crate::error::{Error, Result};
use crate::patterns::{Connective, DEFAULT_MASK_TOKEN, MaskPosition, Pattern, PatternSet};
use crate::postproc::{IdentityStemmer, SnowballStemmer, Stemmer};
use crate::provider::DEFAULT_TOP_K;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_cap")]
    pub sample_cap: usize,
    /// Worker threads for per-word stages; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_mask_token")]
    pub mask_token: String,
    /// `identity` or a Snowball language name.
    #[serde(default = "default_stemmer")]
    pub stemmer: String,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub patterns: PatternsConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub vectors: VectorsConfig,
    #[serde(default)]
    pub detection: DetectionParams,
    #[serde(default)]
    pub binary: BinaryConfig,
    #[serde(default)]
    pub discrim: DiscrimConfig,
    #[serde(default)]
    pub gold: GoldConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_cap() -> usize {
    DEFAULT_SAMPLE_CAP
}
fn default_mask_token() -> String {
    DEFAULT_MASK_TOKEN.to_owned()
}
fn default_stemmer() -> String {
    "spanish".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub old: PathBuf,
    pub new: PathBuf,
    /// One target lemma per line.
    pub targets: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternDef {
    pub id: String,
    pub template: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternsConfig {
    /// A shipped set name, or the name given to `pattern` definitions.
    pub set: String,
    pub pattern: Vec<PatternDef>,
}

impl Default for PatternsConfig {
    fn default() -> Self {
        Self {
            set: "m1_7".to_owned(),
            pattern: Vec::new(),
        }
    }
}

impl PatternsConfig {
    pub fn resolve(&self) -> Result<PatternSet> {
        if self.pattern.is_empty() {
            return PatternSet::builtin(&self.set)
                .ok_or_else(|| Error::Validation(format!("unknown pattern set {:?}", self.set)));
        }
        let patterns = self
            .pattern
            .iter()
            .map(|p| Pattern::parse(&p.id, &p.template, p.weight))
            .collect::<Result<Vec<_>>>()?;
        PatternSet::new(&self.set, patterns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderConfig {
    File {
        path: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_attempts")]
        attempts: u32,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
    Synthetic {
        /// Sense assignment records, one per usage.
        senses: PathBuf,
    },
}

fn default_attempts() -> u32 {
    3
}
fn default_timeout() -> u64 {
    120
}
fn default_batch() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorsConfig {
    pub min_df: f64,
    pub max_df: f64,
    pub dump_matrices: bool,
}

impl Default for VectorsConfig {
    fn default() -> Self {
        Self {
            min_df: DEFAULT_MIN_DF,
            max_df: DEFAULT_MAX_DF,
            dump_matrices: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinaryConfig {
    pub methods: Vec<Method>,
    /// Method whose verdicts the eval stage scores.
    pub eval_method: Method,
}

impl Default for BinaryConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            eval_method: Method::Percentile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrimConfig {
    /// Pattern whose substitutes describe senses. When unset, `M_y_T` is
    /// used if the set has it and the combined distribution otherwise.
    pub pattern: Option<String>,
    pub min_p_new: f64,
}

impl Default for DiscrimConfig {
    fn default() -> Self {
        Self {
            pattern: None,
            min_p_new: DEFAULT_MIN_P_NEW,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoldConfig {
    pub graded_jsd: Option<PathBuf>,
    pub graded_compare: Option<PathBuf>,
    pub binary: Option<PathBuf>,
}

impl GoldConfig {
    pub fn is_empty(&self) -> bool {
        self.graded_jsd.is_none() && self.graded_compare.is_none() && self.binary.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub connectives: Vec<Connective>,
    pub positions: Vec<MaskPosition>,
    pub brackets: Vec<bool>,
    pub n_masks: Vec<u8>,
    pub top_k: Vec<usize>,
    /// Directory of `<pattern_id>.jsonl` substitute files. When unset the
    /// run's provider is used.
    pub substitutes_dir: Option<PathBuf>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            connectives: vec![Connective::Y],
            positions: vec![
                MaskPosition::Left,
                MaskPosition::Right,
                MaskPosition::Combination,
            ],
            brackets: vec![true],
            n_masks: vec![1],
            top_k: vec![DEFAULT_TOP_K],
            substitutes_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Parses, resolves paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.old);
        fix(&mut self.corpus.new);
        fix(&mut self.corpus.targets);
        match &mut self.provider {
            ProviderConfig::File { path } => fix(path),
            ProviderConfig::Synthetic { senses } => fix(senses),
            ProviderConfig::Http { .. } => {}
        }
        for p in [
            &mut self.gold.graded_jsd,
            &mut self.gold.graded_compare,
            &mut self.gold.binary,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(dir) = &mut self.ablation.substitutes_dir {
            fix(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let set = self.patterns.resolve()?;
        if self.top_k == 0 {
            return Err(Error::Validation("top_k must be positive".into()));
        }
        if self.sample_cap == 0 {
            return Err(Error::Validation("sample_cap must be positive".into()));
        }
        if !self.mask_token.is_empty() && self.mask_token.contains("{mask}") {
            return Err(Error::Validation(
                "mask_token may not contain {mask}".into(),
            ));
        }
        self.stemmer()?;
        let v = &self.vectors;
        if !(0.0 <= v.min_df && v.min_df < v.max_df && v.max_df <= 1.0) {
            return Err(Error::Validation(format!(
                "need 0 <= min_df < max_df <= 1, got {} and {}",
                v.min_df, v.max_df
            )));
        }
        self.detection.validate()?;
        if !self.binary.methods.contains(&self.binary.eval_method) {
            return Err(Error::Validation(format!(
                "eval_method {} is not among binary.methods",
                self.binary.eval_method
            )));
        }
        if let Some(p) = &self.discrim.pattern
            && set.get(p).is_none()
        {
            return Err(Error::Validation(format!(
                "discrim pattern {p} is not in pattern set {}",
                set.name
            )));
        }
        let mut required: Vec<&Path> =
            vec![&self.corpus.old, &self.corpus.new, &self.corpus.targets];
        match &self.provider {
            ProviderConfig::File { path } => required.push(path),
            ProviderConfig::Synthetic { senses } => required.push(senses),
            ProviderConfig::Http {
                endpoint,
                batch_size,
                ..
            } => {
                if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
                    return Err(Error::Validation(format!(
                        "endpoint {endpoint:?} is not an http URL"
                    )));
                }
                if *batch_size == 0 {
                    return Err(Error::Validation("batch_size must be positive".into()));
                }
            }
        }
        required.extend(
            [
                &self.gold.graded_jsd,
                &self.gold.graded_compare,
                &self.gold.binary,
            ]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path),
        );
        for path in required {
            if !path.is_file() {
                return Err(Error::Validation(format!(
                    "{} does not exist",
                    path.display()
                )));
            }
        }
        let a = &self.ablation;
        if a.connectives.is_empty()
            || a.positions.is_empty()
            || a.brackets.is_empty()
            || a.n_masks.is_empty()
            || a.top_k.is_empty()
        {
            return Err(Error::Validation("ablation axes must be nonempty".into()));
        }
        if a.n_masks.iter().any(|n| !(1..=2).contains(n)) || a.top_k.contains(&0) {
            return Err(Error::Validation(
                "ablation n_masks must be 1 or 2 and top_k positive".into(),
            ));
        }
        Ok(())
    }

    pub fn pattern_set(&self) -> Result<PatternSet> {
        self.patterns.resolve()
    }

    pub fn stemmer(&self) -> Result<Box<dyn Stemmer>> {
        match self.stemmer.as_str() {
            "identity" => Ok(Box::new(IdentityStemmer)),
            lang => Ok(Box::new(SnowballStemmer::new(lang)?)),
        }
    }
}
