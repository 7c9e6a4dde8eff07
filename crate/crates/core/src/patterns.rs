//! Dynamic pattern templates and masked prompt rendering.
//!
//! A template holds one or two `{mask}` slots and at most one `{target}`
//! slot. Applying a pattern to a usage replaces the target token with the
//! rendered template, where `{target}` becomes the original surface form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::UsageExample;
use crate::error::{Error, Result};

pub const MASK_SLOT: &str = "{mask}";
pub const TARGET_SLOT: &str = "{target}";
pub const DEFAULT_MASK_TOKEN: &str = "<mask>";

/// Tolerance on the sum of combination weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Mask,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub pattern_id: String,
    pub template: String,
    pub weight: f64,
    pub n_masks: u8,
    segments: Vec<Segment>,
}

impl Pattern {
    /// Parses a template. The weight is stored as given; sets validate it.
    pub fn parse(pattern_id: impl Into<String>, template: &str, weight: f64) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidPattern {
            template: template.to_owned(),
            reason: reason.to_owned(),
        };
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = template;
        while !rest.is_empty() {
            let slot = [(MASK_SLOT, Segment::Mask), (TARGET_SLOT, Segment::Target)]
                .into_iter()
                .find(|(slot, _)| rest.starts_with(slot));
            match slot {
                Some((slot, segment)) => {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(segment);
                    rest = &rest[slot.len()..];
                }
                None => {
                    let ch = rest.chars().next().expect("nonempty");
                    literal.push(ch);
                    rest = &rest[ch.len_utf8()..];
                }
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        let masks = segments.iter().filter(|s| **s == Segment::Mask).count();
        let targets = segments.iter().filter(|s| **s == Segment::Target).count();
        match masks {
            0 => return Err(invalid("no {mask} slot")),
            1 | 2 => {}
            _ => return Err(invalid("more than 2 {mask} slots are unsupported")),
        }
        if targets > 1 {
            return Err(invalid("more than one {target} slot"));
        }
        Ok(Self {
            pattern_id: pattern_id.into(),
            template: template.to_owned(),
            weight,
            n_masks: masks as u8,
            segments,
        })
    }

    pub fn has_target(&self) -> bool {
        self.segments.contains(&Segment::Target)
    }

    /// Renders the template for one target surface form.
    pub fn render(&self, surface: &str, mask_token: &str) -> String {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Mask => out.push_str(mask_token),
                Segment::Target => out.push_str(surface),
            }
        }
        out
    }
}

/// Wire form of a prompt: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedPrompt {
    pub prompt_id: String,
    pub example_id: String,
    pub pattern_id: String,
    pub text: String,
    pub n_masks: u8,
}

pub fn prompt_id(example_id: &str, pattern_id: &str) -> String {
    format!("{example_id}#{pattern_id}")
}

/// Replaces the usage's target token with the rendered pattern.
pub fn apply_pattern(pattern: &Pattern, example: &UsageExample, mask_token: &str) -> MaskedPrompt {
    let rendered = pattern.render(example.surface(), mask_token);
    let tokens = example.sentence.tokens();
    let mut text = String::new();
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        text.push_str(if i == example.target_index {
            &rendered
        } else {
            token
        });
    }
    MaskedPrompt {
        prompt_id: prompt_id(&example.example_id, &pattern.pattern_id),
        example_id: example.example_id.clone(),
        pattern_id: pattern.pattern_id.clone(),
        text,
        n_masks: pattern.n_masks,
    }
}

/// A named group of patterns combined with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub name: String,
    pub patterns: Vec<Pattern>,
}

impl PatternSet {
    pub fn new(name: impl Into<String>, patterns: Vec<Pattern>) -> Result<Self> {
        let set = Self {
            name: name.into(),
            patterns,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(Error::Validation(format!(
                "pattern set {} is empty",
                self.name
            )));
        }
        let mut ids: Vec<&str> = self
            .patterns
            .iter()
            .map(|p| p.pattern_id.as_str())
            .collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!(
                "pattern set {}: duplicate pattern id {}",
                self.name, w[0]
            )));
        }
        for p in &self.patterns {
            if !(0.0..=1.0).contains(&p.weight) {
                return Err(Error::Validation(format!(
                    "pattern {}: weight {} outside [0, 1]",
                    p.pattern_id, p.weight
                )));
            }
        }
        let total = self.weight_sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "pattern set {}: weights sum to {total}, expected 1",
                self.name
            )));
        }
        Ok(())
    }

    pub fn weight_sum(&self) -> f64 {
        self.patterns.iter().map(|p| p.weight).sum()
    }

    pub fn get(&self, pattern_id: &str) -> Option<&Pattern> {
        self.patterns.iter().find(|p| p.pattern_id == pattern_id)
    }

    /// Looks up a shipped set by name.
    pub fn builtin(name: &str) -> Option<Self> {
        let rows: &[(&str, &str, f64)] = match name {
            "m1_7" => &[
                ("M", "{mask}", 0.25),
                ("M_y_T", "{mask} (y {target})", 0.25),
                ("T_y_M", "{target} (y {mask})", 0.25),
                ("M_incluso_T", "{mask} (incluso {target})", 0.0625),
                ("T_incluso_M", "{target} (incluso {mask})", 0.0625),
                ("M_porejemplo_T", "{mask} (por ejemplo {target})", 0.0625),
                ("T_porejemplo_M", "{target} (por ejemplo {mask})", 0.0625),
            ],
            "m1_7_nb" => &[
                ("M", "{mask}", 0.25),
                ("M_y_T_nb", "{mask} y {target}", 0.25),
                ("T_y_M_nb", "{target} y {mask}", 0.25),
                ("M_incluso_T_nb", "{mask} incluso {target}", 0.0625),
                ("T_incluso_M_nb", "{target} incluso {mask}", 0.0625),
                ("M_porejemplo_T_nb", "{mask} por ejemplo {target}", 0.0625),
                ("T_porejemplo_M_nb", "{target} por ejemplo {mask}", 0.0625),
            ],
            "m1_2" => &[
                ("M_y_T", "{mask} (y {target})", 0.5),
                ("T_y_M", "{target} (y {mask})", 0.5),
            ],
            "m1_2_nb" => &[
                ("M_y_T_nb", "{mask} y {target}", 0.5),
                ("T_y_M_nb", "{target} y {mask}", 0.5),
            ],
            "m2_2" => &[
                ("MM_y_T", "{mask}{mask} (y {target})", 0.5),
                ("T_y_MM", "{target} (y {mask}{mask})", 0.5),
            ],
            "m2_2_nb" => &[
                ("MM_y_T_nb", "{mask}{mask} y {target}", 0.5),
                ("T_y_MM_nb", "{target} y {mask}{mask}", 0.5),
            ],
            _ => return None,
        };
        let patterns = rows
            .iter()
            .map(|(id, template, w)| Pattern::parse(*id, template, *w).expect("builtin template"))
            .collect();
        Some(Self::new(name, patterns).expect("builtin set"))
    }

    pub const BUILTIN_NAMES: [&'static str; 6] =
        ["m1_7", "m1_7_nb", "m1_2", "m1_2_nb", "m2_2", "m2_2_nb"];
}

/// Connective word around the target in the ablation patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    Y,
    Incluso,
    PorEjemplo,
}

impl Connective {
    fn text(self) -> &'static str {
        match self {
            Connective::Y => "y",
            Connective::Incluso => "incluso",
            Connective::PorEjemplo => "por ejemplo",
        }
    }

    fn id(self) -> &'static str {
        match self {
            Connective::Y => "y",
            Connective::Incluso => "incluso",
            Connective::PorEjemplo => "porejemplo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPosition {
    Left,
    Right,
    Combination,
}

impl fmt::Display for MaskPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskPosition::Left => "left",
            MaskPosition::Right => "right",
            MaskPosition::Combination => "combination",
        })
    }
}

/// One-sided pattern `M (conn T)` or `T (conn M)` with optional brackets.
fn one_sided(connective: Connective, left: bool, brackets: bool, n_masks: u8) -> Pattern {
    let masks = MASK_SLOT.repeat(n_masks as usize);
    let m_id = "M".repeat(n_masks as usize);
    let conn = connective.text();
    let (first, second, id) = if left {
        (
            masks.as_str(),
            TARGET_SLOT,
            format!("{m_id}_{}_T", connective.id()),
        )
    } else {
        (
            TARGET_SLOT,
            masks.as_str(),
            format!("T_{}_{m_id}", connective.id()),
        )
    };
    let (template, id) = if brackets {
        (format!("{first} ({conn} {second})"), id)
    } else {
        (format!("{first} {conn} {second}"), format!("{id}_nb"))
    };
    Pattern::parse(id, &template, 1.0).expect("generated template")
}

/// Pattern set for one ablation cell. The combination cell weights the two
/// one-sided patterns equally.
pub fn ablation_set(
    connective: Connective,
    position: MaskPosition,
    brackets: bool,
    n_masks: u8,
) -> Result<PatternSet> {
    if !(1..=2).contains(&n_masks) {
        return Err(Error::Validation(format!(
            "n_masks must be 1 or 2, got {n_masks}"
        )));
    }
    let patterns = match position {
        MaskPosition::Left => vec![one_sided(connective, true, brackets, n_masks)],
        MaskPosition::Right => vec![one_sided(connective, false, brackets, n_masks)],
        MaskPosition::Combination => [true, false]
            .into_iter()
            .map(|left| {
                let mut p = one_sided(connective, left, brackets, n_masks);
                p.weight = 0.5;
                p
            })
            .collect(),
    };
    let name = format!(
        "{}_{position}_{}_m{n_masks}",
        connective.id(),
        if brackets { "brackets" } else { "plain" }
    );
    PatternSet::new(name, patterns)
}
