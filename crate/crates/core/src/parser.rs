//! Rule-based interpretation of a task description into [`TaskRequirements`].
//!
//! The rules are driven by a [`KeywordConfig`] (see `config/keywords.toml`):
//!
//! * task type: the longest known task-type phrase in the text, matched
//!   case-insensitively on word boundaries; equal lengths resolve to the
//!   lexicographically smaller phrase;
//! * `<number> <unit>` with a configured storage unit: storage requirement;
//! * history keywords: a historical dimension, optionally with an implied
//!   CPU class;
//! * `past [<n>] <unit>`: the history window, otherwise the default.
//!
//! Every emitted requirement has a witness substring in the text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::requirements::{CpuClass, HistoryDimension, ResourceRequirement, TaskRequirements};

pub const DEFAULT_KEYWORDS: &str = include_str!("../config/keywords.toml");

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("task description is empty")]
    EmptyText,
    #[error("no known task type found in description")]
    UnknownTaskType,
    #[error("description for `{0}` states no requirement at all")]
    NoDimensions(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("keyword config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("keyword config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub text: String,
    pub owner_id: String,
    /// Size of the task data in MB, when the owner states it separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_size_mb: Option<f64>,
}

impl TaskDescription {
    pub fn new(text: impl Into<String>, owner_id: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            owner_id: owner_id.into(),
            data_size_mb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryKeywords {
    pub dimension: HistoryDimension,
    pub keywords: Vec<String>,
    #[serde(default)]
    pub implies_cpu: Option<CpuClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordConfig {
    pub default_window_s: f64,
    #[serde(default)]
    pub task_types: Vec<String>,
    pub history: Vec<HistoryKeywords>,
    /// Unit name to MB.
    pub storage_units: BTreeMap<String, f64>,
    /// Unit name (singular) to seconds.
    pub window_units: BTreeMap<String, f64>,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_KEYWORDS).expect("bundled keyword config is valid")
    }
}

impl KeywordConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: KeywordConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.default_window_s > 0.0) {
            return bad("default_window_s must be positive".into());
        }
        if self.storage_units.is_empty() || self.window_units.is_empty() {
            return bad("storage_units and window_units must be non-empty".into());
        }
        for (unit, v) in self.storage_units.iter().chain(&self.window_units) {
            if !(*v > 0.0) || unit.is_empty() {
                return bad(format!("unit `{unit}` must have a positive value"));
            }
        }
        for h in &self.history {
            if h.keywords.iter().any(|k| k.trim().is_empty()) || h.keywords.is_empty() {
                return bad(format!("{:?} needs non-empty keywords", h.dimension));
            }
        }
        Ok(())
    }
}

/// What the text itself supports, independent of any interpreter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Witnesses {
    /// Every known task type found in the text.
    pub task_types: BTreeSet<String>,
    pub size_mb: Option<f64>,
    pub dimensions: BTreeSet<HistoryDimension>,
    pub implied_cpu: Option<CpuClass>,
    pub window: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RequirementParser {
    config: KeywordConfig,
    size: Regex,
    window: Regex,
    history: Vec<(Regex, HistoryKeywords)>,
}

fn words_pattern<'a>(words: impl IntoIterator<Item = &'a String>) -> String {
    words.into_iter().map(|w| regex::escape(w.trim())).collect::<Vec<_>>().join("|")
}

/// Whole-word occurrence of `phrase` in `text`, both already lowercased.
fn contains_phrase(text: &str, phrase: &str) -> bool {
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    text.match_indices(phrase).any(|(at, m)| {
        !is_word(text[..at].chars().next_back()) && !is_word(text[at + m.len()..].chars().next())
    })
}

fn ci(pattern: &str) -> Regex {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .expect("generated patterns are valid")
}

impl Default for RequirementParser {
    fn default() -> Self {
        Self::new(KeywordConfig::default())
    }
}

impl RequirementParser {
    pub fn new(config: KeywordConfig) -> Self {
        let num = r"(\d+(?:\.\d+)?)";
        let size = ci(&format!(r"\b{num}\s*({})\b", words_pattern(config.storage_units.keys())));
        let window = ci(&format!(
            r"\bpast\s+(?:{num}\s+)?({})s?\b",
            words_pattern(config.window_units.keys())
        ));
        let history = config
            .history
            .iter()
            .map(|h| (ci(&format!(r"\b(?:{})\b", words_pattern(&h.keywords))), h.clone()))
            .collect();
        Self {
            config,
            size,
            window,
            history,
        }
    }

    pub fn config(&self) -> &KeywordConfig {
        &self.config
    }

    /// Configured vocabulary merged with `known_types`.
    pub fn vocabulary(&self, known_types: &BTreeSet<String>) -> BTreeSet<String> {
        let mut v = known_types.clone();
        v.extend(self.config.task_types.iter().cloned());
        v.retain(|t| !t.trim().is_empty());
        v
    }

    fn unit_value(map: &BTreeMap<String, f64>, unit: &str) -> f64 {
        map.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(unit))
            .map(|(_, v)| *v)
            .expect("regex only matches configured units")
    }

    pub fn witnesses(&self, text: &str, known_types: &BTreeSet<String>) -> Witnesses {
        let mut w = Witnesses::default();
        let lower = text.to_lowercase();
        for ty in self.vocabulary(known_types) {
            if contains_phrase(&lower, &ty.trim().to_lowercase()) {
                w.task_types.insert(ty);
            }
        }
        if let Some(c) = self.size.captures(text) {
            let n: f64 = c[1].parse().expect("numeric capture");
            w.size_mb = Some(n * Self::unit_value(&self.config.storage_units, &c[2]));
        }
        for (re, h) in &self.history {
            if re.is_match(text) {
                w.dimensions.insert(h.dimension);
                if let Some(class) = h.implies_cpu {
                    w.implied_cpu = w.implied_cpu.max(Some(class));
                }
            }
        }
        if let Some(c) = self.window.captures(text) {
            let n: f64 = c.get(1).map_or(1.0, |m| m.as_str().parse().expect("numeric capture"));
            let secs = n * Self::unit_value(&self.config.window_units, &c[2]);
            if secs > 0.0 {
                w.window = Some(secs);
            }
        }
        w
    }

    /// Deterministic interpretation of `desc`.
    pub fn parse(&self, desc: &TaskDescription, known_types: &BTreeSet<String>) -> Result<TaskRequirements, ParseError> {
        if desc.text.trim().is_empty() {
            return Err(ParseError::EmptyText);
        }
        let w = self.witnesses(&desc.text, known_types);
        let task_type = w
            .task_types
            .iter()
            .max_by(|a, b| a.chars().count().cmp(&b.chars().count()).then_with(|| b.cmp(a)))
            .cloned()
            .ok_or(ParseError::UnknownTaskType)?;
        let mut resources = Vec::new();
        if let Some(min_mb) = w.size_mb {
            resources.push(ResourceRequirement::Storage { min_mb });
        }
        if let Some(min_class) = w.implied_cpu {
            resources.push(ResourceRequirement::Cpu { min_class });
        }
        let req = TaskRequirements {
            task_type,
            history_window: w.window.unwrap_or(self.config.default_window_s),
            history_dimensions: w.dimensions,
            resources,
        };
        if !req.has_any_dimension() {
            return Err(ParseError::NoDimensions(req.task_type));
        }
        Ok(req)
    }

    /// Checks requirements produced elsewhere against the description: the
    /// task type must be known and present, and every requirement must have
    /// a witness in the text.
    pub fn validate(
        &self,
        req: &TaskRequirements,
        text: &str,
        known_types: &BTreeSet<String>,
    ) -> Result<(), String> {
        let w = self.witnesses(text, known_types);
        if !w.task_types.contains(&req.task_type) {
            return Err(format!("task type `{}` is not a known type named in the text", req.task_type));
        }
        if !(req.history_window > 0.0) {
            return Err("history window must be positive".into());
        }
        if req.history_window != w.window.unwrap_or(self.config.default_window_s) {
            return Err(format!("history window {} s has no witness", req.history_window));
        }
        if let Some(d) = req.history_dimensions.difference(&w.dimensions).next() {
            return Err(format!("dimension {d:?} has no witness"));
        }
        let mut kinds = BTreeSet::new();
        for r in &req.resources {
            if !kinds.insert(r.kind()) {
                return Err(format!("duplicate {:?} requirement", r.kind()));
            }
            match *r {
                ResourceRequirement::Storage { min_mb } if w.size_mb != Some(min_mb) => {
                    return Err(format!("storage requirement {min_mb} MB has no witness"));
                }
                ResourceRequirement::Cpu { min_class } if w.implied_cpu.is_none_or(|c| min_class > c) => {
                    return Err(format!("cpu class {min_class} has no witness"));
                }
                _ => {}
            }
        }
        if !req.has_any_dimension() {
            return Err("no requirement at all".into());
        }
        Ok(())
    }
}
