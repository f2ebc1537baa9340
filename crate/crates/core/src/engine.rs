//! Need-driven trust assessment.
//!
//! Historical and resource assessments only ever carry the dimensions that
//! the [`TaskRequirements`] ask for, and [`render_semantic`] only emits
//! clauses for those dimensions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taas_wire::Locator;

use crate::parser::ConfigError;
use crate::registry::PerformanceRecord;
use crate::requirements::{CpuClass, HistoryDimension, TaskRequirements};
use crate::units::{fmt_num, mb_to_gb};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    /// Minimum number of records in the window.
    pub n_min: usize,
    /// Minimum mean completion accuracy, as a fraction.
    pub theta_acc: f64,
    /// Minimum mean processing speed in MB/s.
    pub theta_speed: f64,
    /// CPUs below this are `low`.
    pub cpu_moderate_from_ghz: f64,
    /// CPUs at or above this are `high`.
    pub cpu_high_from_ghz: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            n_min: 3,
            theta_acc: 0.95,
            theta_speed: 5.0,
            cpu_moderate_from_ghz: 1.5,
            cpu_high_from_ghz: 4.0,
        }
    }
}

impl TrustConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrustConfig = toml::from_str(text)?;
        if !(cfg.cpu_moderate_from_ghz <= cfg.cpu_high_from_ghz) {
            return Err(ConfigError::Invalid("cpu class boundaries out of order".into()));
        }
        if !(0.0..=1.0).contains(&cfg.theta_acc) || !(cfg.theta_speed >= 0.0) {
            return Err(ConfigError::Invalid("thresholds out of range".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn cpu_class(&self, ghz: f64) -> CpuClass {
        if ghz >= self.cpu_high_from_ghz {
            CpuClass::High
        } else if ghz >= self.cpu_moderate_from_ghz {
            CpuClass::Moderate
        } else {
            CpuClass::Low
        }
    }
}

/// What a device reported about itself. Fields the query did not ask for
/// are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSnapshot {
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_storage_gb: Option<f64>,
    pub captured_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAssessment {
    pub device_id: String,
    pub task_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_processing_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_completion_accuracy: Option<f64>,
    pub trustworthy: bool,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceAssessment {
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_class: Option<CpuClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_storage_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_storage_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_sufficient: Option<bool>,
    pub trustworthy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub device_id: String,
    pub agent_address: Locator,
    pub historical: HistoricalAssessment,
    pub resource: ResourceAssessment,
    pub semantic_his: String,
    pub semantic_res: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub request_id: String,
    pub task_type: String,
    pub entries: Vec<TrustEntry>,
}

impl TrustReport {
    pub fn device_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.device_id.as_str()).collect()
    }

    pub fn entry(&self, device_id: &str) -> Option<&TrustEntry> {
        self.entries.iter().find(|e| e.device_id == device_id)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Means over the requested dimensions of records already filtered by type
/// and window, and the trust gate over them.
pub fn assess_history(
    device_id: &str,
    records: &[PerformanceRecord],
    req: &TaskRequirements,
    cfg: &TrustConfig,
) -> HistoricalAssessment {
    let speed = req
        .wants(HistoryDimension::ProcessingSpeed)
        .then(|| mean(records.iter().map(|r| r.processing_speed)))
        .flatten();
    let accuracy = req
        .wants(HistoryDimension::CompletionAccuracy)
        .then(|| mean(records.iter().map(|r| r.completion_accuracy)))
        .flatten();
    let trustworthy = records.len() >= cfg.n_min.max(1)
        && accuracy.is_none_or(|a| a >= cfg.theta_acc)
        && speed.is_none_or(|s| s >= cfg.theta_speed);
    HistoricalAssessment {
        device_id: device_id.to_string(),
        task_type: req.task_type.clone(),
        mean_processing_speed: speed,
        mean_completion_accuracy: accuracy,
        trustworthy,
        sample_count: records.len(),
    }
}

/// Checks a snapshot against the requested resource thresholds. A requested
/// quantity missing from the snapshot fails its threshold.
pub fn assess_resources(snap: &ResourceSnapshot, req: &TaskRequirements, cfg: &TrustConfig) -> ResourceAssessment {
    let mut out = ResourceAssessment {
        device_id: snap.device_id.clone(),
        cpu_ghz: None,
        cpu_class: None,
        available_storage_gb: None,
        required_storage_gb: None,
        storage_sufficient: None,
        trustworthy: true,
    };
    if let Some(min_mb) = req.storage_mb() {
        let required = mb_to_gb(min_mb);
        let available = snap.available_storage_gb;
        let ok = available.is_some_and(|a| a >= required);
        out.available_storage_gb = available;
        out.required_storage_gb = Some(required);
        out.storage_sufficient = Some(ok);
        out.trustworthy &= ok;
    }
    if let Some(min_class) = req.cpu_class() {
        let class = snap.cpu_ghz.map(|g| cfg.cpu_class(g));
        out.cpu_ghz = snap.cpu_ghz;
        out.cpu_class = class;
        out.trustworthy &= class.is_some_and(|c| c >= min_class);
    }
    out
}

fn storage_comparator(available: f64, required: f64) -> &'static str {
    match available.partial_cmp(&required) {
        Some(std::cmp::Ordering::Greater) => ">",
        Some(std::cmp::Ordering::Equal) => "=",
        _ => "<",
    }
}

/// Fixed-template rendering of both assessments. Dimensions not requested
/// contribute no clause, so an empty requirement renders as "".
pub fn render_semantic(h: &HistoricalAssessment, r: &ResourceAssessment, req: &TaskRequirements) -> (String, String) {
    let mut his = Vec::new();
    if req.wants(HistoryDimension::ProcessingSpeed) {
        match h.mean_processing_speed {
            Some(v) => his.push(format!("task processing speed is {} MB/second", fmt_num(v))),
            None => his.push("task processing speed is unknown".to_string()),
        }
    }
    if req.wants(HistoryDimension::CompletionAccuracy) {
        match h.mean_completion_accuracy {
            Some(p) => his.push(format!("task completion accuracy is {}%", fmt_num(p * 100.0))),
            None => his.push("task completion accuracy is unknown".to_string()),
        }
    }

    let mut res = Vec::new();
    if req.cpu_class().is_some() {
        match (r.cpu_ghz, r.cpu_class) {
            (Some(g), Some(class)) => res.push(format!("CPU is {} GHz ({class} processing speed)", fmt_num(g))),
            _ => res.push("CPU is unknown".to_string()),
        }
    }
    if let Some(min_mb) = req.storage_mb() {
        let required = mb_to_gb(min_mb);
        match r.available_storage_gb {
            Some(s) => res.push(format!(
                "the available storage is {} GB ({} {} GB required)",
                fmt_num(s),
                storage_comparator(s, required),
                fmt_num(required)
            )),
            None => res.push(format!("the available storage is unknown ({} GB required)", fmt_num(required))),
        }
    }
    (his.join(", "), res.join(", and "))
}
