//! The computable form of a task description.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::units::{fmt_num, mb_to_gb};

/// Historical performance dimensions the service can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryDimension {
    ProcessingSpeed,
    CompletionAccuracy,
}

impl HistoryDimension {
    pub const ALL: [HistoryDimension; 2] = [HistoryDimension::ProcessingSpeed, HistoryDimension::CompletionAccuracy];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpuClass {
    Low,
    Moderate,
    High,
}

impl fmt::Display for CpuClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CpuClass::Low => "low",
            CpuClass::Moderate => "moderate",
            CpuClass::High => "high",
        })
    }
}

impl FromStr for CpuClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(CpuClass::Low),
            "moderate" => Ok(CpuClass::Moderate),
            "high" => Ok(CpuClass::High),
            other => Err(format!("unknown CPU class `{other}`")),
        }
    }
}

/// Resource kinds that can be requested from devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Storage,
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResourceRequirement {
    /// Available storage at least `min_mb`.
    Storage { min_mb: f64 },
    /// CPU at least the given class.
    Cpu { min_class: CpuClass },
}

impl ResourceRequirement {
    pub fn kind(&self) -> ResourceKind {
        match self {
            ResourceRequirement::Storage { .. } => ResourceKind::Storage,
            ResourceRequirement::Cpu { .. } => ResourceKind::Cpu,
        }
    }
}

impl fmt::Display for ResourceRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceRequirement::Storage { min_mb } => {
                write!(f, "storage >= {} GB ({} MB)", fmt_num(mb_to_gb(*min_mb)), fmt_num(*min_mb))
            }
            ResourceRequirement::Cpu { min_class } => write!(f, "cpu class >= {min_class}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequirements {
    pub task_type: String,
    /// Seconds of history, ending at evaluation time.
    pub history_window: f64,
    pub history_dimensions: BTreeSet<HistoryDimension>,
    /// At most one entry per [`ResourceKind`], ordered storage first.
    pub resources: Vec<ResourceRequirement>,
}

impl TaskRequirements {
    pub fn wants(&self, dim: HistoryDimension) -> bool {
        self.history_dimensions.contains(&dim)
    }

    pub fn storage_mb(&self) -> Option<f64> {
        self.resources.iter().find_map(|r| match r {
            ResourceRequirement::Storage { min_mb } => Some(*min_mb),
            _ => None,
        })
    }

    pub fn cpu_class(&self) -> Option<CpuClass> {
        self.resources.iter().find_map(|r| match r {
            ResourceRequirement::Cpu { min_class } => Some(*min_class),
            _ => None,
        })
    }

    pub fn resource_kinds(&self) -> BTreeSet<ResourceKind> {
        self.resources.iter().map(ResourceRequirement::kind).collect()
    }

    pub fn has_any_dimension(&self) -> bool {
        !self.history_dimensions.is_empty() || !self.resources.is_empty()
    }
}
