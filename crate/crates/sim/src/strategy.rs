//! Collaborator selection strategies. Only this step differs between
//! strategies; splitting, execution and monitoring are shared.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use taas_core::registry::{DeviceRecord, PerformanceRecord};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Need-driven trust evaluation through the trust service.
    #[default]
    Taas,
    /// Uniform choice among every device supporting the task type.
    Random,
    /// Top devices by global mean accuracy, ignoring task type and resources.
    #[serde(alias = "reputation")]
    ReputationBaseline,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Taas, Strategy::Random, Strategy::ReputationBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Taas => "taas",
            Strategy::Random => "random",
            Strategy::ReputationBaseline => "reputation_baseline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "taas" => Ok(Strategy::Taas),
            "random" => Ok(Strategy::Random),
            "reputation" | "reputation_baseline" => Ok(Strategy::ReputationBaseline),
            other => Err(BaselineError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("cannot pick {k} devices from {available} candidates")]
    TooFewCandidates { k: usize, available: usize },
    #[error("unknown strategy `{0}` (expected taas, random or reputation_baseline)")]
    UnknownStrategy(String),
}

fn check(k: usize, available: usize) -> Result<(), BaselineError> {
    if k > available {
        Err(BaselineError::TooFewCandidates { k, available })
    } else {
        Ok(())
    }
}

/// Seeded uniform choice of `k` candidates, returned in id order.
pub fn baseline_random(candidates: &[DeviceRecord], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DeviceRecord>, BaselineError> {
    check(k, candidates.len())?;
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    let mut picked: Vec<DeviceRecord> = sorted.choose_multiple(rng, k).cloned().collect();
    picked.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    Ok(picked)
}

/// Mean accuracy over every record of the device, whatever its task type.
/// Devices without records score zero.
pub fn global_reputation(device_id: &str, history: &[PerformanceRecord]) -> f64 {
    let acc: Vec<f64> = history
        .iter()
        .filter(|r| r.device_id == device_id)
        .map(|r| r.completion_accuracy)
        .collect();
    if acc.is_empty() {
        0.0
    } else {
        acc.iter().sum::<f64>() / acc.len() as f64
    }
}

/// The `k` candidates with the highest global reputation, ties broken by id.
pub fn baseline_reputation(
    candidates: &[DeviceRecord],
    k: usize,
    history: &[PerformanceRecord],
) -> Result<Vec<DeviceRecord>, BaselineError> {
    check(k, candidates.len())?;
    let mut scored: Vec<(f64, &DeviceRecord)> = candidates
        .iter()
        .map(|d| (global_reputation(&d.device_id, history), d))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.device_id.cmp(&b.1.device_id)));
    Ok(scored.into_iter().take(k).map(|(_, d)| d.clone()).collect())
}
