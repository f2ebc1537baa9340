//! Scenario files: the fleet, how its history is seeded, and the task batch.
//!
//! Scenarios are TOML. Times in `tasks` are offsets from `start`, which
//! defaults to one week so a full week of seeded history fits before it.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use taas_core::owner::TaskSpec;
use taas_core::registry::{Outcome, PerformanceRecord};
use taas_core::units::SECONDS_PER_WEEK;
use taas_core::DeviceProfile;

use crate::strategy::Strategy;
use crate::SimError;

/// Generator for one device's past records of one task type. Each record
/// draws its speed and accuracy uniformly from the given closed ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySpec {
    pub device_id: String,
    pub task_type: String,
    pub count: usize,
    pub speed_mb_s: [f64; 2],
    pub accuracy: [f64; 2],
    /// Records are spread evenly over this many seconds before `start`.
    #[serde(default = "week")]
    pub window_s: f64,
}

/// A task and when it reaches its owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskArrival {
    /// Seconds after the scenario start.
    pub arrival: f64,
    #[serde(default = "default_owner")]
    pub owner: String,
    #[serde(flatten)]
    pub spec: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    /// Virtual-time step between monitoring rounds.
    #[serde(default = "one")]
    pub tick_s: f64,
    #[serde(default = "week")]
    pub start: f64,
    #[serde(default)]
    pub strategy: Strategy,
    pub devices: Vec<DeviceProfile>,
    #[serde(default)]
    pub history: Vec<HistorySpec>,
    #[serde(default)]
    pub tasks: Vec<TaskArrival>,
}

fn week() -> f64 {
    SECONDS_PER_WEEK
}

fn one() -> f64 {
    1.0
}

fn default_owner() -> String {
    "owner".into()
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.tick_s > 0.0 && self.tick_s.is_finite()) {
            return bad("tick_s must be positive".into());
        }
        if !self.start.is_finite() {
            return bad("start must be finite".into());
        }
        let mut ids = BTreeSet::new();
        for d in &self.devices {
            if !ids.insert(d.device_id.as_str()) {
                return bad(format!("duplicate device id `{}`", d.device_id));
            }
            d.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        }
        for h in &self.history {
            if !ids.contains(h.device_id.as_str()) {
                return bad(format!("history for unknown device `{}`", h.device_id));
            }
            let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
            if !ordered(h.speed_mb_s) || h.speed_mb_s[0] < 0.0 {
                return bad(format!("bad speed range for `{}`", h.device_id));
            }
            if !ordered(h.accuracy) || h.accuracy[0] < 0.0 || h.accuracy[1] > 1.0 {
                return bad(format!("bad accuracy range for `{}`", h.device_id));
            }
            if !(h.window_s > 0.0) {
                return bad(format!("history window for `{}` must be positive", h.device_id));
            }
        }
        let mut task_ids = BTreeSet::new();
        let mut last = f64::NEG_INFINITY;
        for t in &self.tasks {
            if !(t.arrival >= 0.0 && t.arrival.is_finite()) {
                return bad(format!("task `{}` has a bad arrival time", t.spec.task_id));
            }
            if t.arrival < last {
                return bad(format!("arrival times must be non-decreasing (task `{}`)", t.spec.task_id));
            }
            last = t.arrival;
            if !task_ids.insert(t.spec.task_id.as_str()) {
                return bad(format!("duplicate task id `{}`", t.spec.task_id));
            }
            t.spec.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        }
        Ok(())
    }

    /// The seeded history, deterministic in `seed`.
    pub fn history_records(&self) -> Vec<PerformanceRecord> {
        let mut out = Vec::new();
        for h in &self.history {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(&format!("{}|{}", h.device_id, h.task_type)));
            for i in 0..h.count {
                out.push(PerformanceRecord {
                    timestamp: self.start - h.window_s * (i as f64 + 1.0) / (h.count as f64 + 1.0),
                    task_type: h.task_type.clone(),
                    device_id: h.device_id.clone(),
                    processing_speed: draw(&mut rng, h.speed_mb_s),
                    completion_accuracy: draw(&mut rng, h.accuracy),
                    outcome: Outcome::Completed,
                });
            }
        }
        out
    }
}

pub(crate) fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
