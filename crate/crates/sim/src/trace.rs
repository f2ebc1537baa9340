//! The raw event trace of a run and an independent reducer over it.
//!
//! Wire calls come from the network tap, not from the runner's own
//! bookkeeping, so the reducer cross-checks how the runner counted involved
//! devices and executors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use taas_core::device::{RECEIVE_TASK, REPORT_RESOURCE};
use taas_core::service::{MonitorEvent, Verdict};
use taas_wire::{CapturedFrame, Direction, Locator};

use crate::metrics::TaskOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    TaskArrived {
        at: f64,
        task_id: String,
        owner: String,
    },
    Selected {
        at: f64,
        task_id: String,
        strategy: String,
        pool: Vec<String>,
        /// Devices asked for resources during evaluation.
        queried: Vec<String>,
    },
    /// A tool call sent to a device.
    Call {
        at: f64,
        task_id: String,
        device_id: String,
        tool: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<String>,
    },
    Dispatched {
        at: f64,
        task_id: String,
        device_id: String,
        subtask_id: String,
        data_size_mb: f64,
    },
    Monitor(MonitorEvent),
    Failed {
        at: f64,
        task_id: String,
        reason: String,
    },
    TaskEnded {
        at: f64,
        outcome: TaskOutcome,
    },
}

/// Turns captured client-to-device frames into `Call` events. Calls that
/// name no task are attributed to `current`. Devices are named by their
/// in-memory locator; calls to `exclude` (the trust service) are dropped.
pub fn calls_from_frames(frames: &[CapturedFrame], at: f64, current: Option<&str>, exclude: &Locator) -> Vec<TraceEvent> {
    let mut out: Vec<TraceEvent> = frames
        .iter()
        .filter(|f| f.direction == Direction::ToServer && &f.peer != exclude)
        .filter_map(|f| {
            let v: Value = serde_json::from_str(&f.text).ok()?;
            if v.get("method")?.as_str()? != "tools/call" {
                return None;
            }
            let params = v.get("params")?;
            let args = params.get("arguments");
            let field = |k: &str| args.and_then(|a| a.get(k)).and_then(Value::as_str).map(str::to_string);
            let task_id = field("task_id").or_else(|| current.map(str::to_string))?;
            let device_id = match &f.peer {
                Locator::Mem(name) => name.clone(),
                other => other.to_string(),
            };
            Some(TraceEvent::Call {
                at,
                task_id,
                device_id,
                tool: params.get("name")?.as_str()?.to_string(),
                action: field("action"),
            })
        })
        .collect();
    // Fan-out calls interleave nondeterministically; their order carries no
    // meaning, so fix one.
    out.sort_by(|a, b| serde_json::to_string(a).unwrap().cmp(&serde_json::to_string(b).unwrap()));
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReducedTask {
    pub involved: BTreeSet<String>,
    pub executors: BTreeSet<String>,
}

impl ReducedTask {
    pub fn utilization(&self) -> Option<f64> {
        (!self.involved.is_empty()).then(|| self.executors.len() as f64 / self.involved.len() as f64)
    }
}

/// Involved devices are those sent a resource query or an assignment for the
/// task; executors are those with a subtask of it recorded as completed.
pub fn reduce(trace: &[TraceEvent]) -> BTreeMap<String, ReducedTask> {
    let mut tasks: BTreeMap<String, ReducedTask> = BTreeMap::new();
    for e in trace {
        match e {
            TraceEvent::TaskArrived { task_id, .. } => {
                tasks.entry(task_id.clone()).or_default();
            }
            TraceEvent::Call {
                task_id,
                device_id,
                tool,
                action,
                ..
            } => {
                let assigns = tool == RECEIVE_TASK && action.as_deref() == Some("assign");
                if tool == REPORT_RESOURCE || assigns {
                    tasks.entry(task_id.clone()).or_default().involved.insert(device_id.clone());
                }
            }
            TraceEvent::Monitor(m) if m.verdict == Verdict::Completed && !m.subtasks.is_empty() => {
                tasks.entry(m.task_id.clone()).or_default().executors.insert(m.device_id.clone());
            }
            _ => {}
        }
    }
    tasks
}

/// Mean per-task utilization over tasks with any involved device.
pub fn utilization_from_trace(trace: &[TraceEvent]) -> Option<f64> {
    let u: Vec<f64> = reduce(trace).values().filter_map(ReducedTask::utilization).collect();
    (!u.is_empty()).then(|| u.iter().sum::<f64>() / u.len() as f64)
}
