//! Device-side agent: a virtual-time executor behind a tool server.
//!
//! The executor is advanced lazily to the clock's current time whenever a
//! tool is called. Between fault-plan breakpoints and subtask completions
//! every executing subtask progresses linearly at the device's current
//! speed for its task type divided by the number of executing subtasks.
//!
//! Tools:
//!
//! * `report_resource {query}`: CPU and/or available storage, depending on
//!   which of them the query names;
//! * `receive_task {action, ...}`: `assign` a subtask, `terminate` a task's
//!   executing subtasks, or `release` a task's reservations;
//! * `report_performance {task_id?}`: progress, speed and accuracy so far.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use taas_wire::{handler, Locator, Network, ServerHandle, ToolError, ToolHandler, ToolManifest, ToolSpec, WireError};
use thiserror::Error;

use crate::clock::Clock;
use crate::units::{gb_to_mb, mb_to_gb};

pub const REPORT_RESOURCE: &str = "report_resource";
pub const RECEIVE_TASK: &str = "receive_task";
pub const REPORT_PERFORMANCE: &str = "report_performance";

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("invalid device profile `{device}`: {message}")]
    InvalidProfile { device: String, message: String },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// From `at` onwards, the device runs at `speed` MB/s and/or with
/// `accuracy` for every task type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Per-subtask accuracy offset drawn uniformly from `[-amplitude, amplitude]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub cpu_ghz: f64,
    pub total_storage_gb: f64,
    /// MB/s per supported task type.
    pub nominal_speed: BTreeMap<String, f64>,
    /// Completion accuracy per supported task type.
    pub accuracy: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fault_plan: Vec<FaultEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |message: String| {
            Err(DeviceError::InvalidProfile {
                device: self.device_id.clone(),
                message,
            })
        };
        if self.device_id.is_empty() {
            return bad("empty device id".into());
        }
        if !(self.cpu_ghz >= 0.0 && self.total_storage_gb >= 0.0) {
            return bad("cpu and storage must be non-negative".into());
        }
        if self.nominal_speed.is_empty() {
            return bad("no supported task types".into());
        }
        if self.nominal_speed.keys().ne(self.accuracy.keys()) {
            return bad("nominal_speed and accuracy must cover the same task types".into());
        }
        if let Some((ty, _)) = self.nominal_speed.iter().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("nominal speed for `{ty}` must be positive"));
        }
        if let Some((ty, _)) = self.accuracy.iter().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            return bad(format!("accuracy for `{ty}` must lie in [0, 1]"));
        }
        for f in &self.fault_plan {
            if !f.at.is_finite()
                || f.speed.is_some_and(|s| !(s >= 0.0 && s.is_finite()))
                || f.accuracy.is_some_and(|a| !(0.0..=1.0).contains(&a))
            {
                return bad(format!("invalid fault event {f:?}"));
            }
        }
        if self.noise.as_ref().is_some_and(|n| !(0.0..=1.0).contains(&n.amplitude)) {
            return bad("noise amplitude must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn supported_types(&self) -> BTreeSet<String> {
        self.nominal_speed.keys().cloned().collect()
    }

    pub fn total_storage_mb(&self) -> f64 {
        gb_to_mb(self.total_storage_gb)
    }

    /// Single-subtask speed for `task_type` at time `t`.
    pub fn speed_at(&self, task_type: &str, t: f64) -> f64 {
        self.fault_plan
            .iter()
            .filter(|f| f.at <= t)
            .filter_map(|f| f.speed)
            .next_back()
            .unwrap_or_else(|| self.nominal_speed.get(task_type).copied().unwrap_or(0.0))
    }

    pub fn accuracy_at(&self, task_type: &str, t: f64) -> f64 {
        self.fault_plan
            .iter()
            .filter(|f| f.at <= t)
            .filter_map(|f| f.accuracy)
            .next_back()
            .unwrap_or_else(|| self.accuracy.get(task_type).copied().unwrap_or(0.0))
    }

    fn next_fault_after(&self, t: f64) -> Option<f64> {
        self.fault_plan.iter().map(|f| f.at).find(|&at| at > t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskAssignment {
    pub task_id: String,
    pub subtask_id: String,
    pub task_type: String,
    pub data_size_mb: f64,
    pub required_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecState {
    Idle,
    Executing,
    Completed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskReport {
    pub task_id: String,
    pub subtask_id: String,
    pub task_type: String,
    pub state: ExecState,
    pub data_size_mb: f64,
    pub progress_mb: f64,
    pub current_speed_mb_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_accuracy: Option<f64>,
    pub accepted_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub device_id: String,
    pub at: f64,
    pub state: ExecState,
    pub progress_mb: f64,
    pub current_speed_mb_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_accuracy: Option<f64>,
    pub subtasks: Vec<SubtaskReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssignReply {
    Accepted {
        accepted: bool,
        subtask_id: String,
        estimated_completion_s: f64,
        declared_speed_mb_s: f64,
    },
    Rejected {
        accepted: bool,
        reason: String,
    },
}

impl AssignReply {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AssignReply::Accepted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminatedSubtask {
    pub subtask_id: String,
    pub data_size_mb: f64,
    pub progress_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TaskAction {
    Assign(SubtaskAssignment),
    Terminate {
        task_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subtask_id: Option<String>,
    },
    Release {
        task_id: String,
    },
}

#[derive(Debug, Clone)]
struct Subtask {
    assignment: SubtaskAssignment,
    state: ExecState,
    progress_mb: f64,
    /// Accuracy-weighted MB processed.
    correct_mb: f64,
    accuracy_offset: f64,
    accepted_at: f64,
    finished_at: Option<f64>,
}

impl Subtask {
    fn remaining(&self) -> f64 {
        (self.assignment.data_size_mb - self.progress_mb).max(0.0)
    }

    fn running_accuracy(&self) -> Option<f64> {
        (self.progress_mb > 0.0).then(|| self.correct_mb / self.progress_mb)
    }
}

#[derive(Debug)]
struct Executor {
    now: f64,
    /// Keyed by subtask id; reservations are held until release.
    subtasks: BTreeMap<String, Subtask>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Executor {
    fn executing(&self) -> usize {
        self.subtasks.values().filter(|s| s.state == ExecState::Executing).count()
    }

    fn rate(&self, profile: &DeviceProfile, s: &Subtask) -> f64 {
        if s.state != ExecState::Executing {
            return 0.0;
        }
        profile.speed_at(&s.assignment.task_type, self.now) / self.executing().max(1) as f64
    }

    fn advance_to(&mut self, profile: &DeviceProfile, t: f64) {
        while self.now < t {
            let n = self.executing();
            if n == 0 {
                self.now = t;
                break;
            }
            let now = self.now;
            let rates: Vec<(String, f64)> = self
                .subtasks
                .iter()
                .filter(|(_, s)| s.state == ExecState::Executing)
                .map(|(id, s)| (id.clone(), profile.speed_at(&s.assignment.task_type, now) / n as f64))
                .collect();
            let mut horizon = profile.next_fault_after(now).map_or(t, |f| f.min(t));
            let mut first_done = None;
            for (id, rate) in &rates {
                if *rate > 0.0 {
                    let done_at = now + self.subtasks[id].remaining() / rate;
                    if done_at <= horizon {
                        horizon = done_at;
                        first_done = Some(id.clone());
                    }
                }
            }
            let dt = horizon - now;
            for (id, rate) in &rates {
                let s = self.subtasks.get_mut(id).expect("rate computed from live subtask");
                let acc = (profile.accuracy_at(&s.assignment.task_type, now) + s.accuracy_offset).clamp(0.0, 1.0);
                let d = (rate * dt).min(s.remaining());
                s.progress_mb += d;
                s.correct_mb += d * acc;
                let tol = 1e-9 * s.assignment.data_size_mb.max(1.0);
                if first_done.as_deref() == Some(id.as_str()) || s.remaining() <= tol {
                    s.correct_mb += s.remaining() * acc;
                    s.progress_mb = s.assignment.data_size_mb;
                    s.state = ExecState::Completed;
                    s.finished_at = Some(horizon);
                }
            }
            self.now = horizon;
        }
    }

    fn reserved_mb(&self) -> f64 {
        self.subtasks.values().map(|s| s.assignment.data_size_mb).sum()
    }

    fn report(&self, profile: &DeviceProfile, s: &Subtask) -> SubtaskReport {
        SubtaskReport {
            task_id: s.assignment.task_id.clone(),
            subtask_id: s.assignment.subtask_id.clone(),
            task_type: s.assignment.task_type.clone(),
            state: s.state,
            data_size_mb: s.assignment.data_size_mb,
            progress_mb: s.progress_mb,
            current_speed_mb_s: self.rate(profile, s),
            running_accuracy: s.running_accuracy(),
            accepted_at: s.accepted_at,
            finished_at: s.finished_at,
        }
    }
}

/// One device: profile, clock and executor state.
#[derive(Debug)]
pub struct DeviceAgent {
    profile: DeviceProfile,
    clock: Arc<dyn Clock>,
    exec: Mutex<Executor>,
}

impl DeviceAgent {
    pub fn new(mut profile: DeviceProfile, clock: Arc<dyn Clock>) -> Result<Arc<Self>, DeviceError> {
        profile.validate()?;
        profile.fault_plan.sort_by(|a, b| a.at.total_cmp(&b.at));
        let now = clock.now();
        Ok(Arc::new(Self {
            profile,
            clock,
            exec: Mutex::new(Executor {
                now,
                subtasks: BTreeMap::new(),
            }),
        }))
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn device_id(&self) -> &str {
        &self.profile.device_id
    }

    fn synced(&self) -> std::sync::MutexGuard<'_, Executor> {
        let mut exec = self.exec.lock().unwrap();
        exec.advance_to(&self.profile, self.clock.now());
        exec
    }

    pub fn reserved_mb(&self) -> f64 {
        self.synced().reserved_mb()
    }

    pub fn available_storage_mb(&self) -> f64 {
        (self.profile.total_storage_mb() - self.reserved_mb()).max(0.0)
    }

    /// Answers a free-text resource query. Only the quantities the query
    /// names are included.
    pub fn report_resource(&self, query: &str) -> Result<Value, ToolError> {
        let q = query.to_lowercase();
        let wants_storage = q.contains("storage");
        let wants_cpu = q.contains("cpu") || q.contains("processor");
        if !wants_storage && !wants_cpu {
            return Err(ToolError::new("query names no known resource (storage, cpu)"));
        }
        let exec = self.synced();
        let mut out = serde_json::Map::new();
        out.insert("device_id".into(), json!(self.profile.device_id));
        out.insert("captured_at".into(), json!(exec.now));
        if wants_cpu {
            out.insert("cpu_ghz".into(), json!(self.profile.cpu_ghz));
        }
        if wants_storage {
            let free = (self.profile.total_storage_mb() - exec.reserved_mb()).max(0.0);
            out.insert("available_storage_gb".into(), json!(mb_to_gb(free)));
        }
        Ok(Value::Object(out))
    }

    pub fn assign(&self, a: SubtaskAssignment) -> AssignReply {
        let mut exec = self.synced();
        let reject = |reason: String| AssignReply::Rejected {
            accepted: false,
            reason,
        };
        if !self.profile.nominal_speed.contains_key(&a.task_type) {
            return reject(format!("task type `{}` not supported", a.task_type));
        }
        if !(a.data_size_mb > 0.0 && a.data_size_mb.is_finite()) {
            return reject("data size must be positive".into());
        }
        if exec.subtasks.contains_key(&a.subtask_id) {
            return reject(format!("subtask `{}` already assigned", a.subtask_id));
        }
        let free = self.profile.total_storage_mb() - exec.reserved_mb();
        if free < a.data_size_mb {
            return reject(format!(
                "insufficient storage: {} MB free, {} MB required",
                crate::units::fmt_num(free),
                crate::units::fmt_num(a.data_size_mb)
            ));
        }
        let speed = self.profile.speed_at(&a.task_type, exec.now);
        let share = speed / (exec.executing() + 1) as f64;
        let accuracy_offset = match &self.profile.noise {
            Some(n) if n.amplitude > 0.0 => {
                ChaCha8Rng::seed_from_u64(n.seed ^ fnv1a(&a.subtask_id)).gen_range(-n.amplitude..=n.amplitude)
            }
            _ => 0.0,
        };
        let now = exec.now;
        let subtask_id = a.subtask_id.clone();
        let estimate = if share > 0.0 { a.data_size_mb / share } else { f64::MAX };
        exec.subtasks.insert(
            subtask_id.clone(),
            Subtask {
                assignment: a,
                state: ExecState::Executing,
                progress_mb: 0.0,
                correct_mb: 0.0,
                accuracy_offset,
                accepted_at: now,
                finished_at: None,
            },
        );
        AssignReply::Accepted {
            accepted: true,
            subtask_id,
            estimated_completion_s: estimate,
            declared_speed_mb_s: speed,
        }
    }

    /// Stops the executing subtasks of `task_id` (or only `subtask_id`).
    pub fn terminate(&self, task_id: &str, subtask_id: Option<&str>) -> Vec<TerminatedSubtask> {
        let mut exec = self.synced();
        let now = exec.now;
        exec.subtasks
            .values_mut()
            .filter(|s| s.assignment.task_id == task_id && s.state == ExecState::Executing)
            .filter(|s| subtask_id.is_none_or(|id| id == s.assignment.subtask_id))
            .map(|s| {
                s.state = ExecState::Terminated;
                s.finished_at = Some(now);
                TerminatedSubtask {
                    subtask_id: s.assignment.subtask_id.clone(),
                    data_size_mb: s.assignment.data_size_mb,
                    progress_mb: s.progress_mb,
                }
            })
            .collect()
    }

    /// Drops every subtask of `task_id`, stopping any still executing, and
    /// returns the freed MB.
    pub fn release(&self, task_id: &str) -> f64 {
        let mut exec = self.synced();
        let mut freed = 0.0;
        exec.subtasks.retain(|_, s| {
            let keep = s.assignment.task_id != task_id;
            if !keep {
                freed += s.assignment.data_size_mb;
            }
            keep
        });
        freed
    }

    pub fn performance(&self, task_id: Option<&str>) -> PerformanceReport {
        let exec = self.synced();
        let subtasks: Vec<SubtaskReport> = exec
            .subtasks
            .values()
            .filter(|s| task_id.is_none_or(|t| t == s.assignment.task_id))
            .map(|s| exec.report(&self.profile, s))
            .collect();
        let state = if subtasks.iter().any(|s| s.state == ExecState::Executing) {
            ExecState::Executing
        } else if subtasks.iter().any(|s| s.state == ExecState::Terminated) {
            ExecState::Terminated
        } else if subtasks.is_empty() {
            ExecState::Idle
        } else {
            ExecState::Completed
        };
        let progress: f64 = subtasks.iter().map(|s| s.progress_mb).sum();
        let correct: f64 = subtasks.iter().map(|s| s.running_accuracy.unwrap_or(0.0) * s.progress_mb).sum();
        PerformanceReport {
            device_id: self.profile.device_id.clone(),
            at: exec.now,
            state,
            progress_mb: progress,
            current_speed_mb_s: subtasks.iter().map(|s| s.current_speed_mb_s).sum(),
            running_accuracy: (progress > 0.0).then(|| correct / progress),
            subtasks,
        }
    }

    fn receive_task(&self, args: Value) -> Result<Value, ToolError> {
        let action: TaskAction =
            serde_json::from_value(args).map_err(|e| ToolError::new(format!("invalid receive_task arguments: {e}")))?;
        Ok(match action {
            TaskAction::Assign(a) => serde_json::to_value(self.assign(a)).expect("reply serializes"),
            TaskAction::Terminate { task_id, subtask_id } => {
                json!({ "terminated": self.terminate(&task_id, subtask_id.as_deref()) })
            }
            TaskAction::Release { task_id } => json!({ "released_mb": self.release(&task_id) }),
        })
    }

    /// The three built-in tools and their handlers.
    pub fn tools(self: &Arc<Self>) -> (ToolManifest, HashMap<String, ToolHandler>) {
        let manifest = ToolManifest::new(&self.profile.device_id)
            .with_tool(ToolSpec::new(
                REPORT_RESOURCE,
                "Report the local resources named in the query.",
                json!({"type": "object", "properties": {"query": {"type": "string"}}, "required": ["query"]}),
            ))
            .with_tool(ToolSpec::new(
                RECEIVE_TASK,
                "Accept, terminate or release subtasks (action: assign | terminate | release).",
                json!({
                    "type": "object",
                    "properties": {
                        "action": {"enum": ["assign", "terminate", "release"]},
                        "task_id": {"type": "string"},
                        "subtask_id": {"type": "string"},
                        "task_type": {"type": "string"},
                        "data_size_mb": {"type": "number"},
                        "required_accuracy": {"type": "number"}
                    },
                    "required": ["action", "task_id"]
                }),
            ))
            .with_tool(ToolSpec::new(
                REPORT_PERFORMANCE,
                "Report execution progress of assigned subtasks.",
                json!({"type": "object", "properties": {"task_id": {"type": "string"}}}),
            ));
        let mut handlers: HashMap<String, ToolHandler> = HashMap::new();
        let me = Arc::clone(self);
        handlers.insert(
            REPORT_RESOURCE.into(),
            handler(move |args: Value| {
                let query = args.get("query").and_then(Value::as_str).unwrap_or_default();
                me.report_resource(query)
            }),
        );
        let me = Arc::clone(self);
        handlers.insert(RECEIVE_TASK.into(), handler(move |args| me.receive_task(args)));
        let me = Arc::clone(self);
        handlers.insert(
            REPORT_PERFORMANCE.into(),
            handler(move |args: Value| {
                let task_id = args.get("task_id").and_then(Value::as_str);
                Ok(serde_json::to_value(me.performance(task_id)).expect("report serializes"))
            }),
        );
        (manifest, handlers)
    }
}

/// A device agent exposed as a tool server.
pub struct DeviceServer {
    agent: Arc<DeviceAgent>,
    handle: ServerHandle,
}

impl DeviceServer {
    pub fn start(network: &Network, locator: &Locator, agent: Arc<DeviceAgent>) -> Result<Self, DeviceError> {
        let (manifest, handlers) = agent.tools();
        let handle = network.serve(locator, manifest, handlers)?;
        Ok(Self { agent, handle })
    }

    pub fn agent(&self) -> &Arc<DeviceAgent> {
        &self.agent
    }

    pub fn locator(&self) -> &Locator {
        self.handle.locator()
    }

    pub fn manifest(&self) -> ToolManifest {
        self.handle.manifest()
    }

    /// Adds a tool to the running server; fails on a name collision.
    pub fn extend_capability(&self, spec: ToolSpec, handler: ToolHandler) -> Result<(), DeviceError> {
        Ok(self.handle.register_tool(spec, handler)?)
    }

    pub fn shutdown(&self) {
        self.handle.shutdown();
    }
}
