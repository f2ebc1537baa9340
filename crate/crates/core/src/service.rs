//! The central trust service.
//!
//! [`TrustService::evaluate`] runs the evaluation pipeline for one task
//! description:
//!
//! 1. interpret the description into [`TaskRequirements`];
//! 2. look up the devices supporting the task type;
//! 3. assess each device's history for that type over the window and drop
//!    devices failing the gate;
//! 4. ask the survivors, in parallel, for exactly the resources the
//!    requirements name (skipped when none are named);
//! 5. assess the snapshots and render the report.
//!
//! The same service monitors running subtasks ([`TrustService::poll`]),
//! terminates degraded collaborators, writes performance history back to
//! the registry and reclaims collaborators when a task ends.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use taas_wire::{handler, Connection, Locator, Network, ServerHandle, ToolError, ToolHandler, ToolManifest, ToolSpec, WireError};
use thiserror::Error;

use crate::clock::Clock;
use crate::device::{PerformanceReport, SubtaskReport, TerminatedSubtask, RECEIVE_TASK, REPORT_PERFORMANCE, REPORT_RESOURCE};
use crate::engine::{assess_history, assess_resources, render_semantic, ResourceSnapshot, TrustConfig, TrustEntry, TrustReport};
use crate::interpreter::{interpret, ExternalInterpreter, InterpretSource};
use crate::parser::{ConfigError, ParseError, RequirementParser, TaskDescription};
use crate::registry::{DeviceRecord, HistoryQuery, Outcome, PerformanceRecord, Registry, RegistryError};
use crate::requirements::{HistoryDimension, ResourceKind, TaskRequirements};

pub const EVALUATE_TRUST: &str = "evaluate_trust";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorPolicy {
    /// Seconds between performance reports.
    pub report_interval: f64,
    /// A collaborator slower than this fraction of its declared speed is degraded.
    pub min_speed_fraction: f64,
    pub min_accuracy: f64,
}

impl Default for MonitorPolicy {
    fn default() -> Self {
        Self {
            report_interval: 1.0,
            min_speed_fraction: 0.5,
            min_accuracy: TrustConfig::default().theta_acc,
        }
    }
}

impl MonitorPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let frac = |x: f64| x > 0.0 && x <= 1.0;
        if !(self.report_interval > 0.0) || !frac(self.min_speed_fraction) || !frac(self.min_accuracy) {
            return Err(ConfigError::Invalid(format!("invalid monitor policy {self:?}")));
        }
        Ok(())
    }

    pub fn is_degraded(&self, speed: f64, declared: f64, accuracy: Option<f64>) -> bool {
        speed < self.min_speed_fraction * declared || accuracy.is_some_and(|a| a < self.min_accuracy)
    }
}

/// Service-wide settings, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub trust: TrustConfig,
    pub monitor: MonitorPolicy,
    /// Per-device limit on a resource query, in seconds.
    pub fanout_timeout_s: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            trust: TrustConfig::default(),
            monitor: MonitorPolicy::default(),
            fanout_timeout_s: 2.0,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.monitor.validate()?;
        if !(cfg.fanout_timeout_s > 0.0) {
            return Err(ConfigError::Invalid("fanout_timeout_s must be positive".into()));
        }
        TrustConfig::from_toml(&toml::to_string(&cfg.trust).expect("config serializes"))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStage {
    Interpreted,
    HistoryDone,
    ResourcesDone,
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: EvalStage,
    /// Device ids still under consideration after the stage.
    pub candidates: Vec<String>,
}

/// Recorded course of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTrace {
    pub request_id: String,
    pub requirements: TaskRequirements,
    pub interpreted_by: InterpretSource,
    pub stages: Vec<StageRecord>,
    /// Devices dropped during resource collection, with the reason.
    pub unreachable: Vec<(String, String)>,
}

/// The text sent to `report_resource`, naming only the requested kinds.
pub fn resource_query(req: &TaskRequirements) -> Option<&'static str> {
    let kinds = req.resource_kinds();
    match (kinds.contains(&ResourceKind::Storage), kinds.contains(&ResourceKind::Cpu)) {
        (true, true) => Some("Can you provide your available storage capacity and CPU information?"),
        (true, false) => Some("Can you provide your available storage capacity?"),
        (false, true) => Some("Can you provide your CPU information?"),
        (false, false) => None,
    }
}

/// A subtask accepted by a collaborator, as handed to the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatched {
    pub device_id: String,
    pub address: Locator,
    pub subtask_id: String,
    pub data_size_mb: f64,
    pub declared_speed_mb_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Healthy,
    Completed,
    Degraded,
    Unreachable,
    /// Stopped by [`TrustService::reclaim`] while still running.
    Reclaimed,
}

impl Verdict {
    /// Whether the collaborator's participation ended with this event.
    pub fn is_termination(self) -> bool {
        matches!(self, Verdict::Degraded | Verdict::Unreachable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskOutcome {
    pub subtask_id: String,
    pub data_size_mb: f64,
    pub progress_mb: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<f64>,
}

impl SubtaskOutcome {
    pub fn remaining_mb(&self) -> f64 {
        (self.data_size_mb - self.progress_mb).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub task_id: String,
    pub device_id: String,
    pub at: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_speed_mb_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_accuracy: Option<f64>,
    /// Completed subtasks for `Completed`, stopped subtasks for terminations.
    pub subtasks: Vec<SubtaskOutcome>,
}

#[derive(Debug)]
struct Watched {
    data_size_mb: f64,
    recorded: bool,
}

#[derive(Debug)]
struct Collaborator {
    address: Locator,
    conn: Option<Connection>,
    declared_speed: f64,
    subtasks: BTreeMap<String, Watched>,
    terminated: bool,
    last_report: Option<PerformanceReport>,
}

#[derive(Debug)]
struct MonitoredTask {
    task_type: String,
    collaborators: BTreeMap<String, Collaborator>,
}

pub fn task_tag(task_id: &str) -> String {
    format!("task:{task_id}")
}

pub fn eval_tag(request_id: &str) -> String {
    format!("eval:{request_id}")
}

pub struct TrustService {
    registry: Arc<Registry>,
    network: Network,
    clock: Arc<dyn Clock>,
    parser: RequirementParser,
    config: ServiceConfig,
    interpreter: Option<(Arc<dyn ExternalInterpreter>, String, Duration)>,
    next_request: AtomicU64,
    traces: Mutex<Vec<EvaluationTrace>>,
    tasks: Mutex<BTreeMap<String, MonitoredTask>>,
}

impl std::fmt::Debug for TrustService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrustService").field("config", &self.config).finish_non_exhaustive()
    }
}

impl TrustService {
    pub fn new(registry: Arc<Registry>, network: Network, clock: Arc<dyn Clock>) -> Self {
        Self {
            registry,
            network,
            clock,
            parser: RequirementParser::default(),
            config: ServiceConfig::default(),
            interpreter: None,
            next_request: AtomicU64::new(0),
            traces: Mutex::default(),
            tasks: Mutex::default(),
        }
    }

    pub fn with_config(mut self, config: ServiceConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_parser(mut self, parser: RequirementParser) -> Self {
        self.parser = parser;
        self
    }

    /// Consults `client` before the rule parser, bounded by `deadline`.
    pub fn with_interpreter(mut self, client: Arc<dyn ExternalInterpreter>, prompt: impl Into<String>, deadline: Duration) -> Self {
        self.interpreter = Some((client, prompt.into(), deadline));
        self
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn traces(&self) -> Vec<EvaluationTrace> {
        self.traces.lock().unwrap().clone()
    }

    pub fn interpret(&self, desc: &TaskDescription) -> Result<(TaskRequirements, InterpretSource), ParseError> {
        let known = self.registry.known_task_types();
        match &self.interpreter {
            Some((client, prompt, deadline)) => {
                let i = interpret(desc, &known, &self.parser, client, prompt, *deadline)?;
                Ok((i.requirements, i.source))
            }
            None => Ok((self.parser.parse(desc, &known)?, InterpretSource::Fallback("rule parser".into()))),
        }
    }

    /// Runs the evaluation pipeline for one description.
    pub fn evaluate(&self, desc: &TaskDescription) -> Result<TrustReport, ServiceError> {
        let request_id = format!("req-{}", self.next_request.fetch_add(1, Ordering::Relaxed) + 1);
        let (req, source) = self.interpret(desc)?;
        let mut trace = EvaluationTrace {
            request_id: request_id.clone(),
            requirements: req.clone(),
            interpreted_by: source,
            stages: Vec::new(),
            unreachable: Vec::new(),
        };
        let stage = |trace: &mut EvaluationTrace, stage, ids: Vec<String>| {
            trace.stages.push(StageRecord { stage, candidates: ids })
        };

        let candidates = self.registry.devices_supporting(&req.task_type);
        stage(&mut trace, EvalStage::Interpreted, ids(&candidates));

        let now = self.clock.now();
        let dims: Vec<HistoryDimension> = if req.history_dimensions.is_empty() {
            // Nothing to average, but the sample-count gate still applies.
            HistoryDimension::ALL.to_vec()
        } else {
            req.history_dimensions.iter().copied().collect()
        };
        let query = HistoryQuery::new(req.task_type.clone(), req.history_window, dims)?;
        let mut trusted = Vec::new();
        for device in candidates {
            let records = self.registry.query_history(&query, &device.device_id, now)?;
            let h = assess_history(&device.device_id, &records, &req, &self.config.trust);
            if h.trustworthy {
                trusted.push((device, h));
            } else {
                log::info!("{request_id}: {} fails the historical gate ({h:?})", device.device_id);
            }
        }
        stage(&mut trace, EvalStage::HistoryDone, trusted.iter().map(|(d, _)| d.device_id.clone()).collect());

        let snapshots = self.collect_resources(&request_id, &req, &trusted.iter().map(|(d, _)| d.clone()).collect::<Vec<_>>());
        let mut entries = Vec::new();
        for ((device, h), snap) in trusted.into_iter().zip(snapshots) {
            let snap = match snap {
                Ok(s) => s,
                Err(reason) => {
                    log::warn!("{request_id}: dropping {}: {reason}", device.device_id);
                    trace.unreachable.push((device.device_id, reason));
                    continue;
                }
            };
            let r = assess_resources(&snap, &req, &self.config.trust);
            let (semantic_his, semantic_res) = render_semantic(&h, &r, &req);
            entries.push(TrustEntry {
                device_id: device.device_id,
                agent_address: device.agent_address,
                historical: h,
                resource: r,
                semantic_his,
                semantic_res,
            });
        }
        let survivors: Vec<String> = entries.iter().map(|e| e.device_id.clone()).collect();
        stage(&mut trace, EvalStage::ResourcesDone, survivors.clone());
        stage(&mut trace, EvalStage::Reported, survivors);
        self.traces.lock().unwrap().push(trace);
        Ok(TrustReport {
            request_id,
            task_type: req.task_type,
            entries,
        })
    }

    /// One snapshot (or failure reason) per device, in input order.
    fn collect_resources(
        &self,
        request_id: &str,
        req: &TaskRequirements,
        devices: &[DeviceRecord],
    ) -> Vec<Result<ResourceSnapshot, String>> {
        let Some(query) = resource_query(req) else {
            let now = self.clock.now();
            return devices
                .iter()
                .map(|d| {
                    Ok(ResourceSnapshot {
                        device_id: d.device_id.clone(),
                        cpu_ghz: None,
                        available_storage_gb: None,
                        captured_at: now,
                    })
                })
                .collect();
        };
        let tag = eval_tag(request_id);
        let timeout = Duration::from_secs_f64(self.config.fanout_timeout_s);
        std::thread::scope(|scope| {
            let workers: Vec<_> = devices
                .iter()
                .map(|d| {
                    let tag = tag.as_str();
                    scope.spawn(move || -> Result<ResourceSnapshot, String> {
                        let conn = self.network.connect_tagged(&d.agent_address, tag).map_err(|e| e.to_string())?;
                        let result = (|| {
                            let manifest = conn.list_tools().map_err(|e| e.to_string())?;
                            if manifest.tool(REPORT_RESOURCE).is_none() {
                                return Err(format!("agent does not offer {REPORT_RESOURCE}"));
                            }
                            let v = conn
                                .call_tool_with_timeout(REPORT_RESOURCE, json!({ "query": query }), Some(timeout))
                                .map_err(|e| e.to_string())?;
                            let mut snap: ResourceSnapshot =
                                serde_json::from_value(v).map_err(|e| format!("malformed resource report: {e}"))?;
                            snap.device_id = d.device_id.clone();
                            Ok(snap)
                        })();
                        conn.close();
                        result
                    })
                })
                .collect();
            workers
                .into_iter()
                .map(|w| w.join().unwrap_or_else(|_| Err("resource query panicked".into())))
                .collect()
        })
    }

    fn tool_table(self: &Arc<Self>) -> (ToolManifest, HashMap<String, ToolHandler>) {
        let manifest = ToolManifest::new("trust-service").with_tool(ToolSpec::new(
            EVALUATE_TRUST,
            "Evaluate task-specific trustworthiness of potential collaborators for a natural-language task description.",
            json!({
                "type": "object",
                "properties": {
                    "description": {"type": "string"},
                    "owner_id": {"type": "string"}
                },
                "required": ["description"]
            }),
        ));
        let me = Arc::clone(self);
        let h = handler(move |args: Value| {
            let text = args
                .get("description")
                .and_then(Value::as_str)
                .ok_or_else(|| ToolError::new("missing `description`"))?;
            let owner = args.get("owner_id").and_then(Value::as_str).unwrap_or("anonymous");
            let report = me
                .evaluate(&TaskDescription::new(text, owner))
                .map_err(|e| ToolError::new(e.to_string()))?;
            Ok(serde_json::to_value(report).expect("report serializes"))
        });
        (manifest, HashMap::from([(EVALUATE_TRUST.to_string(), h)]))
    }

    /// Exposes `evaluate_trust` at `locator`.
    pub fn serve(self: &Arc<Self>, locator: &Locator) -> Result<ServerHandle, ServiceError> {
        let (manifest, handlers) = self.tool_table();
        Ok(self.network.serve(locator, manifest, handlers)?)
    }

    /// Starts monitoring the given subtasks of `task_id`. May be called again
    /// for the same task when work is reassigned.
    pub fn monitor_execution(&self, task_id: &str, task_type: &str, dispatched: &[Dispatched]) {
        let mut tasks = self.tasks.lock().unwrap();
        let task = tasks.entry(task_id.to_string()).or_insert_with(|| MonitoredTask {
            task_type: task_type.to_string(),
            collaborators: BTreeMap::new(),
        });
        for d in dispatched {
            let c = task.collaborators.entry(d.device_id.clone()).or_insert_with(|| Collaborator {
                address: d.address.clone(),
                conn: None,
                declared_speed: d.declared_speed_mb_s,
                subtasks: BTreeMap::new(),
                terminated: false,
                last_report: None,
            });
            c.subtasks.insert(
                d.subtask_id.clone(),
                Watched {
                    data_size_mb: d.data_size_mb,
                    recorded: false,
                },
            );
        }
    }

    /// True once every monitored subtask of the task has been recorded as
    /// completed or terminated. Unknown tasks count as finished.
    pub fn is_finished(&self, task_id: &str) -> bool {
        self.tasks.lock().unwrap().get(task_id).is_none_or(|t| {
            t.collaborators.values().all(|c| c.subtasks.values().all(|w| w.recorded))
        })
    }

    pub fn monitored_tasks(&self) -> Vec<String> {
        self.tasks.lock().unwrap().keys().cloned().collect()
    }

    /// One monitoring round over every running collaborator.
    pub fn poll(&self) -> Vec<MonitorEvent> {
        let now = self.clock.now();
        let policy = self.config.monitor.clone();
        let mut events = Vec::new();
        let mut tasks = self.tasks.lock().unwrap();
        for (task_id, task) in tasks.iter_mut() {
            for (device_id, c) in task.collaborators.iter_mut() {
                if c.terminated || c.subtasks.values().all(|w| w.recorded) {
                    continue;
                }
                let report = ensure_conn(&self.network, c, task_id).and_then(|conn| {
                    let v = conn.call_tool(REPORT_PERFORMANCE, json!({ "task_id": task_id }))?;
                    serde_json::from_value::<PerformanceReport>(v)
                        .map_err(|e| WireError::Codec(format!("malformed performance report: {e}")))
                });
                let report = match report {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("{task_id}: {device_id} unreachable: {e}");
                        events.push(self.terminate(task_id, &task.task_type, device_id, c, now, Verdict::Unreachable, None, None));
                        continue;
                    }
                };
                let completed: Vec<&SubtaskReport> = report
                    .subtasks
                    .iter()
                    .filter(|s| s.state == crate::device::ExecState::Completed)
                    .filter(|s| c.subtasks.get(&s.subtask_id).is_some_and(|w| !w.recorded))
                    .collect();
                if !completed.is_empty() {
                    let mut outcomes = Vec::new();
                    for s in completed {
                        self.record(&task.task_type, device_id, s, Outcome::Completed, s.progress_mb);
                        c.subtasks.get_mut(&s.subtask_id).expect("filtered above").recorded = true;
                        outcomes.push(outcome(s));
                    }
                    events.push(MonitorEvent {
                        task_id: task_id.clone(),
                        device_id: device_id.clone(),
                        at: report.at,
                        verdict: Verdict::Completed,
                        measured_speed_mb_s: None,
                        measured_accuracy: None,
                        subtasks: outcomes,
                    });
                }
                let running: Vec<&SubtaskReport> = report
                    .subtasks
                    .iter()
                    .filter(|s| s.state == crate::device::ExecState::Executing && c.subtasks.contains_key(&s.subtask_id))
                    .collect();
                let stopped_elsewhere: Vec<&SubtaskReport> = report
                    .subtasks
                    .iter()
                    .filter(|s| s.state == crate::device::ExecState::Terminated)
                    .filter(|s| c.subtasks.get(&s.subtask_id).is_some_and(|w| !w.recorded))
                    .collect();
                let unknown = c
                    .subtasks
                    .iter()
                    .any(|(id, w)| !w.recorded && !report.subtasks.iter().any(|s| &s.subtask_id == id));
                c.last_report = Some(report.clone());
                if !stopped_elsewhere.is_empty() || unknown {
                    // The device dropped or stopped work on its own.
                    events.push(self.terminate(task_id, &task.task_type, device_id, c, now, Verdict::Degraded, None, None));
                    continue;
                }
                if running.is_empty() {
                    continue;
                }
                let speed: f64 = running.iter().map(|s| s.current_speed_mb_s).sum();
                let done: f64 = running.iter().map(|s| s.progress_mb).sum();
                let accuracy = (done > 0.0).then(|| {
                    running.iter().map(|s| s.running_accuracy.unwrap_or(0.0) * s.progress_mb).sum::<f64>() / done
                });
                if policy.is_degraded(speed, c.declared_speed, accuracy) {
                    log::info!(
                        "{task_id}: {device_id} degraded (speed {speed:.3} vs declared {}, accuracy {accuracy:?})",
                        c.declared_speed
                    );
                    events.push(self.terminate(task_id, &task.task_type, device_id, c, now, Verdict::Degraded, Some(speed), accuracy));
                } else {
                    events.push(MonitorEvent {
                        task_id: task_id.clone(),
                        device_id: device_id.clone(),
                        at: report.at,
                        verdict: Verdict::Healthy,
                        measured_speed_mb_s: Some(speed),
                        measured_accuracy: accuracy,
                        subtasks: Vec::new(),
                    });
                }
            }
        }
        events
    }

    #[allow(clippy::too_many_arguments)]
    fn terminate(
        &self,
        task_id: &str,
        task_type: &str,
        device_id: &str,
        c: &mut Collaborator,
        now: f64,
        verdict: Verdict,
        speed: Option<f64>,
        accuracy: Option<f64>,
    ) -> MonitorEvent {
        let stopped: Option<Vec<TerminatedSubtask>> = ensure_conn(&self.network, c, task_id)
            .and_then(|conn| conn.call_tool(RECEIVE_TASK, json!({"action": "terminate", "task_id": task_id})))
            .ok()
            .and_then(|v| serde_json::from_value(v.get("terminated").cloned().unwrap_or(Value::Null)).ok());
        c.terminated = true;
        let last = c.last_report.clone();
        let mut outcomes = Vec::new();
        for (subtask_id, w) in c.subtasks.iter_mut().filter(|(_, w)| !w.recorded) {
            w.recorded = true;
            let seen = last.as_ref().and_then(|r| r.subtasks.iter().find(|s| &s.subtask_id == subtask_id));
            let progress = stopped
                .as_ref()
                .and_then(|v| v.iter().find(|t| &t.subtask_id == subtask_id))
                .map(|t| t.progress_mb)
                .or(seen.map(|s| s.progress_mb))
                .unwrap_or(0.0);
            let accuracy = seen.and_then(|s| s.running_accuracy);
            let accepted_at = seen.map_or(now, |s| s.accepted_at);
            let elapsed = now - accepted_at;
            let rec_speed = if elapsed > 0.0 { progress / elapsed } else { 0.0 };
            let rec = PerformanceRecord {
                timestamp: now,
                task_type: task_type.to_string(),
                device_id: device_id.to_string(),
                processing_speed: rec_speed,
                completion_accuracy: accuracy.unwrap_or(0.0).clamp(0.0, 1.0),
                outcome: Outcome::Terminated,
            };
            if let Err(e) = self.registry.append_performance(rec) {
                log::warn!("{task_id}: history write for {device_id} failed: {e}");
            }
            outcomes.push(SubtaskOutcome {
                subtask_id: subtask_id.clone(),
                data_size_mb: w.data_size_mb,
                progress_mb: progress.min(w.data_size_mb),
                accuracy,
                finished_at: Some(now),
            });
        }
        MonitorEvent {
            task_id: task_id.to_string(),
            device_id: device_id.to_string(),
            at: now,
            verdict,
            measured_speed_mb_s: speed,
            measured_accuracy: accuracy,
            subtasks: outcomes,
        }
    }

    fn record(&self, task_type: &str, device_id: &str, s: &SubtaskReport, outcome: Outcome, progress: f64) {
        let finished = s.finished_at.unwrap_or(s.accepted_at);
        let elapsed = finished - s.accepted_at;
        let speed = if elapsed > 0.0 { progress / elapsed } else { s.current_speed_mb_s };
        let rec = PerformanceRecord {
            timestamp: finished,
            task_type: task_type.to_string(),
            device_id: device_id.to_string(),
            processing_speed: speed,
            completion_accuracy: s.running_accuracy.unwrap_or(0.0).clamp(0.0, 1.0),
            outcome,
        };
        if let Err(e) = self.registry.append_performance(rec) {
            log::warn!("history write for {device_id} failed: {e}");
        }
    }

    /// Ends a task: stops and records anything still running, releases every
    /// collaborator's reservations and closes the service's connections.
    /// Unknown or already reclaimed tasks are a no-op.
    pub fn reclaim(&self, task_id: &str) -> Vec<MonitorEvent> {
        let Some(mut task) = self.tasks.lock().unwrap().remove(task_id) else {
            return Vec::new();
        };
        let now = self.clock.now();
        let mut events = Vec::new();
        for (device_id, c) in task.collaborators.iter_mut() {
            if c.subtasks.values().any(|w| !w.recorded) {
                events.push(self.terminate(task_id, &task.task_type, device_id, c, now, Verdict::Reclaimed, None, None));
            }
            match ensure_conn(&self.network, c, task_id)
                .and_then(|conn| conn.call_tool(RECEIVE_TASK, json!({"action": "release", "task_id": task_id})))
            {
                Ok(_) => {}
                Err(e) => log::warn!("{task_id}: release on {device_id} failed: {e}"),
            }
            if let Some(conn) = c.conn.take() {
                conn.close();
            }
        }
        events
    }
}

fn ensure_conn<'a>(network: &Network, c: &'a mut Collaborator, task_id: &str) -> Result<&'a Connection, WireError> {
    if c.conn.as_ref().is_some_and(|conn| conn.state() == taas_wire::EndpointState::Closed) {
        c.conn = None;
    }
    if c.conn.is_none() {
        c.conn = Some(network.connect_tagged(&c.address, &task_tag(task_id))?);
    }
    Ok(c.conn.as_ref().expect("just set"))
}

fn outcome(s: &SubtaskReport) -> SubtaskOutcome {
    SubtaskOutcome {
        subtask_id: s.subtask_id.clone(),
        data_size_mb: s.data_size_mb,
        progress_mb: s.progress_mb,
        accuracy: s.running_accuracy,
        finished_at: s.finished_at,
    }
}

fn ids(devices: &[DeviceRecord]) -> Vec<String> {
    devices.iter().map(|d| d.device_id.clone()).collect()
}
