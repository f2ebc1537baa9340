//! The task owner's side: describing a task, choosing collaborators from a
//! trust report, splitting the work and handing it out.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use taas_wire::{Connection, Locator, Network, WireError};
use thiserror::Error;

use crate::device::{AssignReply, SubtaskAssignment, RECEIVE_TASK};
use crate::engine::TrustReport;
use crate::parser::TaskDescription;
use crate::requirements::CpuClass;
use crate::service::{task_tag, Dispatched, MonitorEvent, EVALUATE_TRUST};
use crate::units::{fmt_num, mb_to_gb, MB_PER_GB, SECONDS_PER_DAY, SECONDS_PER_HOUR, SECONDS_PER_WEEK};

#[derive(Debug, Error)]
pub enum OwnerError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("trust service does not offer {EVALUATE_TRUST}")]
    NoTrustTool,
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("no collaborator satisfies the task ({} excluded)", .excluded.len())]
    NoCollaborators { excluded: Vec<Exclusion> },
    /// Work could not be placed. `dispatched` lists what was accepted before
    /// every remaining collaborator refused.
    #[error("{unplaced_mb} MB could not be placed with any collaborator")]
    Unplaced { unplaced_mb: f64, dispatched: Vec<Dispatched> },
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualifier {
    Fast,
    Accurate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub task_type: String,
    pub data_size_mb: f64,
    pub required_accuracy: f64,
    #[serde(default)]
    pub qualifiers: BTreeSet<Qualifier>,
    /// Seconds.
    #[serde(default = "default_window")]
    pub history_window: f64,
}

fn default_window() -> f64 {
    SECONDS_PER_WEEK
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), OwnerError> {
        if !(self.data_size_mb > 0.0 && self.data_size_mb.is_finite()) {
            return Err(OwnerError::InvalidSpec("data_size_mb must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.required_accuracy) {
            return Err(OwnerError::InvalidSpec("required_accuracy must lie in [0, 1]".into()));
        }
        if !(self.history_window > 0.0) || self.task_type.trim().is_empty() {
            return Err(OwnerError::InvalidSpec("history window and task type are required".into()));
        }
        Ok(())
    }

    pub fn is(&self, q: Qualifier) -> bool {
        self.qualifiers.contains(&q)
    }
}

fn size_phrase(mb: f64) -> String {
    if mb >= MB_PER_GB && mb % MB_PER_GB == 0.0 {
        format!("{} GB", fmt_num(mb / MB_PER_GB))
    } else {
        format!("{} MB", fmt_num(mb))
    }
}

fn window_phrase(secs: f64) -> String {
    let unit = |n: f64, name: &str| {
        if n == 1.0 {
            format!("the past {name}")
        } else {
            format!("the past {} {name}s", fmt_num(n))
        }
    };
    for (len, name) in [(SECONDS_PER_WEEK, "week"), (SECONDS_PER_DAY, "day")] {
        if secs % len == 0.0 {
            return unit(secs / len, name);
        }
    }
    unit(secs / SECONDS_PER_HOUR, "hour")
}

/// The owner's textual description of `spec`.
pub fn render_description(spec: &TaskSpec, owner_id: &str) -> TaskDescription {
    let manner = match (spec.is(Qualifier::Fast), spec.is(Qualifier::Accurate)) {
        (true, true) => "fast and accurate",
        (true, false) => "fast",
        (false, true) => "accurate",
        (false, false) => "reliable",
    };
    let text = format!(
        "I have a {} {} task that requires collaborative assistance for completion. \
         I am looking for collaborators who have demonstrated consistently {manner} task execution over {}",
        size_phrase(spec.data_size_mb),
        spec.task_type,
        window_phrase(spec.history_window)
    );
    TaskDescription {
        text,
        owner_id: owner_id.to_string(),
        data_size_mb: Some(spec.data_size_mb),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub device_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub selected: Vec<String>,
    pub excluded: Vec<Exclusion>,
}

/// Why `entry` cannot serve `spec`, if it cannot.
fn exclusion_reason(entry: &crate::engine::TrustEntry, spec: &TaskSpec) -> Option<String> {
    let r = &entry.resource;
    let mut reasons = Vec::new();
    if spec.is(Qualifier::Fast) {
        match r.cpu_class {
            Some(CpuClass::High) => {}
            Some(class) => reasons.push(format!("{class} CPU processing speed")),
            None => reasons.push("no CPU information".to_string()),
        }
    }
    let required_gb = mb_to_gb(spec.data_size_mb);
    match r.available_storage_gb {
        Some(gb) if gb >= required_gb => {}
        Some(gb) => reasons.push(format!(
            "insufficient storage ({} GB available, {} GB required)",
            fmt_num(gb),
            fmt_num(required_gb)
        )),
        None => reasons.push("no storage information".to_string()),
    }
    (!reasons.is_empty()).then(|| reasons.join("; "))
}

/// Keeps every entry that meets the spec's resource needs, fastest first
/// (ties by device id).
pub fn select(report: &TrustReport, spec: &TaskSpec) -> Result<SelectionDecision, OwnerError> {
    let mut keep = Vec::new();
    let mut excluded = Vec::new();
    for e in &report.entries {
        match exclusion_reason(e, spec) {
            Some(reason) => excluded.push(Exclusion {
                device_id: e.device_id.clone(),
                reason,
            }),
            None => keep.push((e.historical.mean_processing_speed.unwrap_or(0.0), e.device_id.clone())),
        }
    }
    if keep.is_empty() {
        return Err(OwnerError::NoCollaborators { excluded });
    }
    keep.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(SelectionDecision {
        selected: keep.into_iter().map(|(_, id)| id).collect(),
        excluded,
    })
}

/// Splits `total` MB in proportion to `weights` on whole MB by the largest
/// remainder method; the sub-MB leftover goes to the first largest weight.
/// Non-positive weight sums fall back to equal shares.
pub fn split_mb(total: f64, weights: &[f64]) -> Vec<f64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w.max(0.0)).collect()
    } else {
        vec![1.0; weights.len()]
    };
    let sum: f64 = weights.iter().sum();
    let units = total.floor();
    let leftover = total - units;
    let quotas: Vec<f64> = weights.iter().map(|w| units * w / sum).collect();
    let mut shares: Vec<f64> = quotas.iter().map(|q| q.floor()).collect();
    let mut missing = (units - shares.iter().sum::<f64>()).round() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - shares[b]).total_cmp(&(quotas[a] - shares[a])).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        shares[i] += 1.0;
        missing -= 1;
    }
    let biggest = (0..weights.len())
        .reduce(|best, i| if weights[i] > weights[best] { i } else { best })
        .expect("non-empty");
    shares[biggest] += leftover;
    shares
}

/// A collaborator the owner may hand work to.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub device_id: String,
    pub address: Locator,
    /// Relative share of work.
    pub weight: f64,
}

/// Candidates for the selected devices, weighted by historical speed when
/// the report has it.
pub fn candidates(decision: &SelectionDecision, report: &TrustReport) -> Vec<Candidate> {
    decision
        .selected
        .iter()
        .filter_map(|id| report.entry(id))
        .map(|e| Candidate {
            device_id: e.device_id.clone(),
            address: e.agent_address.clone(),
            weight: e.historical.mean_processing_speed.unwrap_or(1.0),
        })
        .collect()
}

pub struct TaskOwner {
    owner_id: String,
    network: Network,
    trust_service: Locator,
    conns: Mutex<BTreeMap<String, BTreeMap<String, Connection>>>,
    next_subtask: Mutex<BTreeMap<String, u32>>,
}

impl std::fmt::Debug for TaskOwner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskOwner").field("owner_id", &self.owner_id).finish_non_exhaustive()
    }
}

impl TaskOwner {
    pub fn new(owner_id: impl Into<String>, network: Network, trust_service: Locator) -> Self {
        Self {
            owner_id: owner_id.into(),
            network,
            trust_service,
            conns: Mutex::default(),
            next_subtask: Mutex::default(),
        }
    }

    pub fn owner_id(&self) -> &str {
        &self.owner_id
    }

    /// Describes the task to the trust service and returns its report.
    pub fn request_trust(&self, spec: &TaskSpec) -> Result<TrustReport, OwnerError> {
        spec.validate()?;
        let desc = render_description(spec, &self.owner_id);
        let conn = self.network.connect_tagged(&self.trust_service, &task_tag(&spec.task_id))?;
        let result = (|| {
            if conn.list_tools()?.tool(EVALUATE_TRUST).is_none() {
                return Err(OwnerError::NoTrustTool);
            }
            let v = conn.call_tool(EVALUATE_TRUST, json!({"description": desc.text, "owner_id": self.owner_id}))?;
            serde_json::from_value(v).map_err(|e| OwnerError::Malformed(e.to_string()))
        })();
        conn.close();
        result
    }

    fn connection(&self, task_id: &str, c: &Candidate) -> Result<Connection, WireError> {
        let mut conns = self.conns.lock().unwrap();
        let per_task = conns.entry(task_id.to_string()).or_default();
        if let Some(conn) = per_task.get(&c.device_id).filter(|c| c.state() == taas_wire::EndpointState::Connected) {
            return Ok(conn.clone());
        }
        let conn = self.network.connect_tagged(&c.address, &task_tag(task_id))?;
        if conn.list_tools()?.tool(RECEIVE_TASK).is_none() {
            conn.close();
            return Err(WireError::Tool(format!("{} does not offer {RECEIVE_TASK}", c.device_id)));
        }
        per_task.insert(c.device_id.clone(), conn.clone());
        Ok(conn)
    }

    fn next_subtask_id(&self, task_id: &str) -> String {
        let mut next = self.next_subtask.lock().unwrap();
        let n = next.entry(task_id.to_string()).or_insert(0);
        *n += 1;
        format!("{task_id}/s{n}")
    }

    /// Places `amount` MB of `spec` on `pool`, splitting by weight. Shares a
    /// collaborator refuses are split again over those that accepted.
    pub fn distribute(&self, spec: &TaskSpec, pool: &[Candidate], amount: f64) -> Result<Vec<Dispatched>, OwnerError> {
        let mut pool: Vec<Candidate> = pool.to_vec();
        let mut pending = amount;
        let mut out = Vec::new();
        while pending > 1e-9 {
            if pool.is_empty() {
                return Err(OwnerError::Unplaced {
                    unplaced_mb: pending,
                    dispatched: out,
                });
            }
            let shares = split_mb(pending, &pool.iter().map(|c| c.weight).collect::<Vec<_>>());
            let mut refused = 0.0;
            let mut accepted = Vec::new();
            for (c, share) in pool.iter().zip(shares) {
                if share <= 0.0 {
                    accepted.push(c.clone());
                    continue;
                }
                let subtask_id = self.next_subtask_id(&spec.task_id);
                let assignment = SubtaskAssignment {
                    task_id: spec.task_id.clone(),
                    subtask_id: subtask_id.clone(),
                    task_type: spec.task_type.clone(),
                    data_size_mb: share,
                    required_accuracy: spec.required_accuracy,
                };
                let reply = self.connection(&spec.task_id, c).and_then(|conn| {
                    let mut args = serde_json::to_value(&assignment).expect("assignment serializes");
                    args["action"] = json!("assign");
                    conn.call_tool(RECEIVE_TASK, args)
                });
                match reply.map(serde_json::from_value::<AssignReply>) {
                    Ok(Ok(AssignReply::Accepted {
                        declared_speed_mb_s, ..
                    })) => {
                        out.push(Dispatched {
                            device_id: c.device_id.clone(),
                            address: c.address.clone(),
                            subtask_id,
                            data_size_mb: share,
                            declared_speed_mb_s,
                        });
                        accepted.push(c.clone());
                    }
                    other => {
                        log::info!("{}: {} refused {share} MB: {other:?}", spec.task_id, c.device_id);
                        refused += share;
                    }
                }
            }
            pending = refused;
            pool = accepted;
        }
        Ok(out)
    }

    /// Splits the whole task over the selected collaborators.
    pub fn assign(&self, spec: &TaskSpec, decision: &SelectionDecision, report: &TrustReport) -> Result<Vec<Dispatched>, OwnerError> {
        self.assign_to(spec, &candidates(decision, report))
    }

    pub fn assign_to(&self, spec: &TaskSpec, pool: &[Candidate]) -> Result<Vec<Dispatched>, OwnerError> {
        spec.validate()?;
        if pool.is_empty() {
            return Err(OwnerError::NoCollaborators { excluded: Vec::new() });
        }
        self.distribute(spec, pool, spec.data_size_mb)
    }

    /// Hands the unprocessed part of a terminated collaborator's work to the
    /// `remaining` ones. Fails when nobody is left to take it.
    pub fn handle_termination(
        &self,
        spec: &TaskSpec,
        event: &MonitorEvent,
        remaining: &[Candidate],
    ) -> Result<Vec<Dispatched>, OwnerError> {
        let amount: f64 = event.subtasks.iter().map(|s| s.remaining_mb()).sum();
        if amount <= 1e-9 {
            return Ok(Vec::new());
        }
        self.distribute(spec, remaining, amount)
    }

    /// Closes the owner's connections for the task.
    pub fn close_task(&self, task_id: &str) {
        if let Some(conns) = self.conns.lock().unwrap().remove(task_id) {
            for c in conns.values() {
                c.close();
            }
        }
        self.next_subtask.lock().unwrap().remove(task_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(q: &[Qualifier]) -> TaskSpec {
        TaskSpec {
            task_id: "t1".into(),
            task_type: "facial recognition".into(),
            data_size_mb: 1024.0,
            required_accuracy: 0.95,
            qualifiers: q.iter().copied().collect(),
            history_window: SECONDS_PER_WEEK,
        }
    }

    #[test]
    fn worked_description() {
        let d = render_description(&spec(&[Qualifier::Fast, Qualifier::Accurate]), "a_i");
        assert_eq!(
            d.text,
            "I have a 1 GB facial recognition task that requires collaborative assistance for completion. I am looking for collaborators who have demonstrated consistently fast and accurate task execution over the past week"
        );
    }

    #[test]
    fn description_variants() {
        let d = render_description(&spec(&[Qualifier::Accurate]), "a_i");
        assert!(!d.text.contains("fast"));
        let mut s = spec(&[]);
        s.data_size_mb = 500.0;
        s.history_window = 3.0 * SECONDS_PER_DAY;
        let d = render_description(&s, "a_i");
        assert!(d.text.contains("a 500 MB facial"), "{}", d.text);
        assert!(d.text.ends_with("consistently reliable task execution over the past 3 days"));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_mb(1024.0, &[12.0, 12.0]), vec![512.0, 512.0]);
        assert_eq!(split_mb(1024.0, &[12.0, 6.0]), vec![683.0, 341.0]);
        assert_eq!(split_mb(1024.0, &[5.0]), vec![1024.0]);
        assert_eq!(split_mb(10.0, &[1.0, 1.0, 1.0]), vec![4.0, 3.0, 3.0]);
        assert_eq!(split_mb(256.0, &[0.0, 0.0]), vec![128.0, 128.0]);
        let s = split_mb(100.5, &[1.0, 3.0]);
        assert_eq!(s, vec![25.0, 75.5]);
        assert!(split_mb(5.0, &[]).is_empty());
    }
}
