#![allow(dead_code)]

use std::sync::Arc;

use taas_core::clock::VirtualClock;
use taas_core::device::DeviceProfile;
use taas_core::registry::{Outcome, PerformanceRecord};
use taas_core::service::ServiceConfig;
use taas_core::units::SECONDS_PER_WEEK;
use taas_core::Deployment;
use taas_wire::{Locator, Network};

pub const FACE: &str = "facial recognition";
pub const VIRUS: &str = "virus scanning";
pub const NOW: f64 = SECONDS_PER_WEEK;

pub fn profile(id: &str, ghz: f64, gb: f64, speeds: &[(&str, f64, f64)]) -> DeviceProfile {
    DeviceProfile {
        device_id: id.into(),
        cpu_ghz: ghz,
        total_storage_gb: gb,
        nominal_speed: speeds.iter().map(|(t, s, _)| (t.to_string(), *s)).collect(),
        accuracy: speeds.iter().map(|(t, _, a)| (t.to_string(), *a)).collect(),
        fault_plan: Vec::new(),
        noise: None,
    }
}

/// `n` records spread evenly over the week before `NOW`.
pub fn history(id: &str, ty: &str, n: usize, speed: f64, acc: f64) -> Vec<PerformanceRecord> {
    (0..n)
        .map(|i| PerformanceRecord {
            timestamp: NOW - SECONDS_PER_WEEK * (i as f64 + 1.0) / (n as f64 + 1.0),
            task_type: ty.into(),
            device_id: id.into(),
            processing_speed: speed,
            completion_accuracy: acc,
            outcome: Outcome::Completed,
        })
        .collect()
}

pub struct Fixture {
    pub clock: Arc<VirtualClock>,
    pub dep: Deployment,
}

pub fn empty(network: Network) -> Fixture {
    let clock = Arc::new(VirtualClock::new(NOW));
    let dep = Deployment::start(network, clock.clone(), Locator::mem("trust"), ServiceConfig::default()).unwrap();
    Fixture { clock, dep }
}

/// The three-device scenario: a_j 2 GHz / 4 GB / 10 MB/s, a_k 6 GHz / 8 GB /
/// 12 MB/s, a_l 6 GHz / 4 GB / 12 MB/s, all perfectly accurate, plus a
/// virus-scanning-only device that must never be involved.
pub fn worked_example(network: Network) -> Fixture {
    let mut f = empty(network);
    for (id, ghz, gb, speed) in [("a_j", 2.0, 4.0, 10.0), ("a_k", 6.0, 8.0, 12.0), ("a_l", 6.0, 4.0, 12.0)] {
        f.dep
            .add_device(profile(id, ghz, gb, &[(FACE, speed, 1.0)]), Locator::mem(id))
            .unwrap();
        f.dep.seed_history(history(id, FACE, 5, speed, 1.0)).unwrap();
    }
    f.dep
        .add_device(profile("a_m", 6.0, 8.0, &[(VIRUS, 20.0, 1.0)]), Locator::mem("a_m"))
        .unwrap();
    f.dep.seed_history(history("a_m", VIRUS, 5, 20.0, 1.0)).unwrap();
    f
}

use taas_core::owner::{candidates, select, Candidate, TaskOwner, TaskSpec};
use taas_core::service::{MonitorEvent, Verdict};

pub struct Executed {
    pub events: Vec<MonitorEvent>,
    pub failed: bool,
    pub finished_at: f64,
}

/// Drives the monitor until every subtask is recorded, reassigning work
/// from terminated collaborators.
pub fn execute(f: &Fixture, owner: &TaskOwner, spec: &TaskSpec, mut pool: Vec<Candidate>) -> Executed {
    let service = &f.dep.service;
    let dispatched = owner.assign_to(spec, &pool).unwrap();
    service.monitor_execution(&spec.task_id, &spec.task_type, &dispatched);
    let mut events = Vec::new();
    let mut failed = false;
    let mut finished_at = f.clock.now_value();
    for _ in 0..100_000 {
        if service.is_finished(&spec.task_id) {
            break;
        }
        f.clock.advance(service.config().monitor.report_interval);
        for e in service.poll() {
            if e.verdict == Verdict::Completed {
                for s in &e.subtasks {
                    finished_at = finished_at.max(s.finished_at.unwrap());
                }
            }
            if e.verdict.is_termination() {
                pool.retain(|c| c.device_id != e.device_id);
                match owner.handle_termination(spec, &e, &pool) {
                    Ok(more) => service.monitor_execution(&spec.task_id, &spec.task_type, &more),
                    Err(_) => failed = true,
                }
            }
            events.push(e);
        }
        if failed {
            break;
        }
    }
    owner.close_task(&spec.task_id);
    events.extend(service.reclaim(&spec.task_id));
    Executed {
        events,
        failed,
        finished_at,
    }
}

pub fn trusted_pool(owner: &TaskOwner, spec: &TaskSpec) -> Vec<Candidate> {
    let report = owner.request_trust(spec).unwrap();
    let decision = select(&report, spec).unwrap();
    candidates(&decision, &report)
}

pub trait ClockExt {
    fn now_value(&self) -> f64;
}

impl ClockExt for VirtualClock {
    fn now_value(&self) -> f64 {
        use taas_core::Clock;
        self.now()
    }
}
