//! Discrete-event execution of one scenario under one selection strategy.
//!
//! Time only moves on the virtual clock: to the next task arrival or the
//! next monitoring round, whichever comes first. Everything after selection
//! (splitting, assignment, monitoring, reassignment and reclaim) is the same
//! code for every strategy.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taas_core::owner::{candidates, select, Candidate, OwnerError, TaskOwner, TaskSpec};
use taas_core::service::{resource_query, task_tag, Dispatched, EvalStage, ServiceConfig, Verdict};
use taas_core::{Clock, Deployment, VirtualClock};
use taas_wire::{Locator, Network, WireTap};

use crate::metrics::{RunMetrics, TaskOutcome};
use crate::scenario::Scenario;
use crate::strategy::{baseline_random, baseline_reputation, Strategy};
use crate::trace::{calls_from_frames, TraceEvent};
use crate::SimError;

/// Upper bound on monitoring rounds, as a guard against a stuck scenario.
const MAX_ROUNDS: usize = 10_000_000;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub strategy: String,
    pub metrics: RunMetrics,
    pub tasks: Vec<TaskOutcome>,
    pub trace: Vec<TraceEvent>,
}

/// The collaborators a strategy picked for one task.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub pool: Vec<Candidate>,
    /// Devices contacted while evaluating, beyond the pool itself.
    pub queried: Vec<String>,
    /// Why nothing could be selected, if so.
    pub failure: Option<String>,
}

/// The one step in which strategies differ.
pub trait Selector {
    fn name(&self) -> String;
    fn select(&mut self, dep: &Deployment, owner: &TaskOwner, spec: &TaskSpec, index: usize) -> Selection;
}

pub struct TaasSelector;

impl Selector for TaasSelector {
    fn name(&self) -> String {
        Strategy::Taas.name().into()
    }

    fn select(&mut self, dep: &Deployment, owner: &TaskOwner, spec: &TaskSpec, _index: usize) -> Selection {
        let report = match owner.request_trust(spec) {
            Ok(r) => r,
            Err(e) => {
                return Selection {
                    failure: Some(e.to_string()),
                    ..Default::default()
                }
            }
        };
        let queried = dep
            .service
            .traces()
            .pop()
            .filter(|t| resource_query(&t.requirements).is_some())
            .and_then(|t| t.stages.into_iter().find(|s| s.stage == EvalStage::HistoryDone))
            .map(|s| s.candidates)
            .unwrap_or_default();
        match select(&report, spec) {
            Ok(decision) => Selection {
                pool: candidates(&decision, &report),
                queried,
                failure: None,
            },
            Err(e) => Selection {
                pool: Vec::new(),
                queried,
                failure: Some(e.to_string()),
            },
        }
    }
}

/// Baseline selection over every device supporting the task type, `k[i]`
/// devices for the i-th task, split evenly.
pub struct BaselineSelector {
    strategy: Strategy,
    k: Vec<usize>,
    rng: ChaCha8Rng,
}

impl BaselineSelector {
    pub fn new(strategy: Strategy, seed: u64, k: Vec<usize>) -> Self {
        Self {
            strategy,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Selector for BaselineSelector {
    fn name(&self) -> String {
        self.strategy.name().into()
    }

    fn select(&mut self, dep: &Deployment, _owner: &TaskOwner, spec: &TaskSpec, index: usize) -> Selection {
        let supporting = dep.registry.devices_supporting(&spec.task_type);
        let k = self.k.get(index).copied().unwrap_or(0);
        let picked = match self.strategy {
            Strategy::Random => baseline_random(&supporting, k, &mut self.rng),
            _ => baseline_reputation(&supporting, k, &dep.registry.all_records()),
        };
        match picked {
            Ok(p) if !p.is_empty() => Selection {
                pool: p
                    .into_iter()
                    .map(|d| Candidate {
                        device_id: d.device_id,
                        address: d.agent_address,
                        weight: 1.0,
                    })
                    .collect(),
                ..Default::default()
            },
            Ok(_) => Selection {
                failure: Some("no collaborators to pick".into()),
                ..Default::default()
            },
            Err(e) => Selection {
                failure: Some(e.to_string()),
                ..Default::default()
            },
        }
    }
}

/// Always the same devices, in the given order and with equal weight.
pub struct FixedSelector(pub Vec<String>);

impl Selector for FixedSelector {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn select(&mut self, dep: &Deployment, _owner: &TaskOwner, _spec: &TaskSpec, _index: usize) -> Selection {
        let pool = self
            .0
            .iter()
            .filter_map(|id| dep.registry.device(id))
            .map(|d| Candidate {
                device_id: d.device_id,
                address: d.agent_address,
                weight: 1.0,
            })
            .collect();
        Selection {
            pool,
            ..Default::default()
        }
    }
}

fn trust_locator() -> Locator {
    Locator::mem("trust")
}

/// Starts the scenario's fleet with its seeded history, stopped at `start`.
pub fn deploy(scenario: &Scenario, network: Network) -> Result<(Deployment, Arc<VirtualClock>), SimError> {
    let clock = Arc::new(VirtualClock::new(scenario.start));
    let mut config = ServiceConfig::default();
    config.monitor.report_interval = scenario.tick_s;
    let mut dep = Deployment::start(network, clock.clone(), trust_locator(), config)?;
    for d in &scenario.devices {
        dep.add_device(d.clone(), Locator::mem(&d.device_id))?;
    }
    dep.seed_history(scenario.history_records())?;
    Ok((dep, clock))
}

/// How many collaborators TaaS selects for each task, evaluated against the
/// seeded history. Baselines pick this many.
pub fn taas_selection_sizes(scenario: &Scenario) -> Result<Vec<usize>, SimError> {
    let (dep, _clock) = deploy(scenario, Network::new())?;
    let sizes = scenario
        .tasks
        .iter()
        .map(|t| {
            let owner = dep.owner(&t.owner);
            let n = owner
                .request_trust(&t.spec)
                .ok()
                .and_then(|r| select(&r, &t.spec).ok())
                .map_or(0, |d| d.selected.len());
            owner.close_task(&t.spec.task_id);
            n
        })
        .collect();
    dep.shutdown();
    Ok(sizes)
}

pub fn selector_for(scenario: &Scenario, strategy: Strategy) -> Result<Box<dyn Selector>, SimError> {
    Ok(match strategy {
        Strategy::Taas => Box::new(TaasSelector),
        s => Box::new(BaselineSelector::new(s, scenario.seed, taas_selection_sizes(scenario)?)),
    })
}

pub fn run(scenario: &Scenario, strategy: Strategy) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let mut selector = selector_for(scenario, strategy)?;
    run_with(scenario, selector.as_mut())
}

struct Active {
    index: usize,
    arrival: f64,
    spec: TaskSpec,
    owner: TaskOwner,
    pool: Vec<Candidate>,
    involved: BTreeSet<String>,
    executors: BTreeSet<String>,
    completed_mb: f64,
    kept_mb: f64,
    correct_mb: f64,
    last_finish: f64,
    failed: Option<String>,
}

struct Run<'a> {
    dep: Deployment,
    clock: Arc<VirtualClock>,
    tap: Arc<WireTap>,
    trace: Vec<TraceEvent>,
    outcomes: Vec<(usize, TaskOutcome)>,
    selector: &'a mut dyn Selector,
}

impl Run<'_> {
    fn now(&self) -> f64 {
        self.clock.now()
    }

    fn drain(&mut self, current: Option<&str>) {
        let frames = self.tap.frames();
        self.tap.clear();
        let at = self.now();
        self.trace.extend(calls_from_frames(&frames, at, current, &trust_locator()));
    }

    fn dispatched(&mut self, task: &mut Active, d: &[Dispatched]) {
        let at = self.now();
        for x in d {
            self.trace.push(TraceEvent::Dispatched {
                at,
                task_id: task.spec.task_id.clone(),
                device_id: x.device_id.clone(),
                subtask_id: x.subtask_id.clone(),
                data_size_mb: x.data_size_mb,
            });
        }
        self.dep.service.monitor_execution(&task.spec.task_id, &task.spec.task_type, d);
    }

    fn place(&mut self, task: &mut Active, result: Result<Vec<Dispatched>, OwnerError>) {
        match result {
            Ok(d) => self.dispatched(task, &d),
            Err(OwnerError::Unplaced { unplaced_mb, dispatched }) => {
                self.dispatched(task, &dispatched);
                task.failed = Some(format!("{unplaced_mb} MB could not be placed"));
            }
            Err(e) => task.failed = Some(e.to_string()),
        }
    }

    fn start(&mut self, index: usize, arrival: f64, owner_id: &str, spec: &TaskSpec) -> Active {
        let at = self.now();
        self.trace.push(TraceEvent::TaskArrived {
            at,
            task_id: spec.task_id.clone(),
            owner: owner_id.to_string(),
        });
        let owner = self.dep.owner(owner_id);
        let sel = self.selector.select(&self.dep, &owner, spec, index);
        self.drain(Some(&spec.task_id));
        let pool_ids: Vec<String> = sel.pool.iter().map(|c| c.device_id.clone()).collect();
        self.trace.push(TraceEvent::Selected {
            at,
            task_id: spec.task_id.clone(),
            strategy: self.selector.name(),
            pool: pool_ids.clone(),
            queried: sel.queried.clone(),
        });
        let mut task = Active {
            index,
            arrival,
            spec: spec.clone(),
            owner,
            pool: sel.pool.clone(),
            involved: sel.queried.iter().cloned().chain(pool_ids).collect(),
            executors: BTreeSet::new(),
            completed_mb: 0.0,
            kept_mb: 0.0,
            correct_mb: 0.0,
            last_finish: arrival,
            failed: sel.failure,
        };
        if task.failed.is_none() {
            let result = task.owner.assign_to(spec, &sel.pool);
            self.place(&mut task, result);
        }
        self.drain(Some(&spec.task_id));
        task
    }

    fn poll(&mut self, active: &mut [Active]) {
        let events = self.dep.service.poll();
        self.drain(None);
        for e in events {
            self.trace.push(TraceEvent::Monitor(e.clone()));
            let Some(task) = active.iter_mut().find(|t| t.spec.task_id == e.task_id) else {
                continue;
            };
            match e.verdict {
                Verdict::Completed => {
                    for s in &e.subtasks {
                        task.completed_mb += s.data_size_mb;
                        task.correct_mb += s.accuracy.unwrap_or(0.0) * s.data_size_mb;
                        task.last_finish = task.last_finish.max(s.finished_at.unwrap_or(e.at));
                    }
                    task.executors.insert(e.device_id.clone());
                }
                v if v.is_termination() => {
                    for s in &e.subtasks {
                        task.kept_mb += s.progress_mb;
                        task.correct_mb += s.accuracy.unwrap_or(0.0) * s.progress_mb;
                    }
                    task.pool.retain(|c| c.device_id != e.device_id);
                    if task.failed.is_none() {
                        let result = task.owner.handle_termination(&task.spec, &e, &task.pool);
                        self.place(task, result);
                    }
                    self.drain(None);
                }
                _ => {}
            }
        }
    }

    fn finish(&mut self, mut task: Active) {
        let id = task.spec.task_id.clone();
        if let Some(reason) = &task.failed {
            self.trace.push(TraceEvent::Failed {
                at: self.now(),
                task_id: id.clone(),
                reason: reason.clone(),
            });
        }
        task.owner.close_task(&id);
        for e in self.dep.service.reclaim(&id) {
            for s in &e.subtasks {
                task.kept_mb += s.progress_mb;
                task.correct_mb += s.accuracy.unwrap_or(0.0) * s.progress_mb;
            }
            self.trace.push(TraceEvent::Monitor(e));
        }
        self.drain(Some(&id));
        let processed = task.completed_mb + task.kept_mb;
        let realized_accuracy = (processed > 0.0).then(|| task.correct_mb / processed);
        let mut outcome = TaskOutcome {
            task_id: id.clone(),
            arrival: task.arrival,
            completed: false,
            success: false,
            data_size_mb: task.spec.data_size_mb,
            completed_mb: task.completed_mb,
            kept_mb: task.kept_mb,
            realized_accuracy,
            completion_time: None,
            involved: task.involved.into_iter().collect(),
            executors: task.executors.into_iter().collect(),
            open_connections: self.dep.network.live_connections_tagged(&task_tag(&id)),
        };
        outcome.completed = task.failed.is_none() && outcome.conserved();
        outcome.success = outcome.completed && realized_accuracy.is_some_and(|a| a >= task.spec.required_accuracy);
        if outcome.completed {
            outcome.completion_time = Some(task.last_finish - task.arrival);
        }
        self.trace.push(TraceEvent::TaskEnded {
            at: self.now(),
            outcome: outcome.clone(),
        });
        self.outcomes.push((task.index, outcome));
    }
}

/// Runs `scenario` with an arbitrary selection step.
pub fn run_with(scenario: &Scenario, selector: &mut dyn Selector) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let network = Network::new();
    let tap = WireTap::new();
    network.set_tap(Some(tap.clone()));
    let (dep, clock) = deploy(scenario, network)?;
    tap.clear();
    let mut run = Run {
        dep,
        clock,
        tap,
        trace: Vec::new(),
        outcomes: Vec::new(),
        selector,
    };
    let arrivals: Vec<f64> = scenario.tasks.iter().map(|t| scenario.start + t.arrival).collect();
    let mut next_task = 0;
    let mut next_poll: Option<f64> = None;
    let mut active: Vec<Active> = Vec::new();
    let mut rounds = 0;
    loop {
        let arrival = arrivals.get(next_task).copied();
        let t = match (arrival, next_poll) {
            (None, None) => break,
            (Some(a), None) => a,
            (None, Some(p)) => p,
            (Some(a), Some(p)) => a.min(p),
        };
        if t > run.now() {
            run.clock.set(t);
        }
        if arrival == Some(t) {
            while arrivals.get(next_task) == Some(&t) {
                let ta = &scenario.tasks[next_task];
                let task = run.start(next_task, t, &ta.owner, &ta.spec);
                active.push(task);
                next_task += 1;
            }
            next_poll.get_or_insert(t + scenario.tick_s);
        } else {
            rounds += 1;
            if rounds > MAX_ROUNDS {
                return Err(SimError::Stalled(t));
            }
            run.poll(&mut active);
            next_poll = Some(t + scenario.tick_s);
        }
        let (done, still): (Vec<Active>, Vec<Active>) = active
            .into_iter()
            .partition(|a| a.failed.is_some() || run.dep.service.is_finished(&a.spec.task_id));
        active = still;
        for task in done {
            run.finish(task);
        }
        if active.is_empty() {
            next_poll = None;
        }
    }
    run.dep.shutdown();
    let mut outcomes = run.outcomes;
    outcomes.sort_by_key(|(i, _)| *i);
    let tasks: Vec<TaskOutcome> = outcomes.into_iter().map(|(_, o)| o).collect();
    Ok(RunOutput {
        strategy: run.selector.name(),
        metrics: RunMetrics::from_outcomes(&tasks),
        tasks,
        trace: run.trace,
    })
}
