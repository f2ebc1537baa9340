//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p taas-sim --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use taas_core::device::FaultEvent;
use taas_core::interpreter::{ExternalInterpreter, InterpretError, InterpretSource, DEFAULT_PROMPT};
use taas_core::owner::{render_description, select, Qualifier, TaskSpec};
use taas_core::registry::Registry;
use taas_core::requirements::{CpuClass, HistoryDimension, ResourceRequirement, TaskRequirements};
use taas_core::service::Verdict;
use taas_core::units::SECONDS_PER_WEEK;
use taas_core::{Deployment, DeviceProfile, TrustReport, TrustService, VirtualClock};
use taas_sim::runner::{deploy, run_with, FixedSelector};
use taas_sim::{aggregate, run, run_matrix, Aggregate, Cell, FleetTemplate, HistorySpec, MatrixConfig, Scenario, Strategy, TaskArrival, TraceEvent};
use taas_wire::{CapturedFrame, Direction, Envelope, Locator, Network, RpcError, WireTap};

const FACE: &str = "facial recognition";
const VIRUS: &str = "virus scanning";
const M: &str = "I have a 1 GB facial recognition task that requires collaborative assistance for completion. I am looking for collaborators who have demonstrated consistently fast and accurate task execution over the past week";
const WORKED: &str = include_str!("../configs/worked_example.toml");

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn face_spec(task_id: &str, mb: f64) -> TaskSpec {
    TaskSpec {
        task_id: task_id.into(),
        task_type: FACE.into(),
        data_size_mb: mb,
        required_accuracy: 0.95,
        qualifiers: BTreeSet::from([Qualifier::Fast, Qualifier::Accurate]),
        history_window: SECONDS_PER_WEEK,
    }
}

// ---------------------------------------------------------------------------
// Golden worked example.
// ---------------------------------------------------------------------------

fn golden() -> Check {
    let started = Instant::now();
    let scenario = Scenario::from_toml(WORKED).map_err(|e| e.to_string())?;
    let (dep, _clock) = deploy(&scenario, Network::new()).map_err(|e| e.to_string())?;
    let spec = face_spec("face-1", 1024.0);
    ensure(render_description(&spec, "a_i").text == M, || "description differs from the worked text".into())?;
    let report = dep.owner("a_i").request_trust(&spec).map_err(|e| e.to_string())?;
    ensure(report.device_ids() == ["a_j", "a_k", "a_l"], || format!("entries {:?}", report.device_ids()))?;
    let expect = [
        ("a_j", "task processing speed is 10 MB/second, task completion accuracy is 100%", "CPU is 2 GHz (moderate processing speed), and the available storage is 4 GB (> 1 GB required)"),
        ("a_k", "task processing speed is 12 MB/second, task completion accuracy is 100%", "CPU is 6 GHz (high processing speed), and the available storage is 8 GB (> 1 GB required)"),
        ("a_l", "task processing speed is 12 MB/second, task completion accuracy is 100%", "CPU is 6 GHz (high processing speed), and the available storage is 4 GB (> 1 GB required)"),
    ];
    for (id, his, res) in expect {
        let e = report.entry(id).ok_or(format!("no entry for {id}"))?;
        ensure(e.semantic_his == his, || format!("{id} T_his: {:?}", e.semantic_his))?;
        ensure(e.semantic_res == res, || format!("{id} T_res: {:?}", e.semantic_res))?;
    }
    let decision = select(&report, &spec).map_err(|e| e.to_string())?;
    ensure(decision.selected == ["a_k", "a_l"], || format!("selected {:?}", decision.selected))?;
    ensure(
        decision.excluded.len() == 1
            && decision.excluded[0].device_id == "a_j"
            && decision.excluded[0].reason == "moderate CPU processing speed",
        || format!("excluded {:?}", decision.excluded),
    )?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("exact match in {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

// ---------------------------------------------------------------------------
// Selection accuracy against a brute-force oracle.
// ---------------------------------------------------------------------------

struct Planted {
    scenario: Scenario,
    size_mb: f64,
}

fn planted(seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8);
    let size_mb = [512.0, 1024.0, 2048.0, 3072.0][rng.gen_range(0..4)];
    let mut devices = Vec::new();
    let mut history = Vec::new();
    for i in 0..n {
        let id = format!("p{i}");
        // Ranges straddle every threshold so both sides of each gate show up.
        let speed: f64 = rng.gen_range(2.0..12.0);
        let acc: f64 = rng.gen_range(0.85..1.0);
        devices.push(DeviceProfile {
            device_id: id.clone(),
            cpu_ghz: rng.gen_range(1.0..7.0),
            total_storage_gb: rng.gen_range(0.5..8.0),
            nominal_speed: [(FACE.to_string(), speed.max(0.5))].into(),
            accuracy: [(FACE.to_string(), acc)].into(),
            fault_plan: Vec::new(),
            noise: None,
        });
        history.push(HistorySpec {
            device_id: id,
            task_type: FACE.into(),
            count: rng.gen_range(0..7),
            speed_mb_s: [(speed - 1.5).max(0.0), speed + 1.5],
            accuracy: [(acc - 0.03).max(0.0), (acc + 0.03).min(1.0)],
            window_s: SECONDS_PER_WEEK,
        });
    }
    Planted {
        scenario: Scenario {
            seed,
            tick_s: 1.0,
            start: SECONDS_PER_WEEK,
            strategy: Strategy::Taas,
            devices,
            history,
            tasks: Vec::new(),
        },
        size_mb,
    }
}

/// Exhaustive filter: history gate, then every resource threshold.
fn oracle(p: &Planted) -> BTreeSet<String> {
    let records = p.scenario.history_records();
    p.scenario
        .devices
        .iter()
        .filter(|d| {
            let mine: Vec<_> = records.iter().filter(|r| r.device_id == d.device_id).collect();
            let n = mine.len() as f64;
            mine.len() >= 3
                && mine.iter().map(|r| r.processing_speed).sum::<f64>() / n >= 5.0
                && mine.iter().map(|r| r.completion_accuracy).sum::<f64>() / n >= 0.95
                && d.cpu_ghz >= 4.0
                && d.total_storage_gb * 1024.0 >= p.size_mb
        })
        .map(|d| d.device_id.clone())
        .collect()
}

fn selection_accuracy() -> Check {
    let cases = 120;
    let mut nonempty = 0;
    for seed in 0..cases {
        let p = planted(seed);
        let (dep, _) = deploy(&p.scenario, Network::new()).map_err(|e| e.to_string())?;
        let spec = face_spec(&format!("sel-{seed}"), p.size_mb);
        let report = dep.owner("o").request_trust(&spec).map_err(|e| e.to_string())?;
        let got: BTreeSet<String> = select(&report, &spec).map(|d| d.selected.into_iter().collect()).unwrap_or_default();
        let want = oracle(&p);
        ensure(got == want, || format!("seed {seed}: selected {got:?}, oracle {want:?}"))?;
        nonempty += usize::from(!want.is_empty());
        dep.shutdown();
    }
    Ok(format!("{cases}/{cases} scenarios match ({nonempty} with a non-empty selection)"))
}

// ---------------------------------------------------------------------------
// Figure reproductions.
// ---------------------------------------------------------------------------

fn cell(ty: &str, other: &str, mb: f64) -> Cell {
    Cell {
        task_type: ty.into(),
        other_type: other.into(),
        task_size_mb: mb,
        tasks_per_run: 5,
        required_accuracy: 0.95,
    }
}

fn config(cells: Vec<Cell>) -> MatrixConfig {
    MatrixConfig {
        base_seed: 1,
        strategies: Strategy::ALL.to_vec(),
        fleet: FleetTemplate::default(),
        cells,
    }
}

fn by_strategy<'a>(agg: &'a [Aggregate], ty: &str, mb: f64) -> BTreeMap<Strategy, &'a Aggregate> {
    agg.iter()
        .filter(|a| a.task_type == ty && a.task_size == mb)
        .map(|a| (a.strategy, a))
        .collect()
}

fn success_and_utilization(agg: &[Aggregate], elapsed: Duration) -> (Check, Check) {
    let mut fig3 = Vec::new();
    let mut fig4 = Vec::new();
    let mut fig3_ok = elapsed < Duration::from_secs(60);
    let mut fig4_ok = true;
    for ty in [FACE, VIRUS] {
        let s = by_strategy(agg, ty, 1024.0);
        let (t, r, p) = (s[&Strategy::Taas], s[&Strategy::Random], s[&Strategy::ReputationBaseline]);
        fig3_ok &= r.mean_success < p.mean_success && p.mean_success < t.mean_success && t.mean_success == 1.0;
        fig3.push(format!(
            "{ty}: random {:.3} < reputation {:.3} < taas {:.3}",
            r.mean_success, p.mean_success, t.mean_success
        ));
        let u = |a: &Aggregate| a.mean_utilization.unwrap_or(f64::NAN);
        fig4_ok &= u(t) > u(r) && u(t) > u(p);
        fig4.push(format!("{ty}: taas {:.3}, reputation {:.3}, random {:.3}", u(t), u(p), u(r)));
    }
    fig3.push(format!("{} runs/cell, {:.1} s", agg[0].runs, elapsed.as_secs_f64()));
    let wrap = |ok: bool, v: Vec<String>| if ok { Ok(v.join("; ")) } else { Err(v.join("; ")) };
    (wrap(fig3_ok, fig3), wrap(fig4_ok, fig4))
}

fn completion_times(agg: &[Aggregate]) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for mb in [1024.0, 2048.0] {
        let s = by_strategy(agg, FACE, mb);
        let c = |st: Strategy| s[&st].completion.clone();
        let (Some(t), Some(r), Some(p)) = (c(Strategy::Taas), c(Strategy::Random), c(Strategy::ReputationBaseline)) else {
            return Err(format!("{mb} MB: missing completion times"));
        };
        ok &= s[&Strategy::Taas].runs >= 30;
        ok &= t.median < r.median && t.median < p.median && t.iqr() < r.iqr() && t.iqr() < p.iqr();
        lines.push(format!(
            "{} GB median/IQR: taas {:.1}/{:.1}, reputation {:.1}/{:.1}, random {:.1}/{:.1} (n={})",
            mb / 1024.0,
            t.median,
            t.iqr(),
            p.median,
            p.iqr(),
            r.median,
            r.iqr(),
            t.n
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

// ---------------------------------------------------------------------------
// Need-driven evaluation on the wire.
// ---------------------------------------------------------------------------

struct FixedInterpretation(TaskRequirements);

impl ExternalInterpreter for FixedInterpretation {
    fn interpret(&self, _prompt: &str) -> Result<TaskRequirements, InterpretError> {
        Ok(self.0.clone())
    }
}

const SPEED: u8 = 1;
const ACCURACY: u8 = 2;
const STORAGE: u8 = 4;
const CPU: u8 = 8;

fn requirements(mask: u8) -> TaskRequirements {
    let mut dims = BTreeSet::new();
    if mask & SPEED != 0 {
        dims.insert(HistoryDimension::ProcessingSpeed);
    }
    if mask & ACCURACY != 0 {
        dims.insert(HistoryDimension::CompletionAccuracy);
    }
    let mut resources = Vec::new();
    if mask & STORAGE != 0 {
        resources.push(ResourceRequirement::Storage { min_mb: 1024.0 });
    }
    if mask & CPU != 0 {
        resources.push(ResourceRequirement::Cpu { min_class: CpuClass::High });
    }
    TaskRequirements {
        task_type: FACE.into(),
        history_window: SECONDS_PER_WEEK,
        history_dimensions: dims,
        resources,
    }
}

fn tokens(dim: u8) -> &'static [&'static str] {
    match dim {
        SPEED => &["processing_speed", "task processing speed", "MB/second"],
        ACCURACY => &["completion_accuracy", "completion accuracy"],
        STORAGE => &["storage"],
        _ => &["cpu", "CPU", "GHz"],
    }
}

fn tool_name(f: &CapturedFrame) -> Option<String> {
    let v: Value = serde_json::from_str(&f.text).ok()?;
    (v.get("method")?.as_str()? == "tools/call").then(|| v["params"]["name"].as_str().unwrap_or_default().to_string())
}

fn need_driven_case(fleet: &Planted, mask: u8) -> Result<(), String> {
    let network = Network::new();
    let tap = WireTap::new();
    network.set_tap(Some(tap.clone()));
    let clock = Arc::new(VirtualClock::new(fleet.scenario.start));
    let registry = Arc::new(Registry::new(Locator::mem("trust")));
    let service = TrustService::new(registry, network.clone(), clock).with_interpreter(
        Arc::new(FixedInterpretation(requirements(mask))),
        DEFAULT_PROMPT,
        Duration::from_secs(5),
    );
    let mut dep = Deployment::with_service(service).map_err(|e| e.to_string())?;
    for d in &fleet.scenario.devices {
        dep.add_device(d.clone(), Locator::mem(&d.device_id)).map_err(|e| e.to_string())?;
    }
    dep.seed_history(fleet.scenario.history_records()).map_err(|e| e.to_string())?;
    tap.clear();

    let conn = network.connect(dep.trust_service_address()).map_err(|e| e.to_string())?;
    let raw = conn
        .call_tool("evaluate_trust", json!({"description": M, "owner_id": "o"}))
        .map_err(|e| e.to_string())?;
    conn.close();
    let report: TrustReport = serde_json::from_value(raw).map_err(|e| e.to_string())?;
    let trace = dep.service.traces().pop().ok_or("no evaluation trace")?;
    ensure(trace.interpreted_by == InterpretSource::External, || "interpreter not used".into())?;

    // Independent restatement of the historical gate.
    let records = fleet.scenario.history_records();
    let trusted: BTreeSet<String> = fleet
        .scenario
        .devices
        .iter()
        .filter(|d| {
            let mine: Vec<_> = records.iter().filter(|r| r.device_id == d.device_id).collect();
            let n = mine.len() as f64;
            mine.len() >= 3
                && (mask & SPEED == 0 || mine.iter().map(|r| r.processing_speed).sum::<f64>() / n >= 5.0)
                && (mask & ACCURACY == 0 || mine.iter().map(|r| r.completion_accuracy).sum::<f64>() / n >= 0.95)
        })
        .map(|d| d.device_id.clone())
        .collect();
    let frames = tap.frames();
    let queried: BTreeSet<String> = frames
        .iter()
        .filter(|f| f.direction == Direction::ToServer && tool_name(f).as_deref() == Some("report_resource"))
        .filter_map(|f| match &f.peer {
            Locator::Mem(name) => Some(name.clone()),
            _ => None,
        })
        .collect();
    ensure(queried.is_subset(&trusted), || format!("mask {mask:04b}: queried {queried:?} beyond trusted {trusted:?}"))?;
    if mask & (STORAGE | CPU) == 0 {
        ensure(queried.is_empty(), || format!("mask {mask:04b}: resource query without resource dimensions"))?;
    }
    for dim in [SPEED, ACCURACY, STORAGE, CPU] {
        if mask & dim != 0 {
            continue;
        }
        for f in frames.iter().filter(|f| !f.text.contains("\"tools\":[")) {
            for t in tokens(dim) {
                ensure(!f.text.contains(t), || format!("mask {mask:04b}: `{t}` on the wire: {}", f.text))?;
            }
        }
        for e in &report.entries {
            for t in tokens(dim) {
                ensure(!e.semantic_his.contains(t) && !e.semantic_res.contains(t), || {
                    format!("mask {mask:04b}: `{t}` in semantic strings of {}", e.device_id)
                })?;
            }
        }
    }
    ensure(network.live_connections() == 0, || "evaluation left connections open".into())?;
    Ok(())
}

fn need_driven() -> Check {
    let fleets: Vec<Planted> = (1000..1008).map(planted).collect();
    let mut cases = 0;
    let mut probes = 0;
    for fleet in &fleets {
        for mask in 1u8..16 {
            need_driven_case(fleet, mask)?;
            cases += 1;
            probes += fleet.scenario.devices.len();
        }
    }
    Ok(format!("{cases} requirement subsets × fleets, {probes} device checks, no leaks"))
}

// ---------------------------------------------------------------------------
// Protocol conformance.
// ---------------------------------------------------------------------------

fn random_json(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let pick = if depth == 0 { rng.gen_range(0..5) } else { rng.gen_range(0..7) };
    match pick {
        0 => Value::Null,
        1 => Value::Bool(rng.gen()),
        2 => json!(rng.gen::<i64>()),
        3 => json!(rng.gen_range(-1e12..1e12)),
        4 => {
            let n = rng.gen_range(0..12);
            let escapes = rng.gen_range(0..4);
            let mut s: String = (0..n).map(|_| rng.gen_range(' '..='\u{2FF}')).collect();
            s.extend("\n\t\"\\".chars().take(escapes));
            Value::String(s)
        }
        5 => Value::Array((0..rng.gen_range(0..4)).map(|_| random_json(rng, depth - 1)).collect()),
        _ => {
            let mut m = Map::new();
            for _ in 0..rng.gen_range(0..4) {
                let k: String = (0..rng.gen_range(1..6)).map(|_| rng.gen_range('a'..='z')).collect();
                m.insert(k, random_json(rng, depth - 1));
            }
            Value::Object(m)
        }
    }
}

fn random_envelope(rng: &mut ChaCha8Rng) -> Envelope {
    match rng.gen_range(0..3) {
        0 => Envelope::Request {
            id: rng.gen::<bool>().then(|| rng.gen()),
            method: ["initialize", "tools/list", "tools/call"][rng.gen_range(0..3)].into(),
            params: random_json(rng, 3),
        },
        1 => Envelope::Response {
            id: rng.gen(),
            result: random_json(rng, 3),
        },
        _ => Envelope::Error {
            id: rng.gen(),
            error: RpcError::new(rng.gen(), (0..rng.gen_range(0..20)).map(|_| rng.gen_range(' '..='~')).collect::<String>()),
        },
    }
}

fn protocol() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 10_000;
    for i in 0..n {
        let env = random_envelope(&mut rng);
        let text = env.encode();
        ensure(!text.contains('\n'), || format!("message {i} spans lines"))?;
        let back = Envelope::decode(&text).map_err(|e| format!("message {i}: {e}"))?;
        ensure(back == env, || format!("message {i} changed in transit: {text}"))?;
    }

    let scenario = Scenario::from_toml(WORKED).map_err(|e| e.to_string())?;
    let network = Network::new();
    let (dep, _) = deploy(&scenario, network.clone()).map_err(|e| e.to_string())?;
    for target in [Locator::mem("a_k"), dep.trust_service_address().clone()] {
        let conn = network.connect(&target).map_err(|e| e.to_string())?;
        let err = conn.call_tool("no_such_tool", json!({})).err().ok_or("unknown tool succeeded")?;
        ensure(err.is_method_not_found(), || format!("unknown tool on {target}: {err}"))?;
        conn.close();
    }
    dep.shutdown();

    // Census after reclaim, for every task of every strategy on a spread of
    // scenarios.
    let mut tasks = 0;
    let mut scenarios = vec![scenario];
    for seed in 1..5 {
        scenarios.push(FleetTemplate::default().scenario(&cell(FACE, VIRUS, 1024.0), seed).0);
        scenarios.push(FleetTemplate::default().scenario(&cell(VIRUS, FACE, 2048.0), seed).0);
    }
    for s in &scenarios {
        for strategy in Strategy::ALL {
            let out = run(s, strategy).map_err(|e| e.to_string())?;
            for t in &out.tasks {
                ensure(t.open_connections == 0, || format!("{strategy} {}: {} open", t.task_id, t.open_connections))?;
                tasks += 1;
            }
        }
    }
    Ok(format!("{n} round trips; unknown tools are method-not-found; census zero after {tasks} tasks"))
}

// ---------------------------------------------------------------------------
// Execution model against the analytic integral.
// ---------------------------------------------------------------------------

/// Speed in force at `t` (relative): the latest event at or before `t`.
fn speed_in_force(v0: f64, plan: &[(f64, f64)], t: f64) -> f64 {
    plan.iter().filter(|(at, _)| *at <= t).map(|(_, v)| *v).next_back().unwrap_or(v0)
}

/// When `size` MB are done, integrating the piecewise-constant speed.
fn analytic_finish(v0: f64, plan: &[(f64, f64)], size: f64) -> f64 {
    let mut t = 0.0;
    let mut left = size;
    loop {
        let v = speed_in_force(v0, plan, t);
        let next = plan.iter().map(|(at, _)| *at).find(|at| *at > t);
        match next {
            Some(n) if v * (n - t) < left => {
                left -= v * (n - t);
                t = n;
            }
            _ => return t + left / v,
        }
    }
}

fn one_device(v0: f64, plan: Vec<FaultEvent>, size: f64) -> Scenario {
    let start = SECONDS_PER_WEEK;
    Scenario {
        seed: 0,
        tick_s: 1.0,
        start,
        strategy: Strategy::Taas,
        devices: vec![DeviceProfile {
            device_id: "x".into(),
            cpu_ghz: 6.0,
            total_storage_gb: 8.0,
            nominal_speed: [(FACE.to_string(), v0)].into(),
            accuracy: [(FACE.to_string(), 1.0)].into(),
            fault_plan: plan,
            noise: None,
        }],
        history: Vec::new(),
        tasks: vec![TaskArrival {
            arrival: 0.0,
            owner: "o".into(),
            spec: face_spec("e", size),
        }],
    }
}

fn first_termination(s: &Scenario) -> Result<Option<f64>, String> {
    let out = run_with(s, &mut FixedSelector(vec!["x".into()])).map_err(|e| e.to_string())?;
    Ok(out.trace.iter().find_map(|e| match e {
        TraceEvent::Monitor(m) if m.verdict == Verdict::Degraded => Some(m.at - s.start),
        _ => None,
    }))
}

fn execution_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tick = 1.0;
    let start = SECONDS_PER_WEEK;
    let mut worst: f64 = 0.0;
    let cases = 150;
    for i in 0..cases {
        // Speeds stay above half the declared speed, so nothing is terminated.
        let v0 = rng.gen_range(2.0..12.0);
        let mut plan: Vec<(f64, f64)> = (0..rng.gen_range(0..5))
            .map(|_| (rng.gen_range(0.1..120.0), v0 * rng.gen_range(0.55..1.5)))
            .collect();
        plan.sort_by(|a, b| a.0.total_cmp(&b.0));
        let size = rng.gen_range(20.0..800.0);
        let faults = plan
            .iter()
            .map(|(at, v)| FaultEvent {
                at: start + at,
                speed: Some(*v),
                accuracy: None,
            })
            .collect();
        let s = one_device(v0, faults, size);
        let out = run_with(&s, &mut FixedSelector(vec!["x".into()])).map_err(|e| e.to_string())?;
        let got = out.tasks[0].completion_time.ok_or(format!("case {i}: task did not complete"))?;
        let want = analytic_finish(v0, &plan, size);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= tick, || format!("case {i}: finished at {got}, integral says {want}"))?;
    }

    let mut late: f64 = 0.0;
    for i in 0..60 {
        let v0 = rng.gen_range(4.0..12.0);
        let drop_at = rng.gen_range(1.0..40.0);
        let (fault, crossing) = if i % 2 == 0 {
            let v = v0 * rng.gen_range(0.0..0.45);
            (
                FaultEvent {
                    at: start + drop_at,
                    speed: Some(v),
                    accuracy: None,
                },
                drop_at,
            )
        } else {
            // Running accuracy (drop_at + (t - drop_at) a) / t falls below
            // 0.95 after this instant.
            let a = rng.gen_range(0.5..0.9);
            (
                FaultEvent {
                    at: start + drop_at,
                    speed: None,
                    accuracy: Some(a),
                },
                drop_at * (1.0 - a) / (0.95 - a),
            )
        };
        let size = v0 * (crossing + 20.0);
        let s = one_device(v0, vec![fault], size);
        let at = first_termination(&s)?.ok_or(format!("degradation case {i}: never terminated"))?;
        late = late.max(at - crossing);
        ensure(at > crossing - 1e-9 && at <= crossing + tick + 1e-9, || {
            format!("degradation case {i}: crossing at {crossing:.3}, terminated at {at:.3}")
        })?;
    }
    Ok(format!(
        "{cases} fault plans within {worst:.1e} s of the integral; 60 degradations caught at most {late:.2} s late (tick {tick} s)"
    ))
}

// ---------------------------------------------------------------------------

fn criterion(name: &str, f: impl FnOnce() -> Check) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match &result {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => println!("FAIL  {name}: {detail}"),
    }
    result.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= criterion("golden worked example", golden);
    ok &= criterion("selection accuracy vs brute-force oracle", selection_accuracy);

    let started = Instant::now();
    let rows = run_matrix(&config(vec![cell(FACE, VIRUS, 1024.0), cell(VIRUS, FACE, 1024.0)]), 20);
    let elapsed = started.elapsed();
    let (fig3, fig4) = match rows {
        Ok(rows) => success_and_utilization(&aggregate(&rows), elapsed),
        Err(e) => (Err(e.to_string()), Err(e.to_string())),
    };
    ok &= criterion("success-rate ordering, taas at 100%", || fig3);
    ok &= criterion("device utilization highest for taas", || fig4);
    ok &= criterion("completion time: lowest median and IQR for taas", || {
        let rows = run_matrix(&config(vec![cell(FACE, VIRUS, 1024.0), cell(FACE, VIRUS, 2048.0)]), 30)
            .map_err(|e| e.to_string())?;
        completion_times(&aggregate(&rows))
    });
    ok &= criterion("need-driven evaluation on the wire", need_driven);
    ok &= criterion("protocol conformance and connection census", protocol);
    ok &= criterion("execution model vs analytic integral", execution_oracle);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
