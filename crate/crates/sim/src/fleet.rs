//! Heterogeneous fleet template for the benchmark matrix.
//!
//! Every device supports two task types: the benchmarked one and a second
//! one that only shapes global reputation. Devices are drawn from five
//! behavioral roles with respect to the benchmarked type:
//!
//! * `good`: high CPU, fast and accurate, with a history to show for it.
//! * `moderate`: accurate and steady but with a moderate CPU and lower speed.
//! * `degrading`: accurate, but slows to a crawl shortly into every task; its
//!   history shows the slow runs.
//! * `specialist`: inaccurate on the benchmarked type, excellent on the other
//!   one, where most of its history lies.
//! * `sloppy`: inaccurate on both types.
//!
//! Device ids are shuffled so that id order says nothing about the role.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use taas_core::device::{FaultEvent, NoiseModel};
use taas_core::owner::{Qualifier, TaskSpec};
use taas_core::units::SECONDS_PER_WEEK;
use taas_core::DeviceProfile;

use crate::scenario::{draw, fnv1a, HistorySpec, Scenario, TaskArrival};
use crate::strategy::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Good,
    Moderate,
    Degrading,
    Specialist,
    Sloppy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetTemplate {
    pub good: usize,
    pub moderate: usize,
    pub degrading: usize,
    pub specialist: usize,
    pub sloppy: usize,
    /// Half-width of the per-subtask accuracy noise.
    pub noise: f64,
    /// Seconds between task arrivals.
    pub spacing_s: f64,
}

impl Default for FleetTemplate {
    fn default() -> Self {
        Self {
            good: 2,
            moderate: 1,
            degrading: 4,
            specialist: 2,
            sloppy: 3,
            noise: 0.01,
            spacing_s: 1200.0,
        }
    }
}

/// One benchmark cell: which task, how big, how many per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task_type: String,
    /// The second type every device supports.
    pub other_type: String,
    pub task_size_mb: f64,
    #[serde(default = "five")]
    pub tasks_per_run: usize,
    #[serde(default = "default_accuracy")]
    pub required_accuracy: f64,
}

fn five() -> usize {
    5
}

fn default_accuracy() -> f64 {
    0.95
}

struct Draw {
    ghz: [f64; 2],
    speed: [f64; 2],
    accuracy: [f64; 2],
    other_accuracy: Option<[f64; 2]>,
    history_speed: Option<[f64; 2]>,
    other_records: [f64; 2],
}

fn ranges(role: Role) -> Draw {
    let d = Draw {
        ghz: [4.5, 6.0],
        speed: [10.0, 12.0],
        accuracy: [0.98, 1.0],
        other_accuracy: None,
        history_speed: None,
        other_records: [4.0, 8.0],
    };
    match role {
        Role::Good => d,
        Role::Moderate => Draw {
            ghz: [2.0, 3.5],
            speed: [5.5, 9.0],
            accuracy: [0.97, 1.0],
            ..d
        },
        Role::Degrading => Draw {
            history_speed: Some([2.0, 4.5]),
            ..d
        },
        Role::Specialist => Draw {
            speed: [8.0, 12.0],
            accuracy: [0.7, 0.85],
            other_accuracy: Some([0.99, 1.0]),
            other_records: [20.0, 30.0],
            ..d
        },
        Role::Sloppy => Draw {
            ghz: [2.0, 6.0],
            speed: [5.0, 12.0],
            accuracy: [0.7, 0.85],
            ..d
        },
    }
}

impl FleetTemplate {
    pub fn size(&self) -> usize {
        self.good + self.moderate + self.degrading + self.specialist + self.sloppy
    }

    fn roles(&self) -> Vec<Role> {
        [
            (Role::Good, self.good),
            (Role::Moderate, self.moderate),
            (Role::Degrading, self.degrading),
            (Role::Specialist, self.specialist),
            (Role::Sloppy, self.sloppy),
        ]
        .into_iter()
        .flat_map(|(r, n)| std::iter::repeat_n(r, n))
        .collect()
    }

    /// A scenario for `cell`, deterministic in `seed`, along with the role
    /// each device was drawn from.
    pub fn scenario(&self, cell: &Cell, seed: u64) -> (Scenario, BTreeMap<String, Role>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&cell.task_type));
        let start = SECONDS_PER_WEEK;
        let arrivals: Vec<f64> = (0..cell.tasks_per_run).map(|i| i as f64 * self.spacing_s).collect();
        let width = self.size().to_string().len().max(2);
        let mut ids: Vec<String> = (1..=self.size()).map(|i| format!("d{i:0width$}")).collect();
        ids.shuffle(&mut rng);

        let mut devices = Vec::new();
        let mut history = Vec::new();
        let mut roles = BTreeMap::new();
        for (id, role) in ids.into_iter().zip(self.roles()) {
            let r = ranges(role);
            let speed = draw(&mut rng, r.speed);
            let accuracy = draw(&mut rng, r.accuracy);
            let other_accuracy = r.other_accuracy.map_or(accuracy, |a| draw(&mut rng, a));
            let mut fault_plan = Vec::new();
            if role == Role::Degrading {
                for a in &arrivals {
                    let slow_from = start + a + draw(&mut rng, [2.0, 8.0]);
                    fault_plan.push(FaultEvent {
                        at: slow_from,
                        speed: Some(speed * draw(&mut rng, [0.1, 0.3])),
                        accuracy: None,
                    });
                    fault_plan.push(FaultEvent {
                        at: start + a + 0.9 * self.spacing_s,
                        speed: Some(speed),
                        accuracy: None,
                    });
                }
            }
            devices.push(DeviceProfile {
                device_id: id.clone(),
                cpu_ghz: draw(&mut rng, r.ghz),
                total_storage_gb: draw(&mut rng, [4.0, 8.0]),
                nominal_speed: [(cell.task_type.clone(), speed), (cell.other_type.clone(), speed)].into(),
                accuracy: [(cell.task_type.clone(), accuracy), (cell.other_type.clone(), other_accuracy)].into(),
                fault_plan,
                noise: (self.noise > 0.0).then(|| NoiseModel {
                    amplitude: self.noise,
                    seed: seed ^ fnv1a(&id),
                }),
            });
            let around = |x: f64, lo: f64, hi: f64| [(x - 0.01).max(lo), (x + 0.01).min(hi)];
            history.push(HistorySpec {
                device_id: id.clone(),
                task_type: cell.task_type.clone(),
                count: draw(&mut rng, [4.0, 8.0]).round() as usize,
                speed_mb_s: r.history_speed.unwrap_or([speed * 0.95, speed * 1.05]),
                accuracy: around(accuracy, 0.0, 1.0),
                window_s: SECONDS_PER_WEEK,
            });
            history.push(HistorySpec {
                device_id: id.clone(),
                task_type: cell.other_type.clone(),
                count: draw(&mut rng, r.other_records).round() as usize,
                speed_mb_s: [speed * 0.95, speed * 1.05],
                accuracy: around(other_accuracy, 0.0, 1.0),
                window_s: SECONDS_PER_WEEK,
            });
            roles.insert(id, role);
        }
        devices.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        history.sort_by(|a, b| (&a.device_id, &a.task_type).cmp(&(&b.device_id, &b.task_type)));

        let tasks = arrivals
            .iter()
            .enumerate()
            .map(|(i, a)| TaskArrival {
                arrival: *a,
                owner: "owner".into(),
                spec: TaskSpec {
                    task_id: format!("t{}", i + 1),
                    task_type: cell.task_type.clone(),
                    data_size_mb: cell.task_size_mb,
                    required_accuracy: cell.required_accuracy,
                    qualifiers: BTreeSet::from([Qualifier::Fast, Qualifier::Accurate]),
                    history_window: SECONDS_PER_WEEK,
                },
            })
            .collect();
        let scenario = Scenario {
            seed,
            tick_s: 1.0,
            start,
            strategy: Strategy::Taas,
            devices,
            history,
            tasks,
        };
        (scenario, roles)
    }
}
