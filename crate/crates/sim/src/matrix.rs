//! The benchmark matrix: cells × strategies × seeds, one results row per
//! run, plus per-figure aggregates.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fleet::{Cell, FleetTemplate};
use crate::metrics::BoxSummary;
use crate::runner::run;
use crate::strategy::Strategy;
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    #[serde(default = "one")]
    pub base_seed: u64,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub fleet: FleetTemplate,
    pub cells: Vec<Cell>,
}

fn one() -> u64 {
    1
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

impl MatrixConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// One run of one strategy on one generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub strategy: Strategy,
    pub task_type: String,
    pub task_size: f64,
    pub seed: u64,
    /// Fraction of the run's tasks that succeeded.
    pub success: f64,
    pub utilization: Option<f64>,
    /// Median completion time of the run's completed tasks.
    pub completion_time: Option<f64>,
}

/// Runs every cell under every strategy for `reps` consecutive seeds.
/// Runs execute in parallel; rows come back in (cell, seed, strategy) order.
pub fn run_matrix(config: &MatrixConfig, reps: usize) -> Result<Vec<Row>, SimError> {
    let jobs: Vec<(usize, u64, usize)> = (0..config.cells.len())
        .flat_map(|c| {
            (0..reps as u64).flat_map(move |r| (0..config.strategies.len()).map(move |s| (c, r, s)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(c, r, s)| {
            let cell = &config.cells[c];
            let strategy = config.strategies[s];
            let seed = config.base_seed + r;
            let (scenario, _) = config.fleet.scenario(cell, seed);
            let out = run(&scenario, strategy)?;
            Ok(Row {
                strategy,
                task_type: cell.task_type.clone(),
                task_size: cell.task_size_mb,
                seed,
                success: out.metrics.success_rate,
                utilization: out.metrics.device_utilization,
                completion_time: out.metrics.median_completion_time(),
            })
        })
        .collect()
}

/// Per (task type, size, strategy) summary across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub task_type: String,
    pub task_size: f64,
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_success: f64,
    pub mean_utilization: Option<f64>,
    pub completion: Option<BoxSummary>,
}

pub fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, f64, Strategy)> = Vec::new();
    for r in rows {
        let k = (r.task_type.clone(), r.task_size, r.strategy);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(task_type, task_size, strategy)| {
            let group: Vec<&Row> = rows
                .iter()
                .filter(|r| r.task_type == task_type && r.task_size == task_size && r.strategy == strategy)
                .collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let success: Vec<f64> = group.iter().map(|r| r.success).collect();
            let util: Vec<f64> = group.iter().filter_map(|r| r.utilization).collect();
            let times: Vec<f64> = group.iter().filter_map(|r| r.completion_time).collect();
            Aggregate {
                runs: group.len(),
                mean_success: mean(&success).unwrap_or(1.0),
                mean_utilization: mean(&util),
                completion: BoxSummary::of(&times),
                task_type,
                task_size,
                strategy,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct SuccessLine<'a> {
    task_type: &'a str,
    task_size: f64,
    strategy: Strategy,
    runs: usize,
    mean_success: f64,
}

#[derive(Serialize)]
struct UtilizationLine<'a> {
    task_type: &'a str,
    task_size: f64,
    strategy: Strategy,
    runs: usize,
    mean_utilization: Option<f64>,
}

#[derive(Serialize)]
struct CompletionLine<'a> {
    task_type: &'a str,
    task_size: f64,
    strategy: Strategy,
    n: usize,
    median: Option<f64>,
    q1: Option<f64>,
    q3: Option<f64>,
    whisker_low: Option<f64>,
    whisker_high: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| SimError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))
}

/// Writes `results.csv` and the three figure aggregates into `dir`.
pub fn write_outputs(dir: &Path, rows: &[Row]) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::Io(format!("{}: {e}", dir.display())))?;
    write_csv(&dir.join("results.csv"), rows)?;
    let agg = aggregate(rows);
    write_csv(
        &dir.join("fig3_success.csv"),
        agg.iter().map(|a| SuccessLine {
            task_type: &a.task_type,
            task_size: a.task_size,
            strategy: a.strategy,
            runs: a.runs,
            mean_success: a.mean_success,
        }),
    )?;
    write_csv(
        &dir.join("fig4_utilization.csv"),
        agg.iter().map(|a| UtilizationLine {
            task_type: &a.task_type,
            task_size: a.task_size,
            strategy: a.strategy,
            runs: a.runs,
            mean_utilization: a.mean_utilization,
        }),
    )?;
    write_csv(
        &dir.join("fig5_completion.csv"),
        agg.iter().map(|a| {
            let c = a.completion.as_ref();
            CompletionLine {
                task_type: &a.task_type,
                task_size: a.task_size,
                strategy: a.strategy,
                n: c.map_or(0, |c| c.n),
                median: c.map(|c| c.median),
                q1: c.map(|c| c.q1),
                q3: c.map(|c| c.q3),
                whisker_low: c.map(|c| c.whisker_low),
                whisker_high: c.map(|c| c.whisker_high),
            }
        }),
    )
}
