//! `taas`: run scenarios and the benchmark matrix from the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use taas_sim::{aggregate, run, run_matrix, write_outputs, MatrixConfig, RunOutput, Scenario, Strategy};

const WORKED_EXAMPLE: &str = include_str!("../configs/worked_example.toml");

#[derive(Parser)]
#[command(name = "taas", about = "Trust-as-a-Service scenario runner and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one strategy.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// taas, random or reputation_baseline; defaults to the scenario's.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a matrix config under every strategy.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Seeds per cell.
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the scenario a matrix config generates for one cell and seed.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        cell: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the built-in three-device example under every strategy.
    Demo,
}

fn write_run(out: &Path, r: &RunOutput) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&r.metrics)?)?;
    let mut w = csv::Writer::from_path(out.join("tasks.csv"))?;
    w.write_record([
        "task_id",
        "success",
        "completed",
        "realized_accuracy",
        "completion_time",
        "utilization",
        "involved",
        "executors",
    ])?;
    for t in &r.tasks {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            t.task_id.clone(),
            t.success.to_string(),
            t.completed.to_string(),
            opt(t.realized_accuracy),
            opt(t.completion_time),
            opt(t.utilization()),
            t.involved.join(" "),
            t.executors.join(" "),
        ])?;
    }
    w.flush()?;
    let mut trace = fs::File::create(out.join("trace.jsonl"))?;
    for e in &r.trace {
        writeln!(trace, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn summary(r: &RunOutput) -> String {
    let m = &r.metrics;
    format!(
        "{:<20} success {:.3}  utilization {}  median completion {}",
        r.strategy,
        m.success_rate,
        m.device_utilization.map_or("-".into(), |u| format!("{u:.3}")),
        m.median_completion_time().map_or("-".into(), |t| format!("{t:.1} s")),
    )
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            scenario,
            strategy,
            seed,
            out,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let r = run(&s, strategy.unwrap_or(s.strategy))?;
            write_run(&out, &r)?;
            println!("{}", summary(&r));
        }
        Command::Matrix { config, reps, out } => {
            let cfg = MatrixConfig::load(&config)?;
            let started = Instant::now();
            let rows = run_matrix(&cfg, reps)?;
            write_outputs(&out, &rows)?;
            for a in aggregate(&rows) {
                println!(
                    "{:<20} {:>6} MB {:<20} success {:.3}  utilization {}  median {}  IQR {}",
                    a.task_type,
                    a.task_size,
                    a.strategy,
                    a.mean_success,
                    a.mean_utilization.map_or("-".into(), |u| format!("{u:.3}")),
                    a.completion.as_ref().map_or("-".into(), |c| format!("{:.1}", c.median)),
                    a.completion.as_ref().map_or("-".into(), |c| format!("{:.1}", c.iqr())),
                );
            }
            println!("{} runs in {:.1} s, written to {}", rows.len(), started.elapsed().as_secs_f64(), out.display());
        }
        Command::Generate { config, cell, seed } => {
            let cfg = MatrixConfig::load(&config)?;
            let c = cfg.cells.get(cell).with_context(|| format!("config has {} cells", cfg.cells.len()))?;
            print!("{}", cfg.fleet.scenario(c, seed).0.to_toml());
        }
        Command::Demo => {
            let s = Scenario::from_toml(WORKED_EXAMPLE)?;
            for strategy in Strategy::ALL {
                println!("{}", summary(&run(&s, strategy)?));
            }
        }
    }
    Ok(())
}
