//! Results-table shape and determinism of the benchmark matrix.

use taas_sim::{aggregate, run_matrix, write_outputs, BoxSummary, Cell, FleetTemplate, MatrixConfig, Strategy};

fn cell(ty: &str, other: &str, mb: f64) -> Cell {
    Cell {
        task_type: ty.into(),
        other_type: other.into(),
        task_size_mb: mb,
        tasks_per_run: 1,
        required_accuracy: 0.95,
    }
}

fn two_types() -> MatrixConfig {
    MatrixConfig {
        base_seed: 1,
        strategies: Strategy::ALL.to_vec(),
        fleet: FleetTemplate::default(),
        cells: vec![
            cell("facial recognition", "virus scanning", 1024.0),
            cell("virus scanning", "facial recognition", 1024.0),
        ],
    }
}

#[test]
fn two_types_three_strategies_twenty_seeds_make_120_rows() {
    let rows = run_matrix(&two_types(), 20).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 20);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.success));
        assert!(r.utilization.is_none_or(|u| (0.0..=1.0).contains(&u)));
    }
    let agg = aggregate(&rows);
    assert_eq!(agg.len(), 6);
    assert!(agg.iter().all(|a| a.runs == 20));
}

#[test]
fn single_cell_is_one_row() {
    let mut cfg = two_types();
    cfg.cells.truncate(1);
    cfg.strategies = vec![Strategy::Random];
    let rows = run_matrix(&cfg, 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].strategy, Strategy::Random);
    assert_eq!(rows[0].seed, 1);
}

#[test]
fn rerun_is_byte_identical() {
    let cfg = two_types();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(a.path(), &run_matrix(&cfg, 3).unwrap()).unwrap();
    write_outputs(b.path(), &run_matrix(&cfg, 3).unwrap()).unwrap();
    for f in ["results.csv", "fig3_success.csv", "fig4_utilization.csv", "fig5_completion.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let header = std::fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert!(header.starts_with("strategy,task_type,task_size,seed,success,utilization,completion_time\n"));
}

#[test]
fn emitted_boxplots_match_the_rows() {
    let cfg = two_types();
    let dir = tempfile::tempdir().unwrap();
    let rows = run_matrix(&cfg, 4).unwrap();
    write_outputs(dir.path(), &rows).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("fig5_completion.csv")).unwrap();
    let mut seen = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let strategy: Strategy = rec[2].parse().unwrap();
        let times: Vec<f64> = rows
            .iter()
            .filter(|x| x.task_type == rec[0] && x.strategy == strategy)
            .filter_map(|x| x.completion_time)
            .collect();
        let want = BoxSummary::of(&times);
        let num = |i: usize| (!rec[i].is_empty()).then(|| rec[i].parse::<f64>().unwrap());
        assert_eq!(num(4), want.as_ref().map(|s| s.median));
        assert_eq!(num(5), want.as_ref().map(|s| s.q1));
        assert_eq!(num(6), want.as_ref().map(|s| s.q3));
        seen += 1;
    }
    assert_eq!(seen, 6);
}

#[test]
fn shipped_config_parses() {
    let cfg = MatrixConfig::from_toml(include_str!("../configs/figures.toml")).unwrap();
    assert_eq!(cfg.cells.len(), 3);
    assert_eq!(cfg.fleet, FleetTemplate::default());
    assert!(MatrixConfig::from_toml("cells = []\nbogus = 1\n").is_err());
}
