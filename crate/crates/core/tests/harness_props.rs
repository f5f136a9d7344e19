mod common;

use common::*;
use subcrit::graph::{SampleMethod, TypeMode};
use subcrit::harness::*;
use subcrit::model::TypeSpace;

fn graph_cfg(space: TypeSpace, c: f64, target: Target, grid: Vec<usize>, reps: Vec<usize>, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelRef::Graph {
            space,
            type_mode: TypeMode::Iid,
            method: SampleMethod::Grouped,
        },
        c,
        n_grid: grid,
        reps_per_n: reps,
        master_seed: seed,
        target,
        band: (0.75, 1.25),
    }
}

fn csv(out: &ExperimentOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rows_csv(&out.rows, &mut buf).unwrap();
    buf
}

#[test]
fn constant_activity_doubles_the_statistic() {
    let size = run_component_experiment(&graph_cfg(constant(2.0), 0.1, Target::ComponentSize, vec![500, 5000], vec![20], 3)).unwrap();
    let act = run_activity_experiment(&graph_cfg(constant(2.0), 0.1, Target::ComponentActivity, vec![500, 5000], vec![20], 3)).unwrap();
    for (a, b) in size.replicas.iter().zip(&act.replicas) {
        assert_eq!(b.activity_statistic, 2.0 * a.size_statistic);
    }
}

#[test]
fn activity_statistic_is_bracketed_by_sizes() {
    let space = geometric();
    let (lo, hi) = (space.min_activity(), space.max_activity());
    let out = run_activity_experiment(&graph_cfg(space, 0.2, Target::ComponentActivity, vec![300, 3000], vec![30], 5)).unwrap();
    for r in &out.replicas {
        assert!(r.activity_statistic >= lo * r.size_statistic);
        assert!(r.activity_statistic <= hi * r.size_statistic);
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let cfg = graph_cfg(two_type(), 0.2, Target::ComponentActivity, vec![1000, 10000], vec![40, 20], 77);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(csv(&one), csv(&four));
    assert_eq!(one.replicas, four.replicas);
}

#[test]
fn extending_the_grid_keeps_earlier_cells() {
    let short = run_experiment(&graph_cfg(homogeneous(), 0.5, Target::ComponentSize, vec![1000], vec![30], 9)).unwrap();
    let long = run_experiment(&graph_cfg(homogeneous(), 0.5, Target::ComponentSize, vec![1000, 4000], vec![30], 9)).unwrap();
    assert_eq!(short.rows[0], long.rows[0]);
    let other = run_experiment(&graph_cfg(homogeneous(), 0.5, Target::ComponentSize, vec![1000], vec![30], 10)).unwrap();
    assert_ne!(short.rows[0].mean, other.rows[0].mean);
}

#[test]
fn rows_report_predictions() {
    let out = run_component_experiment(&graph_cfg(two_type(), 0.2, Target::ComponentSize, vec![200], vec![10], 1)).unwrap();
    let r = r_oracle(&two_type(), 0.2);
    let row = out.rows[0];
    assert!(rel(row.predicted, 1.0 / r.ln()) < 1e-9);
    assert_eq!(row.ratio, Some(row.mean / row.predicted));
    assert!(row.stderr >= 0.0);
    assert_eq!((row.reps, row.seed, row.target), (10, 1, Target::ComponentSize));
    let text = String::from_utf8(csv(&out)).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
}

#[test]
fn zero_bond_percolation_matches_homogeneous_graph() {
    let grid = vec![10_001];
    let perc = run_percolation_experiment(&ExperimentConfig {
        model: ModelRef::Lattice {
            d: 1,
            p: 0.0,
            macro_law: MacroMode::Exact,
        },
        c: 0.5,
        n_grid: grid.clone(),
        reps_per_n: vec![200],
        master_seed: 4,
        target: Target::PercolationHybrid,
        band: (0.0, 10.0),
    })
    .unwrap();
    let graph = run_component_experiment(&graph_cfg(homogeneous(), 0.5, Target::ComponentSize, grid, vec![200], 5)).unwrap();
    let (a, b) = (perc.rows[0], graph.rows[0]);
    assert_eq!(a.n, b.n);
    assert!(rel(a.predicted, b.predicted) < 1e-9);
    assert!((a.mean - b.mean).abs() < 4.0 * a.stderr.hypot(b.stderr), "{} vs {}", a.mean, b.mean);
}

#[test]
fn empirical_macro_law_in_two_dimensions() {
    let cfg = ExperimentConfig {
        model: ModelRef::Lattice {
            d: 2,
            p: 0.1,
            macro_law: MacroMode::Empirical,
        },
        c: 0.3,
        n_grid: vec![2000, 20000],
        reps_per_n: vec![5],
        master_seed: 6,
        target: Target::PercolationHybrid,
        band: (0.0, 10.0),
    };
    let out = run_percolation_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert!(out.decay_constant > 1.0);
    assert!(out.replicas.iter().all(|r| r.c1_macro_activity == Some(r.c1)));
    let exact = ExperimentConfig {
        model: ModelRef::Lattice {
            d: 2,
            p: 0.1,
            macro_law: MacroMode::Exact,
        },
        ..cfg
    };
    assert!(run_percolation_experiment(&exact).is_err());
}
