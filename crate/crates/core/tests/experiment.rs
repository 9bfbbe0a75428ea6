use ldqn::experiment::{compare_runs, execute, Auto, DatasetSpec, RunConfig, Solver};
use ldqn::simulator::{DelayModel, StopRule, Trace};
use ldqn::Error;
use proptest::prelude::*;

fn small(solver: Solver, seed: u64) -> RunConfig {
    RunConfig {
        solver,
        dataset: DatasetSpec::Synthetic { n_samples: 300, dim: 10, sparsity: 0.0, noise_sigma2: 0.09 },
        workers: 3,
        memory: 5,
        seed,
        stop: StopRule::updates(150),
        ..RunConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_text_round_trips(
        solver in 0usize..3,
        workers in 1usize..20,
        memory in 1usize..50,
        eta in 0.01f64..2.0,
        lambda in 1e-4f64..1.0,
        seed in any::<u64>(),
        delay in 0usize..4,
        epochs in proptest::option::of(1usize..100),
    ) {
        let mut cfg = RunConfig {
            solver: [Solver::Ldqn, Solver::Daveqn, Solver::Gd][solver],
            workers,
            memory,
            eta,
            lambda,
            seed,
            gamma0: if seed % 2 == 0 { Auto::Auto } else { Auto::Value(eta * 3.0) },
            ..RunConfig::default()
        };
        cfg.delay = match delay {
            0 => DelayModel::Constant { latency: eta },
            1 => DelayModel::UniformInteger { lo: 1, hi: 1 + memory as u32 },
            2 => DelayModel::Heterogeneous { base: 1.0, spread: 1.0 + lambda },
            _ => DelayModel::BoundedDelay { max_delay: workers + 2 },
        };
        cfg.stop.max_epochs = epochs;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), cfg.to_text());
        prop_assert_eq!(back.seed, seed);
        prop_assert_eq!(back.eta, eta);
    }
}

#[test]
fn config_files_accept_comments_and_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    std::fs::write(&path, "# experiment\nsolver = gd\n\nworkers=2   \nsynthetic=d=4,N=30\n").unwrap();
    let cfg = RunConfig::from_file(&path).unwrap();
    assert_eq!(cfg.solver, Solver::Gd);
    assert_eq!(cfg.workers, 2);

    std::fs::write(&path, "solvr=gd\n").unwrap();
    let err = RunConfig::from_file(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(RunConfig::from_text("workers=two\n").is_err());
    assert!(RunConfig::from_text("no equals sign\n").is_err());
}

#[test]
fn every_solver_reports_consistent_counts() {
    for solver in [Solver::Ldqn, Solver::Daveqn, Solver::Gd] {
        let exec = execute(&small(solver, 2)).unwrap();
        let r = &exec.report;
        assert_eq!(r.updates, 150);
        assert_eq!(exec.output.trace.rows.len(), 151);
        assert_eq!(r.epochs_completed, exec.output.epochs.completed());
        let last = exec.output.trace.rows.last().unwrap();
        assert!(last.suboptimality.unwrap() < exec.output.trace.rows[0].suboptimality.unwrap());
    }
}

#[test]
fn limited_memory_beats_gradient_descent_per_epoch() {
    let a = execute(&small(Solver::Ldqn, 4)).unwrap();
    let g = execute(&small(Solver::Gd, 4)).unwrap();
    let traces = vec![("ldqn".to_string(), a.output.trace), ("gd".to_string(), g.output.trace)];
    let cmp = compare_runs(&traces, 1e-3).unwrap();
    assert!(cmp.time_to_tol[0].is_some());
    let epoch_csv = cmp.epoch_csv();
    assert!(epoch_csv.starts_with("epoch,ldqn,gd"), "{epoch_csv}");
    let by_epoch_2 = &cmp.by_epoch.iter().find(|(e, _)| *e == 2).unwrap().1;
    assert!(by_epoch_2[0].unwrap() < by_epoch_2[1].unwrap());
}

#[test]
fn comparisons_need_a_common_problem() {
    let a = execute(&small(Solver::Ldqn, 1)).unwrap().output.trace;
    let mut other = small(Solver::Ldqn, 1);
    other.lambda = 0.5;
    let b = execute(&other).unwrap().output.trace;
    let err = compare_runs(&[("a".into(), a.clone()), ("b".into(), b)], 1e-4).unwrap_err();
    assert!(matches!(err, Error::IncompatibleTraces(_)));

    let mut blind = a.clone();
    for r in &mut blind.rows {
        r.suboptimality = None;
    }
    let csv = blind.to_csv();
    let parsed = Trace::parse_csv(&csv).unwrap();
    assert!(compare_runs(&[("a".into(), a), ("blind".into(), parsed)], 1e-4).is_err());
    assert!(compare_runs(&[], 1e-4).is_err());
}
