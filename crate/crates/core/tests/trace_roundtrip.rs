use std::io::BufReader;

use offo_core::config::{ExperimentConfig, SolverKind};
use offo_core::experiment;
use offo_core::noise::NoiseSchedule;
use offo_core::problems::ProblemKind;
use offo_core::trace::Trace;

fn small(solver: SolverKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ProblemKind::Minsurf, 16, solver);
    cfg.solver.subdomains = 2;
    cfg.solver.hybrid.coarsening_log2 = 2;
    cfg.stop.max_cycles = 40;
    cfg.noise.schedule = NoiseSchedule::Constant { variance: 1e-6 };
    cfg.seed = 11;
    cfg
}

#[test]
fn ndjson_round_trip_is_exact() {
    for solver in [SolverKind::Adagb2, SolverKind::Ml, SolverKind::Dd, SolverKind::MlDd] {
        let trace = experiment::run(&small(solver)).unwrap().trace;
        let mut buf = Vec::new();
        trace.write_ndjson(&mut buf).unwrap();
        let back = Trace::read_ndjson(BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, trace, "{solver:?}");
    }
}

#[test]
fn saved_files_reload() {
    let dir = tempfile::tempdir().unwrap();
    let trace = experiment::run(&small(SolverKind::Ml)).unwrap().trace;
    let stem = dir.path().join("run");
    trace.save(&stem).unwrap();
    assert_eq!(Trace::load(&stem.with_extension("ndjson")).unwrap(), trace);
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), trace.cycles.len() + 1);
}

#[test]
fn same_seed_same_trace() {
    let a = experiment::run(&small(SolverKind::MlDd)).unwrap().trace;
    let b = experiment::run(&small(SolverKind::MlDd)).unwrap().trace;
    let strip = |t: &Trace| t.cycles.iter().map(|c| (c.xi_norm, c.cost, c.d_norm)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    let mut other = small(SolverKind::MlDd);
    other.seed = 12;
    let c = experiment::run(&other).unwrap().trace;
    assert_ne!(strip(&a), strip(&c));
}
