//! Hyperparameter search and the external oracle protocol.

use std::time::Duration;

use qubopress::compress::CompressionPlan;
use qubopress::descriptor::{Granularity, Model};
use qubopress::search::{
    hyperparameter_search, init_beta, run_search, CommandOracle, Formulation, GammaInit,
    OracleError, Phase, PipelineProbe, SearchConfig, SolverChoice, SurrogateOracle,
    ORACLE_SEED_ENV,
};
use qubopress::{AccuracyOracle, Error};

fn tiny() -> Formulation {
    let path = format!(
        "{}/../../fixtures/tiny/manifest.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let m = Model::load(path).unwrap();
    Formulation::new(m.descriptor(Granularity::Filter, None).unwrap())
}

fn config(a_th: f64, seed: u64) -> SearchConfig {
    SearchConfig {
        a_th,
        gamma_init: GammaInit::LogUniform {
            lo: 1e-3,
            hi: 1.0,
            seed,
        },
        ..SearchConfig::default()
    }
}

#[test]
fn oracle_call_count_follows_branches() {
    let f = tiny();
    for (a_th, seed) in [(0.8, 0), (0.9, 1), (0.95, 2)] {
        let cfg = config(a_th, seed);
        let state = run_search(
            &cfg,
            &f,
            SolverChoice::Exact,
            SurrogateOracle::new(&f.descriptor),
        )
        .unwrap();
        let brackets = state
            .trace
            .iter()
            .filter(|r| r.phase == Phase::Bracket)
            .count() as u32;
        let expected = 1 + brackets + cfg.n_iter * (2 * cfg.n_bin + 1);
        assert_eq!(state.trace.len() as u32, expected);
        assert_eq!(state.trace[0].phase, Phase::Init);
        let checkpoints = state
            .trace
            .iter()
            .filter(|r| r.phase == Phase::Checkpoint)
            .count();
        assert_eq!(checkpoints as u32, cfg.n_iter);
    }
}

#[test]
fn checkpoint_dominates_every_valid_row() {
    let f = tiny();
    let cfg = config(0.85, 4);
    let state = run_search(
        &cfg,
        &f,
        SolverChoice::Exact,
        SurrogateOracle::new(&f.descriptor),
    )
    .unwrap();
    let best = state.best.as_ref().unwrap();
    assert!(best.accuracy >= cfg.a_th);
    for row in &state.trace {
        assert!(!(row.accuracy >= cfg.a_th && row.reduction > best.reduction));
    }
    assert!(best.plan.is_some());
}

#[test]
fn surrogate_search_is_reproducible() {
    let f = tiny();
    let run = || {
        let s = run_search(
            &config(0.85, 9),
            &f,
            SolverChoice::Exact,
            SurrogateOracle::new(&f.descriptor),
        )
        .unwrap();
        serde_json::to_string(&s).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_threshold_hits_the_doubling_cap() {
    let f = tiny();
    let probe = PipelineProbe {
        formulation: &f,
        solver: SolverChoice::Exact,
        oracle: SurrogateOracle::new(&f.descriptor),
    };
    let abort = hyperparameter_search(&config(0.0, 0), probe, init_beta(&f.coeffs)).unwrap_err();
    assert!(matches!(
        abort.error,
        Error::NoThresholdCrossing { cap: 32 }
    ));
    assert_eq!(abort.state.trace.len(), 33);
}

#[test]
fn oracle_errors_abort_with_partial_trace() {
    let f = tiny();
    let mut calls = 0;
    let probe = |_hp| {
        calls += 1;
        if calls > 3 {
            return Err(Error::Oracle(OracleError::OutOfRange(1.5)));
        }
        Ok(qubopress::search::Evaluation {
            energy: 0.0,
            reduction: 0.1,
            accuracy: 1.0,
            plan: None,
        })
    };
    let abort = hyperparameter_search(&config(0.5, 0), probe, init_beta(&f.coeffs)).unwrap_err();
    assert!(matches!(abort.error, Error::Oracle(_)));
    assert_eq!(abort.state.trace.len(), 3);
}

fn shell(script: &str) -> CommandOracle {
    CommandOracle {
        program: "sh".into(),
        args: vec!["-c".into(), script.into(), "oracle".into()],
        timeout: Duration::from_secs(10),
        seed: None,
    }
}

fn identity_plan() -> CompressionPlan {
    CompressionPlan::identity(tiny().coeffs.index.layout())
}

#[test]
fn command_oracle_reads_stdout() {
    let mut o = shell("echo 0.9817");
    assert_eq!(o.accuracy(&identity_plan()).unwrap(), 0.9817);
}

#[test]
fn command_oracle_receives_plan_file() {
    let mut o = shell(r#"grep -q '"bits_removed":0' "$1" && echo 0.5"#);
    assert_eq!(o.accuracy(&identity_plan()).unwrap(), 0.5);
}

#[test]
fn command_oracle_passes_seed() {
    let mut o = shell(&format!("echo 0.$(printenv {ORACLE_SEED_ENV})"));
    o.seed = Some(42);
    assert_eq!(o.accuracy(&identity_plan()).unwrap(), 0.42);
}

#[test]
fn command_oracle_errors() {
    let plan = identity_plan();
    assert!(matches!(
        shell("echo 1.5").accuracy(&plan),
        Err(OracleError::OutOfRange(_))
    ));
    assert!(matches!(
        shell("echo high").accuracy(&plan),
        Err(OracleError::Unparseable(_))
    ));
    assert!(matches!(
        shell("echo nan").accuracy(&plan),
        Err(OracleError::Unparseable(_))
    ));
    assert!(matches!(
        shell("exit 4").accuracy(&plan),
        Err(OracleError::Failed { .. })
    ));
    let mut slow = shell("sleep 5; echo 0.5");
    slow.timeout = Duration::from_millis(200);
    assert!(matches!(slow.accuracy(&plan), Err(OracleError::Timeout(_))));
    let mut missing = CommandOracle::from_command_line("/nonexistent/oracle").unwrap();
    assert!(matches!(
        missing.accuracy(&plan),
        Err(OracleError::Spawn { .. })
    ));
}
