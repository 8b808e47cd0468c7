//! Subcommand implementations. Results go to `out`; diagnostics to stderr.

use std::io::Write;
use std::time::Duration;

use qubopress::compress::{measure, reduction_ratio, weight_magnitude};
use qubopress::descriptor::{Model, ModelDescriptor};
use qubopress::search::{
    aqc_step, evaluate_accuracy, init_beta, run_search, AqcOutcome, CommandOracle, Formulation,
    GammaInit, SearchConfig, SolverChoice, SurrogateOracle,
};
use qubopress::solver::{anneal, best_of, components, solve_exact, Solution};
use qubopress::{
    assemble_qubo, decode_solution, Hyperparameters, QuboCoefficients, QuboMatrix, StepRule,
    VariableIndex,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::record::{sibling, write_file, RunManifest};
use crate::{
    BuildArgs, CliError, IngestArgs, ModelArgs, Oracle, OracleArgs, SearchArgs, SolveArgs,
    SweepArgs, VerifyArgs,
};

fn load(args: &ModelArgs) -> Result<(Model, ModelDescriptor), CliError> {
    let model = Model::load(&args.manifest)?;
    let granularity = args
        .granularity
        .or(model.native_granularity())
        .unwrap_or_default();
    let descriptor = model.descriptor(granularity, args.b_max)?;
    Ok((model, descriptor))
}

fn model_params(args: &ModelArgs, d: &ModelDescriptor) -> serde_json::Value {
    json!({
        "manifest": args.manifest,
        "granularity": d.granularity,
        "b_max": d.b_max,
    })
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn oracle(
    args: &OracleArgs,
    timeout_secs: u64,
    seed: u64,
    d: &ModelDescriptor,
) -> Result<Oracle, CliError> {
    match &args.oracle_cmd {
        Some(cmd) => {
            let mut o = CommandOracle::from_command_line(cmd)
                .ok_or_else(|| CliError::Input("--oracle-cmd is empty".into()))?;
            o.timeout = Duration::from_secs(timeout_secs);
            o.seed = Some(seed);
            Ok(Oracle::Command(o))
        }
        None => Ok(Oracle::Surrogate(SurrogateOracle::new(d))),
    }
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(a), serde_json::Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

pub fn ingest(args: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, d) = load(&args.model)?;
    writeln!(out, "granularity: {:?}", d.granularity)?;
    for l in &d.layers {
        writeln!(
            out,
            "layer {}: {} groups, {} weights, {} q-bits",
            l.id,
            l.groups.len(),
            l.weight_count(),
            l.q_bits
        )?;
    }
    writeln!(out, "total bits: {}", d.total_bits)?;
    writeln!(out, "problem size: {}", d.problem_size())?;
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&d).expect("descriptor serializes") + "\n";
        write_file(path, json)?;
        let params = merge(model_params(&args.model, &d), json!({ "out": path }));
        let mut rm = RunManifest::new("ingest", None, params);
        rm.hash_model(&args.model.manifest)?;
        rm.write_for(path)?;
    }
    Ok(())
}

pub fn build(args: &BuildArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let hp = Hyperparameters::new(args.beta, args.gamma)?;
    let (_, d) = load(&args.model)?;
    let coeffs = QuboCoefficients::from_descriptor(&d);
    let u = assemble_qubo(&coeffs, hp)?;
    u.write(&args.out)?;
    coeffs
        .index
        .write_sidecar(&sibling(&args.out, "index.json"))?;
    let params = merge(
        model_params(&args.model, &d),
        json!({ "beta": hp.beta, "gamma": hp.gamma, "out": args.out }),
    );
    let mut rm = RunManifest::new("build", None, params);
    rm.hash_model(&args.model.manifest)?;
    rm.write_for(&args.out)?;
    writeln!(out, "problem size: {}", u.dim())?;
    writeln!(out, "nonzeros: {}", u.entries().len())?;
    Ok(())
}

#[derive(Serialize)]
struct SolutionLine<'a> {
    energy: f64,
    x: &'a str,
}

pub fn solution_lines(solutions: &[Solution]) -> String {
    solutions
        .iter()
        .map(|s| {
            let x = s.bitstring();
            serde_json::to_string(&SolutionLine {
                energy: s.energy,
                x: &x,
            })
            .expect("solution serializes")
                + "\n"
        })
        .collect()
}

pub fn solve(args: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut u = QuboMatrix::read(&args.qubo)?;
    let sidecar = sibling(&args.qubo, "index.json");
    let has_index = sidecar.exists();
    if has_index {
        u = u.with_index(VariableIndex::read_sidecar(&sidecar)?)?;
    }
    let (solutions, seed) = if args.exact {
        (vec![solve_exact(&u)?], None)
    } else {
        let seed = resolve_seed(args.seed);
        (anneal(&u, &args.anneal.config(seed))?, Some(seed))
    };
    write_file(&args.out, solution_lines(&solutions))?;

    let params = json!({
        "qubo": args.qubo,
        "exact": args.exact,
        "anneal": if args.exact { serde_json::Value::Null } else { json!(args.anneal) },
        "out": args.out,
        "plan": args.plan,
    });
    let mut rm = RunManifest::new("solve", seed, params);
    rm.hash_input(&args.qubo)?;
    if has_index {
        rm.hash_input(&sidecar)?;
    }
    rm.write_for(&args.out)?;

    let best = &solutions[0];
    writeln!(out, "solutions: {}", solutions.len())?;
    writeln!(out, "best energy: {}", best.energy)?;
    match u.index() {
        Some(index) => {
            let plan = decode_solution(&best.assignment, index)?;
            writeln!(out, "reduction: {}", reduction_ratio(index.layout(), &plan))?;
            if let Some(path) = &args.plan {
                plan.write(path)?;
            }
        }
        None if args.plan.is_some() => {
            return Err(CliError::Input(format!(
                "--plan needs the variable index {}",
                sidecar.display()
            )));
        }
        None => {}
    }
    Ok(())
}

pub fn search(args: &SearchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, d) = load(&args.model)?;
    let seed = resolve_seed(args.seed);
    let params = merge(
        model_params(&args.model, &d),
        json!({
            "acc_threshold": args.acc_threshold,
            "n_bin": args.n_bin,
            "n_iter": args.n_iter,
            "oracle_cmd": args.oracle.oracle_cmd,
            "surrogate": args.oracle.surrogate,
            "oracle_timeout": args.oracle_timeout,
            "gamma_init": args.gamma_init,
            "gamma_min": args.gamma_min,
            "gamma_max": args.gamma_max,
            "exact": args.exact,
            "anneal": if args.exact { serde_json::Value::Null } else { json!(args.anneal) },
            "out": args.out,
            "plan": args.plan,
        }),
    );
    let oracle = oracle(&args.oracle, args.oracle_timeout, seed, &d)?;
    let formulation = Formulation::new(d);
    let solver = if args.exact {
        SolverChoice::Exact
    } else {
        SolverChoice::Anneal(args.anneal.config(seed))
    };
    let config = SearchConfig {
        a_th: args.acc_threshold,
        n_bin: args.n_bin,
        n_iter: args.n_iter,
        gamma_init: match args.gamma_init {
            Some(g) => GammaInit::Fixed(g),
            None => GammaInit::LogUniform {
                lo: args.gamma_min,
                hi: args.gamma_max,
                seed,
            },
        },
    };

    let (state, error) = match run_search(&config, &formulation, solver, oracle) {
        Ok(state) => (state, None),
        Err(abort) => (*abort.state, Some(abort.error)),
    };
    let json = serde_json::to_string_pretty(&state).expect("state serializes") + "\n";
    write_file(&args.out, json)?;
    let mut rm = RunManifest::new("search", Some(seed), params);
    rm.hash_model(&args.model.manifest)?;
    rm.write_for(&args.out)?;

    writeln!(out, "evaluations: {}", state.trace.len())?;
    writeln!(out, "final beta: {}, gamma: {}", state.beta, state.gamma)?;
    if let Some(best) = &state.best {
        writeln!(
            out,
            "best reduction: {} (accuracy {}, beta {}, gamma {})",
            best.reduction, best.accuracy, best.beta, best.gamma
        )?;
        if let (Some(path), Some(plan)) = (&args.plan, &best.plan) {
            plan.write(path)?;
        }
    }
    if let Some(e) = error {
        return Err(e.into());
    }
    if state.best.is_none() {
        return Err(CliError::NoSolution(format!(
            "no evaluation reached accuracy {}",
            args.acc_threshold
        )));
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs, _out: &mut dyn Write) -> Result<(), CliError> {
    let (_, d) = load(&args.model)?;
    let seed = resolve_seed(args.seed);
    let params = merge(
        model_params(&args.model, &d),
        json!({
            "betas": args.betas.0,
            "gammas": args.gammas.0,
            "oracle_cmd": args.oracle.oracle_cmd,
            "surrogate": args.oracle.surrogate,
            "oracle_timeout": args.oracle_timeout,
            "exact": args.exact,
            "anneal": if args.exact { serde_json::Value::Null } else { json!(args.anneal) },
            "out": args.out,
        }),
    );
    let mut oracle = oracle(&args.oracle, args.oracle_timeout, seed, &d)?;
    let formulation = Formulation::new(d);
    let solver = if args.exact {
        SolverChoice::Exact
    } else {
        SolverChoice::Anneal(args.anneal.config(seed))
    };
    let points: Vec<(f64, f64)> = args
        .betas
        .0
        .iter()
        .flat_map(|&b| args.gammas.0.iter().map(move |&g| (b, g)))
        .collect();
    let outcomes: Vec<qubopress::Result<AqcOutcome>> = points
        .par_iter()
        .map(|&(beta, gamma)| aqc_step(Hyperparameters::new(beta, gamma)?, &formulation, &solver))
        .collect();

    let mut csv = csv::Writer::from_path(&args.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    let csv_err = |e: csv::Error| CliError::Input(format!("{}: {e}", args.out.display()));
    csv.write_record(["beta", "gamma", "energy", "R", "accuracy"])
        .map_err(csv_err)?;
    for (&(beta, gamma), outcome) in points.iter().zip(outcomes) {
        let outcome = outcome?;
        let accuracy = match evaluate_accuracy(&outcome.plan, &mut oracle) {
            Ok(a) => a.to_string(),
            Err(e) => {
                eprintln!("beta {beta}, gamma {gamma}: {e}");
                String::new()
            }
        };
        csv.write_record([
            beta.to_string(),
            gamma.to_string(),
            outcome.energy.to_string(),
            outcome.reduction.to_string(),
            accuracy,
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;

    let mut rm = RunManifest::new("sweep", Some(seed), params);
    rm.hash_model(&args.model.manifest)?;
    rm.write_for(&args.out)?;
    Ok(())
}

/// `Σ WM_n² + β Σ r_n² − γ R`, computed from the plan without any
/// coefficient family.
fn direct_energy(
    d: &ModelDescriptor,
    index: &VariableIndex,
    x: &[bool],
    hp: Hyperparameters,
) -> qubopress::Result<(f64, f64)> {
    let plan = decode_solution(x, index)?;
    let lp: f64 = weight_magnitude(d, &plan).iter().map(|w| w * w).sum();
    let lq: f64 = plan
        .layers
        .iter()
        .map(|l| (l.bits_removed as f64).powi(2))
        .sum();
    let r = reduction_ratio(index.layout(), &plan);
    Ok((
        lp + hp.beta * lq - hp.gamma * r,
        lp + hp.beta * lq + hp.gamma * r,
    ))
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

pub fn verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, d) = load(&args.model)?;
    let seed = resolve_seed(args.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = QuboCoefficients::from_descriptor(&d);
    let index = &coeffs.index;
    let beta0 = init_beta(&coeffs);
    let points: Vec<Hyperparameters> = (0..args.points)
        .map(|_| {
            let beta = beta0 * 10f64.powf(rng.random_range(-1.0..1.0));
            let gamma = 10f64.powf(rng.random_range(-3.0..0.0));
            Hyperparameters::new(beta, gamma)
        })
        .collect::<qubopress::Result<_>>()?;
    let tensors = model.tensors().ok();

    let mut energy_err = 0.0f64;
    let mut reduction_err = 0.0f64;
    let mut samples = 0usize;
    for &hp in &points {
        let u = assemble_qubo(&coeffs, hp)?;
        for _ in 0..args.samples {
            let x: Vec<bool> = (0..u.dim()).map(|_| rng.random()).collect();
            let e = u.energy(&x)?;
            let (direct, scale) = direct_energy(&d, index, &x, hp)?;
            energy_err = energy_err.max((e - direct).abs() / scale.max(f64::MIN_POSITIVE));
            let from_coeffs = coeffs.reduction(&x);
            let plan = decode_solution(&x, index)?;
            let measured = match tensors {
                Some(t) => measure(t, &plan, &d, &StepRule::FixedRange)?.reduction,
                None => reduction_ratio(index.layout(), &plan),
            };
            let scale = from_coeffs.abs().max(measured.abs());
            if scale > 0.0 {
                reduction_err = reduction_err.max((from_coeffs - measured).abs() / scale);
            }
            samples += 1;
        }
    }
    let mut checks = vec![
        Check {
            name: "energy identity",
            passed: energy_err <= 1e-9,
            detail: format!("{samples} samples, max relative error {energy_err:.3e}"),
        },
        Check {
            name: "reduction identity",
            passed: reduction_err <= 1e-12,
            detail: format!("{samples} samples, max relative error {reduction_err:.3e}"),
        },
    ];

    let cfg = args.anneal.config(seed);
    let mut compared = 0;
    let mut mismatches = 0;
    let mut largest = 0;
    for &hp in &points {
        let u = assemble_qubo(&coeffs, hp)?;
        largest = components(&u).iter().map(Vec::len).max().unwrap_or(0);
        if largest > args.max_block {
            break;
        }
        let exact = solve_exact(&u)?;
        let annealed = best_of(&anneal(&u, &cfg)?)?;
        if annealed.energy > exact.energy + 1e-9 * u.abs_sum().max(1.0) {
            mismatches += 1;
        }
        compared += 1;
    }
    if largest > args.max_block {
        writeln!(
            out,
            "solver equivalence: SKIPPED (largest independent block {largest} > {})",
            args.max_block
        )?;
    } else {
        checks.push(Check {
            name: "solver equivalence",
            passed: mismatches == 0,
            detail: format!("{compared} points, {mismatches} above the exact minimum"),
        });
    }

    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{}: {status} ({})", c.name, c.detail)?;
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(CliError::NoSolution("verification failed".into()))
    }
}
