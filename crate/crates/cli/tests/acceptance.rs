//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! ```text
//! cargo test --release -p qubopress-cli --test acceptance
//! ```

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use qubopress::compress::{fixed_range_step, measure, quantize};
use qubopress::descriptor::{Granularity, Model, ModelDescriptor};
use qubopress::search::{
    aqc_step, hyperparameter_search, init_beta, Axis, Evaluation, Formulation, GammaInit,
    PipelineProbe, SearchConfig, Searcher, SolverChoice, SurrogateOracle,
};
use qubopress::solver::{anneal, best_of, AnnealConfig};
use qubopress::{
    assemble_qubo, decode_solution, AccuracyOracle, Hyperparameters, QuboCoefficients, QuboMatrix,
    StepRule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Outcome;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn descriptor(rel: &str, granularity: Granularity) -> ModelDescriptor {
    Model::load(fixtures().join(rel))
        .unwrap()
        .descriptor(granularity, None)
        .unwrap()
}

fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

fn problem_sizes() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("lenet5/manifest.json", Granularity::Filter, 28),
        ("lenet5/manifest.json", Granularity::Channel, 108),
        ("gtsr_cnn.json", Granularity::Filter, 233),
        ("resnet9.json", Granularity::Filter, 2264),
        ("vgg16.json", Granularity::Filter, 4263),
    ];
    let sizes: Vec<usize> = cases
        .iter()
        .map(|&(rel, g, _)| descriptor(rel, g).problem_size())
        .collect();
    let elapsed = start.elapsed();
    let exact = cases.iter().zip(&sizes).all(|(c, &s)| c.2 == s);
    outcome(
        exact && elapsed < Duration::from_secs(1),
        format!("sizes {sizes:?} in {elapsed:.2?}"),
    )
}

/// `L_p + β L_q − γ R` straight from group statistics: squared sums of mean
/// magnitudes, squared bits removed, and the bit-count reduction ratio.
fn hamiltonian(d: &ModelDescriptor, x: &[bool], beta: f64, gamma: f64) -> (f64, f64) {
    let groups = d.group_count();
    let (mut p_at, mut q_at) = (0, groups);
    let (mut lp, mut lq, mut removed) = (0.0, 0.0, 0.0);
    for layer in &d.layers {
        let p = &x[p_at..p_at + layer.groups.len()];
        p_at += layer.groups.len();
        let q = &x[q_at..q_at + layer.q_bits as usize];
        q_at += layer.q_bits as usize;
        let r: u32 = q.iter().enumerate().map(|(k, &b)| (b as u32) << k).sum();
        let wm: f64 = layer
            .groups
            .iter()
            .zip(p)
            .filter(|(_, &pi)| pi)
            .map(|(g, _)| g.l1_norm / g.count as f64)
            .sum();
        lp += wm * wm;
        lq += f64::from(r * r);
        for (g, &pi) in layer.groups.iter().zip(p) {
            let n = g.count as f64;
            let kept = if pi { 0.0 } else { n * f64::from(d.b_max - r) };
            removed += n * f64::from(d.b_max) - kept;
        }
    }
    let r = removed / d.total_bits as f64;
    (lp + beta * lq - gamma * r, lp + beta * lq + gamma * r)
}

fn energy_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let descriptors = [
        descriptor("lenet5/manifest.json", Granularity::Filter),
        descriptor("lenet5/manifest.json", Granularity::Channel),
        descriptor("tiny/manifest.json", Granularity::Filter),
        descriptor("gtsr_cnn.json", Granularity::Filter),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for d in &descriptors {
        let coeffs = QuboCoefficients::from_descriptor(d);
        let beta0 = init_beta(&coeffs);
        for _ in 0..5 {
            let beta = beta0 * 10f64.powf(rng.random_range(-2.0..2.0));
            let gamma = 10f64.powf(rng.random_range(-3.0..1.0));
            let u = assemble_qubo(&coeffs, Hyperparameters::new(beta, gamma).unwrap()).unwrap();
            for _ in 0..1000 {
                let x = random_x(&mut rng, u.dim());
                let e = u.energy(&x).unwrap();
                let (direct, scale) = hamiltonian(d, &x, beta, gamma);
                worst = worst.max((e - direct).abs() / scale.max(f64::MIN_POSITIVE));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(30),
        format!(
            "{} descriptors, {checked} evaluations, max relative error {worst:.2e}, {elapsed:.2?}",
            descriptors.len()
        ),
    )
}

fn reduction_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = [
        ("lenet5/manifest.json", Granularity::Filter),
        ("lenet5/manifest.json", Granularity::Channel),
        ("tiny/manifest.json", Granularity::Filter),
    ];
    let mut worst = 0.0f64;
    let mut plans = 0;
    for (rel, g) in cases {
        let model = Model::load(fixtures().join(rel)).unwrap();
        let d = model.descriptor(g, None).unwrap();
        let coeffs = QuboCoefficients::from_descriptor(&d);
        for _ in 0..500 {
            let x = random_x(&mut rng, coeffs.index.dim());
            let plan = decode_solution(&x, &coeffs.index).unwrap();
            let measured = measure(model.tensors().unwrap(), &plan, &d, &StepRule::FixedRange)
                .unwrap()
                .reduction;
            let formed = coeffs.reduction(&x);
            let scale = measured.abs().max(formed.abs());
            if scale > 0.0 {
                worst = worst.max((measured - formed).abs() / scale);
            }
            plans += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{plans} plans over 3 descriptors, max relative error {worst:.2e}"),
    )
}

/// Minimum over all `2^n` assignments, each evaluated from the dense matrix.
fn enumerate_min(dense: &[Vec<f64>]) -> f64 {
    let n = dense.len();
    (0u32..1 << n)
        .map(|m| {
            let mut e = 0.0;
            for r in (0..n).filter(|&r| m >> r & 1 == 1) {
                for c in (r..n).filter(|&c| m >> c & 1 == 1) {
                    e += dense[r][c];
                }
            }
            e
        })
        .fold(f64::INFINITY, f64::min)
}

fn solver_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut hits = 0;
    for instance in 0..100u64 {
        let n = rng.random_range(4..=16);
        let mut dense = vec![vec![0.0; n]; n];
        let mut triplets = Vec::new();
        for (r, row) in dense.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate().skip(r) {
                *cell = rng.random_range(-1.0..=1.0);
                triplets.push((r, c, *cell));
            }
        }
        let u = QuboMatrix::from_triplets(n, triplets).unwrap();
        let cfg = AnnealConfig {
            seed: instance,
            ..AnnealConfig::default()
        };
        let best = best_of(&anneal(&u, &cfg).unwrap()).unwrap();
        let target = enumerate_min(&dense);
        if best.energy <= target + 1e-9 * u.abs_sum() {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        hits >= 95 && elapsed < Duration::from_secs(300),
        format!("{hits}/100 reached the enumerated minimum in {elapsed:.2?}"),
    )
}

fn three_variable_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut instances = vec![[3.0, -5.0, 7.0, 11.0, -13.0, 17.0]];
    instances.extend(
        (0..200).map(|_| std::array::from_fn(|_| f64::from(rng.random_range(-1000i32..=1000)))),
    );
    let mut mismatches = 0;
    for [u11, u22, u33, u12, u13, u23] in instances.iter().copied() {
        let u = QuboMatrix::from_triplets(
            3,
            [
                (0, 0, u11),
                (1, 1, u22),
                (2, 2, u33),
                (0, 1, u12),
                (0, 2, u13),
                (1, 2, u23),
            ],
        )
        .unwrap();
        let closed = [
            ([true, true, true], u11 + u22 + u33 + u12 + u13 + u23),
            ([true, false, false], u11),
            ([false, true, false], u22),
            ([false, false, true], u33),
            ([true, true, false], u11 + u22 + u12),
            ([true, false, true], u11 + u33 + u13),
            ([false, true, true], u22 + u33 + u23),
            ([false, false, false], 0.0),
        ];
        for (x, h) in closed {
            if u.energy(&x).unwrap() != h {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!(
            "{} instances x 8 states, {mismatches} mismatches",
            instances.len()
        ),
    )
}

fn rmse_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let weights: Vec<f64> = (0..100_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let mut ratios = Vec::new();
    for b in [4, 6, 8] {
        let s = fixed_range_step(max_abs, b);
        let mse = weights
            .iter()
            .map(|&w| (quantize(w, s, b) - w).powi(2))
            .sum::<f64>()
            / weights.len() as f64;
        ratios.push(mse.sqrt() / (s / 12f64.sqrt()));
    }
    let within = ratios.iter().all(|r| (r - 1.0).abs() <= 0.05);
    let doubles =
        (2..=8).all(|b| fixed_range_step(max_abs, b - 1) == 2.0 * fixed_range_step(max_abs, b));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    outcome(
        within && doubles,
        format!(
            "RMSE/(s/sqrt 12) for b=4,6,8: [{}]; step doubles per removed bit: {doubles}",
            shown.join(", ")
        ),
    )
}

fn binary_search_resolution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n_bin = 5;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..20 {
        let x_l = rng.random_range(0.0..5.0);
        let x_u = x_l + rng.random_range(0.5..20.0);
        let theta = rng.random_range(x_l..x_u);
        let step = (x_u - x_l) / f64::from(1u32 << n_bin);
        let eval = |feasible: bool| Evaluation {
            energy: 0.0,
            reduction: 0.0,
            accuracy: if feasible { 1.0 } else { 0.0 },
            plan: None,
        };

        let below = |hp: Hyperparameters| Ok(eval(hp.gamma <= theta));
        let mut s = Searcher::new(below, 0.5, n_bin);
        let got = s
            .bin_search_max(x_l, x_u, Axis::Gamma { beta: 1.0 })
            .unwrap();
        let err_max = (got - theta).abs();

        let above = |hp: Hyperparameters| Ok(eval(hp.beta >= theta));
        let mut s = Searcher::new(above, 0.5, n_bin);
        let got = s
            .bin_search_min(x_l, x_u, Axis::Beta { gamma: 1.0 })
            .unwrap();
        let err_min = (got - theta).abs();

        for e in [err_max, err_min] {
            worst = worst.max(e / step);
            if e > step {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("40 searches, worst error {worst:.3} resolution steps"),
    )
}

fn search_optimality() -> Outcome {
    let start = Instant::now();
    let d = descriptor("tiny/manifest.json", Granularity::Filter);
    let formulation = Formulation::new(d);
    let beta0 = init_beta(&formulation.coeffs);
    let n_bin = 5;
    let eps = 1.0 / f64::from(1u32 << n_bin);

    // 11 x 11 lattice: beta linear over the (0, 2 beta0] range the beta search
    // covers, gamma geometric over the range the gamma bracket explores.
    let betas: Vec<f64> = (0..11).map(|j| 2.0 * beta0 * f64::from(j) / 10.0).collect();
    let gammas: Vec<f64> = (0..11)
        .map(|k| 1e-3 * 1e4f64.powf(f64::from(k) / 10.0))
        .collect();
    let mut oracle = SurrogateOracle::new(&formulation.descriptor);
    let mut lattice = Vec::new();
    for &beta in &betas {
        for &gamma in &gammas {
            let hp = Hyperparameters::new(beta, gamma).unwrap();
            let out = aqc_step(hp, &formulation, &SolverChoice::Exact).unwrap();
            lattice.push((out.reduction, oracle.accuracy(&out.plan).unwrap()));
        }
    }

    let mut details = Vec::new();
    let mut passed = true;
    for a_th in [0.8, 0.85, 0.9, 0.95] {
        let grid_best = lattice
            .iter()
            .filter(|(_, a)| *a >= a_th)
            .map(|(r, _)| *r)
            .fold(f64::NEG_INFINITY, f64::max);
        for seed in 0..3 {
            let config = SearchConfig {
                a_th,
                n_bin,
                n_iter: 5,
                gamma_init: GammaInit::LogUniform {
                    lo: 1e-3,
                    hi: 1.0,
                    seed,
                },
            };
            let probe = PipelineProbe {
                formulation: &formulation,
                solver: SolverChoice::Exact,
                oracle: SurrogateOracle::new(&formulation.descriptor),
            };
            let state = hyperparameter_search(&config, probe, beta0).unwrap();
            let best = state.best.expect("a valid checkpoint");
            let ok = best.reduction >= grid_best - eps && best.accuracy >= a_th;
            passed &= ok;
            if seed == 0 || !ok {
                details.push(format!(
                    "a_th {a_th}: search R {:.4} vs lattice {:.4}",
                    best.reduction, grid_best
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(120);
    outcome(
        passed,
        format!("{} (tolerance {eps}), {elapsed:.2?}", details.join("; ")),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_qubopress"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let manifest = fixtures().join("tiny/manifest.json");
    let manifest = manifest.to_str().unwrap();
    let outputs = [
        "u.qubo",
        "u.qubo.index.json",
        "sol.jsonl",
        "sol.jsonl.run.json",
        "state.json",
        "state.json.run.json",
    ];
    let runs: Vec<Vec<Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path();
            let ok = run_cli(
                p,
                &[
                    "build", manifest, "--beta", "0.002", "--gamma", "0.5", "--out", "u.qubo",
                ],
            ) && run_cli(
                p,
                &["solve", "u.qubo", "--seed", "17", "--out", "sol.jsonl"],
            ) && run_cli(
                p,
                &[
                    "search",
                    manifest,
                    "--acc-threshold",
                    "0.85",
                    "--surrogate",
                    "--seed",
                    "17",
                    "--sweeps",
                    "300",
                    "--out",
                    "state.json",
                ],
            );
            assert!(ok, "CLI run failed");
            outputs
                .iter()
                .map(|f| std::fs::read(p.join(f)).unwrap())
                .collect()
        })
        .collect();
    let identical = runs[0] == runs[1];
    outcome(
        identical,
        format!(
            "solve and surrogate search, {} files compared byte for byte",
            outputs.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("problem-size reproduction", problem_sizes),
        ("energy identity", energy_identity),
        ("coefficient/measurement equivalence", reduction_equivalence),
        ("solver oracle equivalence", solver_equivalence),
        ("three-variable enumeration", three_variable_enumeration),
        ("quantization RMSE law", rmse_law),
        ("binary-search resolution", binary_search_resolution),
        ("end-to-end search optimality", search_optimality),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {}: {status} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!(
        "criterion 10: NOT CHECKED reported accuracies need trained networks and an external oracle"
    );
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
