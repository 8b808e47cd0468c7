//! Automated search for the hyperparameters `β` (quantization-loss weight)
//! and `γ` (compression reward).
//!
//! Each iteration brackets `γ` by doubling or halving until the accuracy
//! threshold is crossed, binary-searches the largest feasible `γ` with `β`
//! fixed, then the smallest feasible `β` in `(0, 2β]` with `γ` fixed. Every
//! oracle evaluation is traced and the best valid compression checkpointed.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::compress::{decode_solution, CompressionPlan};
use crate::descriptor::ModelDescriptor;
use crate::error::{Error, Result};
use crate::qubo::{assemble_qubo, Hyperparameters, QuboCoefficients};
use crate::solver::{anneal, best_of, solve_exact, AnnealConfig};

/// Doublings or halvings attempted while bracketing `γ`.
pub const GAMMA_STEP_CAP: u32 = 32;

/// Environment variable handed to external oracles for reproducible
/// fine-tuning.
pub const ORACLE_SEED_ENV: &str = "QUBOPRESS_ORACLE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("failed to run oracle `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("oracle exited with {status}: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("oracle timed out after {0:?}")]
    Timeout(Duration),
    #[error("oracle output is not a decimal accuracy: {0:?}")]
    Unparseable(String),
    #[error("oracle accuracy {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("oracle I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Maps a compression plan to test accuracy in `[0, 1]`.
pub trait AccuracyOracle {
    fn accuracy(&mut self, plan: &CompressionPlan) -> Result<f64, OracleError>;
}

/// Query `oracle` and enforce the `[0, 1]` contract.
pub fn evaluate_accuracy(
    plan: &CompressionPlan,
    oracle: &mut impl AccuracyOracle,
) -> Result<f64, OracleError> {
    let a = oracle.accuracy(plan)?;
    if !(0.0..=1.0).contains(&a) {
        return Err(OracleError::OutOfRange(a));
    }
    Ok(a)
}

/// Deterministic stand-in for fine-tune-and-evaluate, monotone in both
/// pruned magnitude and bits removed:
///
/// `a = clamp(a₀ − k_p·ΣWM/ΣWM_max − k_q·Σr/Σ(b_max−1) − [a layer is gone], 0, 1)`
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOracle {
    pub base: f64,
    pub prune_penalty: f64,
    pub quant_penalty: f64,
    magnitudes: Vec<Vec<f64>>,
    b_max: u32,
}

impl SurrogateOracle {
    pub fn new(descriptor: &ModelDescriptor) -> Self {
        Self {
            base: 0.99,
            prune_penalty: 0.3,
            quant_penalty: 0.2,
            magnitudes: descriptor
                .layers
                .iter()
                .map(|l| l.groups.iter().map(|g| g.mean_magnitude()).collect())
                .collect(),
            b_max: descriptor.b_max,
        }
    }

    pub fn score(&self, plan: &CompressionPlan) -> f64 {
        let (mut wm, mut wm_max, mut removed) = (0.0, 0.0, 0u64);
        let mut collapsed = false;
        for (mags, layer) in self.magnitudes.iter().zip(&plan.layers) {
            wm_max += mags.iter().sum::<f64>();
            wm += mags
                .iter()
                .zip(&layer.prune)
                .filter(|(_, &p)| p)
                .map(|(m, _)| m)
                .sum::<f64>();
            removed += layer.bits_removed as u64;
            collapsed |= layer.prune.iter().all(|&p| p);
        }
        let prune_term = if wm_max > 0.0 { wm / wm_max } else { 0.0 };
        let max_removed = self.magnitudes.len() as f64 * (self.b_max - 1) as f64;
        let a = self.base
            - self.prune_penalty * prune_term
            - self.quant_penalty * removed as f64 / max_removed
            - if collapsed { 1.0 } else { 0.0 };
        a.clamp(0.0, 1.0)
    }
}

impl AccuracyOracle for SurrogateOracle {
    fn accuracy(&mut self, plan: &CompressionPlan) -> Result<f64, OracleError> {
        Ok(self.score(plan))
    }
}

/// Runs `<program> <args...> <plan-path>` and reads one decimal from stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOracle {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    /// Exported as `QUBOPRESS_ORACLE_SEED` when set.
    pub seed: Option<u64>,
}

impl CommandOracle {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

    /// Split a whitespace-separated command line.
    pub fn from_command_line(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
            timeout: Self::DEFAULT_TIMEOUT,
            seed: None,
        })
    }

    fn run(&self, plan_path: &Path) -> Result<String, OracleError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg(plan_path)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(seed) = self.seed {
            cmd.env(ORACLE_SEED_ENV, seed.to_string());
        }
        let mut child = cmd.spawn().map_err(|source| OracleError::Spawn {
            command: self.program.clone(),
            source,
        })?;
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let status = match child.wait_timeout(self.timeout)? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(OracleError::Timeout(self.timeout));
            }
        };
        let out = out_reader.join().expect("reader thread")?;
        let err = err_reader.join().expect("reader thread");
        if !status.success() {
            return Err(OracleError::Failed {
                status: status.to_string(),
                stderr: err.trim().to_owned(),
            });
        }
        Ok(out)
    }
}

impl AccuracyOracle for CommandOracle {
    fn accuracy(&mut self, plan: &CompressionPlan) -> Result<f64, OracleError> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("plan.json");
        std::fs::write(&path, plan.to_json() + "\n")?;
        let out = self.run(&path)?;
        let text = out.trim();
        let a: f64 = text
            .parse()
            .map_err(|_| OracleError::Unparseable(text.to_owned()))?;
        if !a.is_finite() {
            return Err(OracleError::Unparseable(text.to_owned()));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(OracleError::OutOfRange(a));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverChoice {
    Anneal(AnnealConfig),
    /// Exhaustive enumeration per independent component.
    Exact,
}

/// A descriptor together with its precomputed coefficients.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub descriptor: ModelDescriptor,
    pub coeffs: QuboCoefficients,
}

impl Formulation {
    pub fn new(descriptor: ModelDescriptor) -> Self {
        let coeffs = QuboCoefficients::from_descriptor(&descriptor);
        Self { descriptor, coeffs }
    }
}

/// Starting `β`: balances the l1 norms of the pruning and quantization
/// coefficients, `‖A‖₁ / ‖B‖₁`.
pub fn init_beta(coeffs: &QuboCoefficients) -> f64 {
    coeffs.beta_balance()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AqcOutcome {
    pub plan: CompressionPlan,
    pub reduction: f64,
    pub energy: f64,
    pub assignment: Vec<bool>,
}

/// Assemble, minimize, decode.
pub fn aqc_step(
    hp: Hyperparameters,
    formulation: &Formulation,
    solver: &SolverChoice,
) -> Result<AqcOutcome> {
    let u = assemble_qubo(&formulation.coeffs, hp)?;
    let best = match solver {
        SolverChoice::Anneal(cfg) => best_of(&anneal(&u, cfg)?)?,
        SolverChoice::Exact => solve_exact(&u)?,
    };
    let plan = decode_solution(&best.assignment, &formulation.coeffs.index)?;
    Ok(AqcOutcome {
        plan,
        reduction: formulation.coeffs.reduction(&best.assignment),
        energy: best.energy,
        assignment: best.assignment,
    })
}

/// One oracle evaluation at a hyperparameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub energy: f64,
    pub reduction: f64,
    pub accuracy: f64,
    pub plan: Option<CompressionPlan>,
}

/// Something that can score a hyperparameter point.
pub trait Probe {
    fn evaluate(&mut self, hp: Hyperparameters) -> Result<Evaluation>;
}

impl<F> Probe for F
where
    F: FnMut(Hyperparameters) -> Result<Evaluation>,
{
    fn evaluate(&mut self, hp: Hyperparameters) -> Result<Evaluation> {
        self(hp)
    }
}

/// `aqc` followed by `acc`.
pub struct PipelineProbe<'a, O> {
    pub formulation: &'a Formulation,
    pub solver: SolverChoice,
    pub oracle: O,
}

impl<O: AccuracyOracle> Probe for PipelineProbe<'_, O> {
    fn evaluate(&mut self, hp: Hyperparameters) -> Result<Evaluation> {
        let out = aqc_step(hp, self.formulation, &self.solver)?;
        let accuracy = evaluate_accuracy(&out.plan, &mut self.oracle)?;
        Ok(Evaluation {
            energy: out.energy,
            reduction: out.reduction,
            accuracy,
            plan: Some(out.plan),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Bracket,
    GammaSearch,
    BetaSearch,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub phase: Phase,
    pub beta: f64,
    pub gamma: f64,
    pub energy: f64,
    pub reduction: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub reduction: f64,
    pub beta: f64,
    pub gamma: f64,
    pub accuracy: f64,
    pub plan: Option<CompressionPlan>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub beta: f64,
    pub gamma: f64,
    /// Highest-reduction evaluation that met the accuracy threshold.
    pub best: Option<Checkpoint>,
    pub trace: Vec<TraceRow>,
}

/// Which hyperparameter a binary search moves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    Gamma { beta: f64 },
    Beta { gamma: f64 },
}

impl Axis {
    fn at(self, x: f64) -> (f64, f64) {
        match self {
            Axis::Gamma { beta } => (beta, x),
            Axis::Beta { gamma } => (x, gamma),
        }
    }

    fn phase(self) -> Phase {
        match self {
            Axis::Gamma { .. } => Phase::GammaSearch,
            Axis::Beta { .. } => Phase::BetaSearch,
        }
    }
}

/// Search procedures sharing one probe, trace and checkpoint.
pub struct Searcher<P> {
    probe: P,
    a_th: f64,
    n_bin: u32,
    state: SearchState,
}

impl<P: Probe> Searcher<P> {
    pub fn new(probe: P, a_th: f64, n_bin: u32) -> Self {
        Self {
            probe,
            a_th,
            n_bin,
            state: SearchState::default(),
        }
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn into_state(self) -> SearchState {
        self.state
    }

    /// Evaluate, trace, and checkpoint if valid and strictly better.
    pub fn evaluate(&mut self, phase: Phase, beta: f64, gamma: f64) -> Result<f64> {
        let ev = self.probe.evaluate(Hyperparameters::new(beta, gamma)?)?;
        self.state.trace.push(TraceRow {
            phase,
            beta,
            gamma,
            energy: ev.energy,
            reduction: ev.reduction,
            accuracy: ev.accuracy,
        });
        let improves = self
            .state
            .best
            .as_ref()
            .is_none_or(|b| ev.reduction > b.reduction);
        if ev.accuracy >= self.a_th && improves {
            self.state.best = Some(Checkpoint {
                reduction: ev.reduction,
                beta,
                gamma,
                accuracy: ev.accuracy,
                plan: ev.plan,
            });
        }
        Ok(ev.accuracy)
    }

    /// Double `γ` until accuracy drops below the threshold; returns the
    /// first failing value.
    pub fn find_upper_gamma(&mut self, beta: f64, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        let mut g = gamma;
        for _ in 0..GAMMA_STEP_CAP {
            g *= 2.0;
            if self.evaluate(Phase::Bracket, beta, g)? < self.a_th {
                return Ok(g);
            }
        }
        Err(Error::NoThresholdCrossing {
            cap: GAMMA_STEP_CAP,
        })
    }

    /// Halve `γ` until accuracy meets the threshold; returns the first
    /// passing value.
    pub fn find_lower_gamma(&mut self, beta: f64, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        let mut g = gamma;
        for _ in 0..GAMMA_STEP_CAP {
            g /= 2.0;
            if self.evaluate(Phase::Bracket, beta, g)? >= self.a_th {
                return Ok(g);
            }
        }
        Err(Error::NoThresholdCrossing {
            cap: GAMMA_STEP_CAP,
        })
    }

    /// Largest feasible value in `[x_l, x_u]` after `n_bin` halvings;
    /// returns the final lower bound.
    pub fn bin_search_max(&mut self, mut x_l: f64, mut x_u: f64, axis: Axis) -> Result<f64> {
        check_interval(x_l, x_u)?;
        for _ in 0..self.n_bin {
            let x_t = x_l + (x_u - x_l) / 2.0;
            let (beta, gamma) = axis.at(x_t);
            if self.evaluate(axis.phase(), beta, gamma)? > self.a_th {
                x_l = x_t;
            } else {
                x_u = x_t;
            }
        }
        Ok(x_l)
    }

    /// Smallest feasible value in `[x_l, x_u]` after `n_bin` halvings;
    /// returns the final upper bound.
    pub fn bin_search_min(&mut self, mut x_l: f64, mut x_u: f64, axis: Axis) -> Result<f64> {
        check_interval(x_l, x_u)?;
        for _ in 0..self.n_bin {
            let x_t = x_l + (x_u - x_l) / 2.0;
            let (beta, gamma) = axis.at(x_t);
            if self.evaluate(axis.phase(), beta, gamma)? > self.a_th {
                x_u = x_t;
            } else {
                x_l = x_t;
            }
        }
        Ok(x_u)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "gamma bracketing needs a positive starting value, got {gamma}"
        )));
    }
    Ok(())
}

fn check_interval(x_l: f64, x_u: f64) -> Result<()> {
    if !(x_l < x_u && x_l.is_finite() && x_u.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "binary search needs x_l < x_u, got [{x_l}, {x_u}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaInit {
    Fixed(f64),
    /// Log-uniform draw from `[lo, hi]`.
    LogUniform {
        lo: f64,
        hi: f64,
        seed: u64,
    },
}

impl GammaInit {
    pub fn resolve(self) -> f64 {
        match self {
            GammaInit::Fixed(g) => g,
            GammaInit::LogUniform { lo, hi, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t: f64 = rng.random();
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Accuracy threshold for a valid solution.
    pub a_th: f64,
    /// Midpoint evaluations per binary search.
    pub n_bin: u32,
    /// Outer iterations.
    pub n_iter: u32,
    pub gamma_init: GammaInit,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            a_th: 0.9,
            n_bin: 5,
            n_iter: 5,
            gamma_init: GammaInit::LogUniform {
                lo: 1e-3,
                hi: 1.0,
                seed: 0,
            },
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        // a_th = 0 is admitted: every plan is then feasible and the search
        // ends at the bracketing cap.
        if !(0.0..1.0).contains(&self.a_th) {
            return Err(Error::InvalidConfig(format!(
                "accuracy threshold must be in [0, 1), got {}",
                self.a_th
            )));
        }
        if self.n_bin == 0 || self.n_iter == 0 {
            return Err(Error::InvalidConfig(
                "n_bin and n_iter must be at least 1".into(),
            ));
        }
        if let GammaInit::LogUniform { lo, hi, .. } = self.gamma_init {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "gamma range [{lo}, {hi}] must be positive and ordered"
                )));
            }
        }
        Ok(())
    }
}

/// A search that stopped on an error, with everything traced up to then.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct SearchAbort {
    #[source]
    pub error: Error,
    pub state: Box<SearchState>,
}

pub fn hyperparameter_search<P: Probe>(
    config: &SearchConfig,
    probe: P,
    beta0: f64,
) -> Result<SearchState, SearchAbort> {
    if let Err(error) = config.validate() {
        return Err(SearchAbort {
            error,
            state: Box::default(),
        });
    }
    let mut s = Searcher::new(probe, config.a_th, config.n_bin);
    let outcome = run_iterations(&mut s, config, beta0);
    let state = s.into_state();
    match outcome {
        Ok(()) => Ok(state),
        Err(error) => Err(SearchAbort {
            error,
            state: Box::new(state),
        }),
    }
}

fn run_iterations<P: Probe>(s: &mut Searcher<P>, config: &SearchConfig, beta0: f64) -> Result<()> {
    let mut beta = beta0;
    let mut gamma = config.gamma_init.resolve();
    s.state.beta = beta;
    s.state.gamma = gamma;
    let mut a = s.evaluate(Phase::Init, beta, gamma)?;
    for _ in 0..config.n_iter {
        let (g_l, g_u) = if a >= config.a_th {
            (gamma, s.find_upper_gamma(beta, gamma)?)
        } else {
            (s.find_lower_gamma(beta, gamma)?, gamma)
        };
        gamma = s.bin_search_max(g_l, g_u, Axis::Gamma { beta })?;
        s.state.gamma = gamma;
        beta = s.bin_search_min(0.0, 2.0 * beta, Axis::Beta { gamma })?;
        s.state.beta = beta;
        a = s.evaluate(Phase::Checkpoint, beta, gamma)?;
    }
    Ok(())
}

/// Search with the full pipeline: the initial `β` comes from the
/// formulation's coefficients.
pub fn run_search<O: AccuracyOracle>(
    config: &SearchConfig,
    formulation: &Formulation,
    solver: SolverChoice,
    oracle: O,
) -> Result<SearchState, SearchAbort> {
    let beta0 = init_beta(&formulation.coeffs);
    let probe = PipelineProbe {
        formulation,
        solver,
        oracle,
    };
    hyperparameter_search(config, probe, beta0)
}
