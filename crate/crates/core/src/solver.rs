//! Minimizers for `x·U·x`: exhaustive enumeration for small instances and a
//! replica-based annealer (single-bit Metropolis with parallel tempering).
//!
//! Every solver breaks energy ties by the assignment read as an integer,
//! bit 0 least significant, lowest first.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::QuboMatrix;

/// Largest dimension `brute_force_solve` will enumerate.
pub const MAX_ENUMERATION_DIM: usize = 26;

/// Relative slack, against `Σ|U|`, under which two energies count as equal.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub assignment: Vec<bool>,
    pub energy: f64,
}

impl Solution {
    /// Wrap an assignment, computing its energy from scratch.
    pub fn evaluate(u: &QuboMatrix, assignment: Vec<bool>) -> Result<Self> {
        let energy = u.energy(&assignment)?;
        Ok(Self { assignment, energy })
    }

    /// Bit 0 first.
    pub fn bitstring(&self) -> String {
        self.assignment
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    /// Energy, then assignment as an integer.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.energy
            .total_cmp(&other.energy)
            .then_with(|| cmp_assignments(&self.assignment, &other.assignment))
    }
}

/// Compare two assignments as unsigned integers with bit 0 least significant.
pub fn cmp_assignments(a: &[bool], b: &[bool]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .rev()
            .zip(b.iter().rev())
            .map(|(x, y)| x.cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

pub fn best_of(solutions: &[Solution]) -> Result<Solution> {
    solutions
        .iter()
        .min_by(|a, b| a.rank_cmp(b))
        .cloned()
        .ok_or(Error::EmptySolutions)
}

/// Symmetric adjacency view of `U` for O(degree) flip updates.
struct Couplings {
    diag: Vec<f64>,
    starts: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
}

impl Couplings {
    fn new(u: &QuboMatrix) -> Self {
        let n = u.dim();
        let mut diag = vec![0.0; n];
        let mut degree = vec![0usize; n];
        for &(r, c, v) in u.entries() {
            if r == c {
                diag[r] = v;
            } else {
                degree[r] += 1;
                degree[c] += 1;
            }
        }
        let mut starts = Vec::with_capacity(n + 1);
        starts.push(0);
        for d in &degree {
            starts.push(starts.last().unwrap() + d);
        }
        let mut fill = starts[..n].to_vec();
        let mut neighbors = vec![(0, 0.0); starts[n]];
        for &(r, c, v) in u.entries().iter().filter(|e| e.0 != e.1) {
            neighbors[fill[r]] = (c, v);
            fill[r] += 1;
            neighbors[fill[c]] = (r, v);
            fill[c] += 1;
        }
        Self {
            diag,
            starts,
            neighbors,
        }
    }

    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[self.starts[i]..self.starts[i + 1]]
    }
}

/// A binary state with its local fields `h_i = Σ_j w_ij x_j` and energy.
#[derive(Clone)]
struct Chain {
    x: Vec<bool>,
    field: Vec<f64>,
    energy: f64,
}

impl Chain {
    fn zeros(n: usize) -> Self {
        Self {
            x: vec![false; n],
            field: vec![0.0; n],
            energy: 0.0,
        }
    }

    fn random(c: &Couplings, rng: &mut impl Rng) -> Self {
        let mut chain = Self::zeros(c.dim());
        for i in 0..c.dim() {
            if rng.random::<bool>() {
                chain.flip(c, i);
            }
        }
        chain
    }

    fn delta(&self, c: &Couplings, i: usize) -> f64 {
        let d = c.diag[i] + self.field[i];
        if self.x[i] {
            -d
        } else {
            d
        }
    }

    fn flip(&mut self, c: &Couplings, i: usize) {
        self.energy += self.delta(c, i);
        let sign = if self.x[i] { -1.0 } else { 1.0 };
        self.x[i] = !self.x[i];
        for &(j, w) in c.row(i) {
            self.field[j] += sign * w;
        }
    }

    /// Recompute energy and fields from scratch, returning the drift.
    fn resync(&mut self, c: &Couplings) -> f64 {
        let mut energy = 0.0;
        for i in 0..c.dim() {
            self.field[i] = c
                .row(i)
                .iter()
                .filter(|(j, _)| self.x[*j])
                .map(|(_, w)| w)
                .sum();
        }
        for i in (0..c.dim()).filter(|&i| self.x[i]) {
            energy += c.diag[i];
            energy += c
                .row(i)
                .iter()
                .filter(|&&(j, _)| j > i && self.x[j])
                .map(|(_, w)| w)
                .sum::<f64>();
        }
        let drift = energy - self.energy;
        self.energy = energy;
        drift
    }
}

/// Exact minimum by enumerating all `2^dim` assignments in Gray-code order.
pub fn brute_force_solve(u: &QuboMatrix) -> Result<Solution> {
    let n = u.dim();
    if n > MAX_ENUMERATION_DIM {
        return Err(Error::TooLarge {
            dim: n,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let c = Couplings::new(u);
    let tol = TIE_TOLERANCE * u.abs_sum();
    let mut chain = Chain::zeros(n);
    let mut mask = 0u64;
    let (mut best_energy, mut best_mask) = (0.0, 0u64);
    for step in 1u64..(1u64 << n) {
        let bit = step.trailing_zeros() as usize;
        chain.flip(&c, bit);
        mask ^= 1 << bit;
        if step % 4096 == 0 {
            chain.resync(&c);
        }
        let e = chain.energy;
        if e < best_energy - tol || (e <= best_energy + tol && mask < best_mask) {
            best_energy = e;
            best_mask = mask;
        }
    }
    let assignment = (0..n).map(|i| best_mask >> i & 1 == 1).collect();
    Solution::evaluate(u, assignment)
}

/// Connected components of the coupling graph, each sorted ascending.
pub fn components(u: &QuboMatrix) -> Vec<Vec<usize>> {
    let n = u.dim();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(r, c, _) in u.entries() {
        let (a, b) = (find(&mut parent, r), find(&mut parent, c));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
}

/// Exact minimum of a QUBO whose coupling graph splits into independent
/// components of at most [`MAX_ENUMERATION_DIM`] variables each.
///
/// Per-component lowest-integer minimizers combine into the overall
/// lowest-integer minimizer, so the tie-break rule is preserved.
pub fn solve_exact(u: &QuboMatrix) -> Result<Solution> {
    let comps = components(u);
    if let Some(big) = comps.iter().find(|c| c.len() > MAX_ENUMERATION_DIM) {
        return Err(Error::TooLarge {
            dim: big.len(),
            max: MAX_ENUMERATION_DIM,
        });
    }
    let mut assignment = vec![false; u.dim()];
    for comp in &comps {
        let local = |i: usize| comp.binary_search(&i).expect("same component");
        let sub = QuboMatrix::from_triplets(
            comp.len(),
            u.entries()
                .iter()
                .filter(|e| comp.binary_search(&e.0).is_ok())
                .map(|&(r, c, v)| (local(r), local(c), v)),
        )?;
        let best = brute_force_solve(&sub)?;
        for (k, &i) in comp.iter().enumerate() {
            assignment[i] = best.assignment[k];
        }
    }
    Solution::evaluate(u, assignment)
}

/// Geometric temperature ladder. Unset ends default to `10·max|U|` and
/// `10⁻³·min nonzero |U|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub t_hot: Option<f64>,
    pub t_cold: Option<f64>,
    pub rungs: usize,
}

impl Default for Ladder {
    fn default() -> Self {
        Self {
            t_hot: None,
            t_cold: None,
            rungs: 16,
        }
    }
}

impl Ladder {
    /// Temperatures from cold to hot.
    pub fn temperatures(&self, u: &QuboMatrix) -> Result<Vec<f64>> {
        let scale_hi = u.max_abs();
        let scale_lo = u.min_abs_nonzero().unwrap_or(1.0);
        let t_hot = self
            .t_hot
            .unwrap_or(if scale_hi > 0.0 { 10.0 * scale_hi } else { 1.0 });
        let t_cold = self.t_cold.unwrap_or(1e-3 * scale_lo);
        if self.rungs == 0 || !(t_cold > 0.0 && t_hot > t_cold && t_hot.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature ladder needs rungs >= 1 and T_hot > T_cold > 0 \
                 (got {} rungs, T_hot {t_hot}, T_cold {t_cold})",
                self.rungs
            )));
        }
        if self.rungs == 1 {
            return Ok(vec![t_cold]);
        }
        let ratio = (t_hot / t_cold).ln() / (self.rungs - 1) as f64;
        Ok((0..self.rungs)
            .map(|k| t_cold * (ratio * k as f64).exp())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub replicas: usize,
    /// Metropolis sweeps per replica; every rung sweeps once per step.
    pub sweeps: u64,
    pub ladder: Ladder,
    /// Sweeps between replica-exchange rounds.
    pub exchange_interval: u64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            replicas: 32,
            sweeps: 10_000,
            ladder: Ladder::default(),
            exchange_interval: 1,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub const MAX_SWEEPS: u64 = 100_000_000;

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::InvalidConfig("replicas must be at least 1".into()));
        }
        if !(1..=Self::MAX_SWEEPS).contains(&self.sweeps) {
            return Err(Error::InvalidConfig(format!(
                "sweeps must be in 1..={}",
                Self::MAX_SWEEPS
            )));
        }
        if self.exchange_interval == 0 {
            return Err(Error::InvalidConfig(
                "exchange interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Uphill moves costlier than this many `T` are rejected without drawing;
/// their acceptance probability is below `e⁻⁴⁰`.
const MAX_UPHILL: f64 = 40.0;

/// One replica's private generator, a separate stream of the run seed.
fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

/// Best state seen so far, with the integer tie-break.
struct Incumbent {
    x: Vec<bool>,
    energy: f64,
    tol: f64,
}

impl Incumbent {
    fn offer(&mut self, chain: &Chain) {
        if chain.energy < self.energy - self.tol
            || (chain.energy <= self.energy + self.tol
                && cmp_assignments(&chain.x, &self.x).is_lt())
        {
            self.x.clone_from(&chain.x);
            self.energy = chain.energy;
        }
    }
}

fn run_replica(
    u: &QuboMatrix,
    c: &Couplings,
    temps: &[f64],
    cfg: &AnnealConfig,
    replica: usize,
) -> Result<Solution> {
    let mut rng = replica_rng(cfg.seed, replica);
    let n = c.dim();
    let scale = u.abs_sum();
    let mut chains: Vec<Chain> = temps.iter().map(|_| Chain::random(c, &mut rng)).collect();
    let mut best = Incumbent {
        x: chains[0].x.clone(),
        energy: chains[0].energy,
        tol: TIE_TOLERANCE * scale,
    };
    chains.iter().for_each(|ch| best.offer(ch));

    for sweep in 1..=cfg.sweeps {
        for (chain, &t) in chains.iter_mut().zip(temps) {
            for i in 0..n {
                let delta = chain.delta(c, i);
                if delta <= 0.0
                    || (delta < MAX_UPHILL * t && rng.random::<f64>() < (-delta / t).exp())
                {
                    chain.flip(c, i);
                    best.offer(chain);
                }
            }
        }
        if sweep % cfg.exchange_interval == 0 {
            for k in 0..temps.len().saturating_sub(1) {
                let arg = (1.0 / temps[k] - 1.0 / temps[k + 1])
                    * (chains[k].energy - chains[k + 1].energy);
                if arg >= 0.0 || rng.random::<f64>() < arg.exp() {
                    chains.swap(k, k + 1);
                }
            }
        }
        if sweep % 1000 == 0 {
            for chain in &mut chains {
                let drift = chain.resync(c);
                debug_assert!(
                    drift.abs() <= 1e-9 * scale.max(1.0),
                    "energy bookkeeping drifted by {drift}"
                );
            }
        }
    }
    Solution::evaluate(u, best.x)
}

/// Sample `cfg.replicas` low-energy assignments, sorted best first.
///
/// Each replica runs its own temperature ladder with a private generator
/// derived from `(seed, replica)`, so the output does not depend on how
/// replicas are scheduled across threads.
pub fn anneal(u: &QuboMatrix, cfg: &AnnealConfig) -> Result<Vec<Solution>> {
    cfg.validate()?;
    let temps = cfg.ladder.temperatures(u)?;
    let c = Couplings::new(u);
    let mut out = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_replica(u, &c, &temps, cfg, r))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(Solution::rank_cmp);
    Ok(out)
}
