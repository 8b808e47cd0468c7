//! QUBO formulation of joint pruning and quantization.
//!
//! The Hamiltonian `H = L_p + β·L_q − γ·R` is quadratic in the binary
//! pruning masks `p` and quantization code bits `q`, so it can be written as
//! `x·U·x` with `x = vect(P, Q)` and `U` upper-triangular.

mod coeffs;
mod index;
mod matrix;

pub use coeffs::{
    build_pruning_coeffs, build_quant_coeffs, build_reduction_coeffs, LayerCoefficients,
    QuboCoefficients, ReductionCoeffs, Square,
};
pub use index::{
    IndexSidecar, LayoutLayer, ModelLayout, SidecarVariable, VarKey, VarKind, VariableIndex,
};
pub use matrix::{assemble_qubo, evaluate_energy, QuboMatrix, DROP_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Weight of the quantization loss.
    pub beta: f64,
    /// Weight of the compression reward.
    pub gamma: f64,
}

impl Hyperparameters {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        let hp = Self { beta, gamma };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite()
            && self.beta >= 0.0
            && self.gamma.is_finite()
            && self.gamma >= 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "hyperparameters must be finite and non-negative (beta {}, gamma {})",
                self.beta, self.gamma
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{descriptor_from_stats, Granularity, GroupStats, ModelDescriptor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptor(rng: &mut impl Rng, layers: usize, max_groups: usize) -> ModelDescriptor {
        let layers = (0..layers)
            .map(|id| {
                let m = rng.random_range(1..=max_groups);
                let groups = (0..m)
                    .map(|g| {
                        let count = rng.random_range(1..=50u64);
                        let max_abs = rng.random_range(0.01..2.0);
                        let l1_norm = max_abs * count as f64 * rng.random_range(0.0..1.0);
                        GroupStats {
                            layer_id: id,
                            group_id: g,
                            count,
                            l1_norm,
                            max_abs,
                        }
                    })
                    .collect();
                (id, groups)
            })
            .collect();
        descriptor_from_stats(layers, Granularity::Filter, 8).unwrap()
    }

    /// Independent evaluation of `L_p + β L_q − γ R` straight from group
    /// statistics, without any coefficient or matrix.
    fn direct_energy(d: &ModelDescriptor, x: &[bool], hp: Hyperparameters) -> f64 {
        let groups: usize = d.group_count();
        let mut q_at = groups;
        let mut p_at = 0;
        let (mut lp, mut lq, mut removed) = (0.0, 0.0, 0.0);
        for layer in &d.layers {
            let p = &x[p_at..p_at + layer.groups.len()];
            p_at += layer.groups.len();
            let q = &x[q_at..q_at + layer.q_bits as usize];
            q_at += layer.q_bits as usize;
            let r: u32 = q.iter().enumerate().map(|(k, &b)| (b as u32) << k).sum();
            let b_n = (d.b_max - r) as f64;
            let wm: f64 = layer
                .groups
                .iter()
                .zip(p)
                .filter(|(_, &pi)| pi)
                .map(|(g, _)| g.l1_norm / g.count as f64)
                .sum();
            lp += wm * wm;
            lq += (r * r) as f64;
            for (g, &pi) in layer.groups.iter().zip(p) {
                let n = g.count as f64;
                removed += n * d.b_max as f64 - n * b_n * (1.0 - pi as u8 as f64);
            }
        }
        lp + hp.beta * lq - hp.gamma * removed / d.total_bits as f64
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn energy_identity_random_descriptor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = random_descriptor(&mut rng, 3, 6);
        let coeffs = QuboCoefficients::from_descriptor(&d);
        let hp = Hyperparameters::new(0.013, 0.7).unwrap();
        let u = assemble_qubo(&coeffs, hp).unwrap();
        for _ in 0..1000 {
            let x: Vec<bool> = (0..u.dim()).map(|_| rng.random()).collect();
            let e = u.energy(&x).unwrap();
            let direct = direct_energy(&d, &x, hp);
            assert!(rel_close(e, direct, 1e-9), "{e} vs {direct}");
        }
    }

    #[test]
    fn degenerate_hyperparameters_leave_pruning_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = random_descriptor(&mut rng, 2, 5);
        let coeffs = QuboCoefficients::from_descriptor(&d);
        let u = assemble_qubo(&coeffs, Hyperparameters::new(0.0, 0.0).unwrap()).unwrap();
        assert!(u
            .entries()
            .iter()
            .all(|&(r, c, _)| r < d.group_count() && c < d.group_count()));
        for _ in 0..100 {
            let x: Vec<bool> = (0..u.dim()).map(|_| rng.random()).collect();
            assert!(rel_close(
                u.energy(&x).unwrap(),
                coeffs.pruning_loss(&x),
                1e-12
            ));
        }
    }

    #[test]
    fn pruning_form_matches_squared_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_descriptor(&mut rng, 1, 1);
        let mut d = d;
        d.layers[0].groups = (0..3)
            .map(|g| GroupStats {
                layer_id: 0,
                group_id: g,
                count: 4,
                l1_norm: rng.random_range(0.0..4.0),
                max_abs: 1.0,
            })
            .collect();
        let a = &build_pruning_coeffs(&d)[0];
        for mask in 0u32..8 {
            let p: Vec<bool> = (0..3).map(|i| mask >> i & 1 == 1).collect();
            let wm: f64 = d.layers[0]
                .groups
                .iter()
                .zip(&p)
                .filter(|(_, &b)| b)
                .map(|(g, _)| g.mean_magnitude())
                .sum();
            assert!(rel_close(a.quadratic_form(&p), wm * wm, 1e-12));
        }
    }

    #[test]
    fn no_cross_layer_couplings() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = random_descriptor(&mut rng, 4, 5);
        let coeffs = QuboCoefficients::from_descriptor(&d);
        let u = assemble_qubo(&coeffs, Hyperparameters::new(0.5, 2.0).unwrap()).unwrap();
        let idx = u.index().unwrap();
        for &(r, c, _) in u.entries() {
            assert_eq!(idx.key(r).unwrap().layer, idx.key(c).unwrap().layer);
        }
    }

    #[test]
    fn rejects_negative_hyperparameters() {
        assert!(Hyperparameters::new(-1.0, 0.0).is_err());
        assert!(Hyperparameters::new(0.0, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn pruning_coeffs_rank_one_and_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_descriptor(&mut rng, 2, 6);
            for a in build_pruning_coeffs(&d) {
                for i in 0..a.n() {
                    for j in 0..a.n() {
                        prop_assert_eq!(a.get(i, j), a.get(j, i));
                        prop_assert!(a.get(i, j) >= 0.0);
                        let lhs = a.get(i, j).powi(2);
                        let rhs = a.get(i, i) * a.get(j, j);
                        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + f64::MIN_POSITIVE);
                    }
                }
            }
        }

        #[test]
        fn reduction_in_unit_interval(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_descriptor(&mut rng, 3, 5);
            let c = QuboCoefficients::from_descriptor(&d);
            for _ in 0..20 {
                let x: Vec<bool> = (0..c.index.dim()).map(|_| rng.random()).collect();
                let r = c.reduction(&x);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r), "R = {}", r);
            }
        }

        #[test]
        fn scaling_weights_scales_only_pruning(seed in any::<u64>(), factor in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_descriptor(&mut rng, 2, 4);
            let base = QuboCoefficients::from_descriptor(&d);
            let scaled = QuboCoefficients::from_descriptor(&d.scaled(factor));
            for (b, s) in base.layers.iter().zip(&scaled.layers) {
                for i in 0..b.a.n() {
                    for j in 0..b.a.n() {
                        let want = b.a.get(i, j) * factor * factor;
                        prop_assert!(rel_close(s.a.get(i, j), want, 1e-12));
                    }
                }
                prop_assert_eq!(&b.b, &s.b);
                prop_assert_eq!(&b.reduction, &s.reduction);
            }
        }
    }
}
