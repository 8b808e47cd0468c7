//! Coefficient families of the three energy terms.
//!
//! * `A[n][i][j]`: pruning loss, the product of the mean magnitudes of
//!   groups `i` and `j` in layer `n`, so that `Σ A p p = WM²`.
//! * `B[n][k][l] = 2^(k+l)`: quantization loss, the square of the
//!   bits-removed code.
//! * `D`, `E`, `F`: the compression rate, linear in `p` and `q` with a
//!   bilinear `p·q` correction for quantized bits of pruned groups.

use crate::descriptor::ModelDescriptor;
use crate::error::{Error, Result};

use super::index::VariableIndex;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Square {
    n: usize,
    data: Vec<f64>,
}

impl Square {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// `Σ_ij M[i][j] v_i v_j` over a binary vector.
    pub fn quadratic_form(&self, v: &[bool]) -> f64 {
        let mut total = 0.0;
        for i in (0..self.n).filter(|&i| v[i]) {
            for j in (0..self.n).filter(|&j| v[j]) {
                total += self.get(i, j);
            }
        }
        total
    }
}

pub fn build_pruning_coeffs(descriptor: &ModelDescriptor) -> Vec<Square> {
    descriptor
        .layers
        .iter()
        .map(|layer| {
            let mean: Vec<f64> = layer.groups.iter().map(|g| g.mean_magnitude()).collect();
            Square::from_fn(mean.len(), |i, j| mean[i] * mean[j])
        })
        .collect()
}

pub fn build_quant_coeffs(descriptor: &ModelDescriptor) -> Vec<Square> {
    descriptor
        .layers
        .iter()
        .map(|layer| Square::from_fn(layer.q_bits as usize, |k, l| (1u64 << (k + l)) as f64))
        .collect()
}

/// Compression-rate coefficients of one layer, all fractions of the total
/// model size `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionCoeffs {
    /// `D_i = N_i b_max / S`
    pub d: Vec<f64>,
    /// `E_k = 2^k Σ_i N_i / S`
    pub e: Vec<f64>,
    /// `F_ik = 2^k N_i / S`, row-major over (group, bit).
    pub f: Vec<f64>,
}

impl ReductionCoeffs {
    pub fn f(&self, group: usize, bit: usize) -> f64 {
        self.f[group * self.e.len() + bit]
    }
}

pub fn build_reduction_coeffs(descriptor: &ModelDescriptor) -> Vec<ReductionCoeffs> {
    let s = descriptor.total_bits as f64;
    let b_max = descriptor.b_max as f64;
    descriptor
        .layers
        .iter()
        .map(|layer| {
            let counts: Vec<f64> = layer.groups.iter().map(|g| g.count as f64).collect();
            let layer_count: f64 = counts.iter().sum();
            let bits = layer.q_bits as usize;
            let pow = |k: usize| (1u64 << k) as f64;
            ReductionCoeffs {
                d: counts.iter().map(|&n| n * b_max / s).collect(),
                e: (0..bits).map(|k| pow(k) * layer_count / s).collect(),
                f: counts
                    .iter()
                    .flat_map(|&n| (0..bits).map(move |k| pow(k) * n / s))
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCoefficients {
    pub a: Square,
    pub b: Square,
    pub reduction: ReductionCoeffs,
}

/// All coefficient families for one descriptor, with the variable layout
/// they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboCoefficients {
    pub index: VariableIndex,
    pub layers: Vec<LayerCoefficients>,
}

impl QuboCoefficients {
    pub fn from_descriptor(descriptor: &ModelDescriptor) -> Self {
        let layers = build_pruning_coeffs(descriptor)
            .into_iter()
            .zip(build_quant_coeffs(descriptor))
            .zip(build_reduction_coeffs(descriptor))
            .map(|((a, b), reduction)| LayerCoefficients { a, b, reduction })
            .collect();
        Self {
            index: VariableIndex::from_descriptor(descriptor),
            layers,
        }
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        if self.layers.len() != self.index.layer_count() {
            return Err(Error::CorruptIndex(format!(
                "{} coefficient layers for {} index layers",
                self.layers.len(),
                self.index.layer_count()
            )));
        }
        for (n, c) in self.layers.iter().enumerate() {
            let m = self.index.groups(n);
            let k = self.index.q_bits(n);
            if c.a.n() != m
                || c.b.n() != k
                || c.reduction.d.len() != m
                || c.reduction.e.len() != k
                || c.reduction.f.len() != m * k
            {
                return Err(Error::CorruptIndex(format!(
                    "layer {n}: coefficient shapes do not match {m} groups x {k} bits"
                )));
            }
        }
        Ok(())
    }

    /// `‖A‖₁ / ‖B‖₁` over the full symmetric matrices of every layer.
    pub fn beta_balance(&self) -> f64 {
        let a: f64 = self.layers.iter().map(|l| l.a.abs_sum()).sum();
        let b: f64 = self.layers.iter().map(|l| l.b.abs_sum()).sum();
        a / b
    }

    fn split(&self, x: &[bool], n: usize) -> (Vec<bool>, Vec<bool>) {
        let p = (0..self.index.groups(n))
            .map(|i| x[self.index.p(n, i)])
            .collect();
        let q = (0..self.index.q_bits(n))
            .map(|k| x[self.index.q(n, k)])
            .collect();
        (p, q)
    }

    /// `Σ A p p` evaluated from the coefficients.
    pub fn pruning_loss(&self, x: &[bool]) -> f64 {
        (0..self.layers.len())
            .map(|n| self.layers[n].a.quadratic_form(&self.split(x, n).0))
            .sum()
    }

    /// `Σ B q q` evaluated from the coefficients.
    pub fn quant_loss(&self, x: &[bool]) -> f64 {
        (0..self.layers.len())
            .map(|n| self.layers[n].b.quadratic_form(&self.split(x, n).1))
            .sum()
    }

    /// `Σ D p + Σ E q − Σ F p q` evaluated from the coefficients.
    pub fn reduction(&self, x: &[bool]) -> f64 {
        let mut total = 0.0;
        for (n, layer) in self.layers.iter().enumerate() {
            let (p, q) = self.split(x, n);
            let c = &layer.reduction;
            for (i, _) in p.iter().enumerate().filter(|(_, &v)| v) {
                total += c.d[i];
            }
            for (k, _) in q.iter().enumerate().filter(|(_, &v)| v) {
                total += c.e[k];
            }
            for (i, _) in p.iter().enumerate().filter(|(_, &v)| v) {
                for (k, _) in q.iter().enumerate().filter(|(_, &v)| v) {
                    total -= c.f(i, k);
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{descriptor_from_stats, Granularity, GroupStats};

    fn group(layer_id: usize, group_id: usize, count: u64, mean: f64) -> GroupStats {
        GroupStats {
            layer_id,
            group_id,
            count,
            l1_norm: mean * count as f64,
            max_abs: mean * 2.0,
        }
    }

    #[test]
    fn pruning_coeffs_are_outer_product() {
        let d = descriptor_from_stats(
            vec![(0, vec![group(0, 0, 4, 1.5), group(0, 1, 4, 0.5)])],
            Granularity::Filter,
            8,
        )
        .unwrap();
        let a = &build_pruning_coeffs(&d)[0];
        assert_eq!(a.get(0, 0), 2.25);
        assert_eq!(a.get(0, 1), 0.75);
        assert_eq!(a.get(1, 0), 0.75);
        assert_eq!(a.get(1, 1), 0.25);
    }

    #[test]
    fn zero_weights_give_zero_pruning_coeffs() {
        let d = descriptor_from_stats(
            vec![(0, vec![group(0, 0, 3, 0.0), group(0, 1, 3, 0.0)])],
            Granularity::Filter,
            8,
        )
        .unwrap();
        let a = &build_pruning_coeffs(&d)[0];
        assert!((0..2).all(|i| (0..2).all(|j| a.get(i, j) == 0.0)));
    }

    #[test]
    fn quant_coeffs_powers_of_two() {
        let d = descriptor_from_stats(vec![(0, vec![group(0, 0, 1, 1.0)])], Granularity::Filter, 8)
            .unwrap();
        let b = &build_quant_coeffs(&d)[0];
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(1, 2), 8.0);
        assert_eq!(b.get(2, 2), 16.0);
        assert_eq!(b.abs_sum(), 49.0);
    }

    #[test]
    fn quant_form_is_code_squared() {
        let d = descriptor_from_stats(vec![(0, vec![group(0, 0, 1, 1.0)])], Granularity::Filter, 8)
            .unwrap();
        let b = &build_quant_coeffs(&d)[0];
        for code in 0u32..8 {
            let q: Vec<bool> = (0..3).map(|k| code >> k & 1 == 1).collect();
            assert_eq!(b.quadratic_form(&q), (code * code) as f64);
        }
    }

    #[test]
    fn single_group_reduction_coeffs() {
        let d = descriptor_from_stats(
            vec![(0, vec![group(0, 0, 10, 0.3)])],
            Granularity::Filter,
            8,
        )
        .unwrap();
        let r = &build_reduction_coeffs(&d)[0];
        assert_eq!(r.d, vec![1.0]);
        assert_eq!(r.e, vec![1.0 / 8.0, 2.0 / 8.0, 4.0 / 8.0]);
        assert_eq!(r.f, vec![1.0 / 8.0, 2.0 / 8.0, 4.0 / 8.0]);

        let c = QuboCoefficients::from_descriptor(&d);
        // everything pruned removes all bits; pruned bits are not counted twice
        assert_eq!(c.reduction(&[true, false, false, false]), 1.0);
        assert_eq!(c.reduction(&[true, true, true, true]), 1.0);
        assert_eq!(c.reduction(&[false; 4]), 0.0);
    }
}
