//! Upper-triangular sparse QUBO matrix and its text exchange format.
//!
//! ```text
//! dim 3
//! 0 0 1.5
//! 0 2 -0.25
//! ```
//!
//! One header line, then `row col value` triplets with `row <= col`,
//! 0-indexed, values in shortest round-trip decimal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::coeffs::QuboCoefficients;
use super::index::VariableIndex;
use super::Hyperparameters;

/// Entries smaller than this are dropped during assembly.
pub const DROP_THRESHOLD: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct QuboMatrix {
    dim: usize,
    /// Sorted by (row, col), `row <= col`, unique.
    entries: Vec<(usize, usize, f64)>,
    index: Option<VariableIndex>,
}

impl QuboMatrix {
    /// Build from arbitrary `(row, col, value)` triplets. Lower-triangle
    /// entries are folded onto the upper triangle and duplicates summed.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.max(c) + 1,
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "entry ({r}, {c}) is not finite"
                )));
            }
            *map.entry((r.min(c), r.max(c))).or_insert(0.0) += v;
        }
        Ok(Self::from_map(dim, map, None))
    }

    fn from_map(
        dim: usize,
        map: BTreeMap<(usize, usize), f64>,
        index: Option<VariableIndex>,
    ) -> Self {
        let entries = map
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        Self {
            dim,
            entries,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn index(&self) -> Option<&VariableIndex> {
        self.index.as_ref()
    }

    pub fn with_index(mut self, index: VariableIndex) -> Result<Self> {
        if index.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: index.dim(),
            });
        }
        self.index = Some(index);
        Ok(self)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let key = (row.min(col), row.max(col));
        self.entries
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&key))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    /// `x·U·x`, accumulated in (row, col) order.
    pub fn energy(&self, x: &[bool]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self
            .entries
            .iter()
            .filter(|&&(r, c, _)| x[r] && x[c])
            .map(|&(_, _, v)| v)
            .sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.2.abs()).fold(0.0, f64::max)
    }

    pub fn min_abs_nonzero(&self) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| e.2.abs())
            .filter(|&v| v > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Sum of absolute entries; the natural energy scale for tolerances.
    pub fn abs_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.2.abs()).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.dim]; self.dim];
        for &(r, c, v) in &self.entries {
            m[r][c] = v;
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim {}\n", self.dim);
        for &(r, c, v) in &self.entries {
            writeln!(out, "{r} {c} {v:?}").expect("writing to a String");
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        let (line, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing `dim N` header".into()))?;
        let dim = header
            .strip_prefix("dim")
            .and_then(|rest| rest.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(line, format!("expected `dim N`, found `{header}`")))?;

        let mut map = BTreeMap::new();
        for (line, text) in lines {
            let fields: Vec<&str> = text.split_whitespace().collect();
            let [r, c, v] = fields[..] else {
                return Err(parse_err(
                    line,
                    format!("expected `row col value`, found `{text}`"),
                ));
            };
            let r: usize = r
                .parse()
                .map_err(|_| parse_err(line, format!("bad row `{r}`")))?;
            let c: usize = c
                .parse()
                .map_err(|_| parse_err(line, format!("bad column `{c}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| parse_err(line, format!("bad value `{v}`")))?;
            if r > c {
                return Err(parse_err(
                    line,
                    format!("entry ({r}, {c}) below the diagonal"),
                ));
            }
            if c >= dim {
                return Err(parse_err(
                    line,
                    format!("index {c} out of range for dim {dim}"),
                ));
            }
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{v}`")));
            }
            if map.insert((r, c), v).is_some() {
                return Err(parse_err(line, format!("duplicate entry ({r}, {c})")));
            }
        }
        Ok(Self::from_map(dim, map, None))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }
}

/// `x·U·x` for a binary `x`.
pub fn evaluate_energy(u: &QuboMatrix, x: &[bool]) -> Result<f64> {
    u.energy(x)
}

/// Combine the coefficient families into `U` for the given `β`, `γ`.
///
/// Symmetric double sums are folded onto the upper triangle, so the
/// off-diagonal `p·p` and `q·q` couplings carry a factor of two.
pub fn assemble_qubo(coeffs: &QuboCoefficients, hp: Hyperparameters) -> Result<QuboMatrix> {
    hp.validate()?;
    coeffs.check_shapes()?;
    let idx = &coeffs.index;
    let Hyperparameters { beta, gamma } = hp;
    let mut map = BTreeMap::new();
    let mut put = |r: usize, c: usize, v: f64| {
        debug_assert!(r <= c);
        if v.abs() >= DROP_THRESHOLD {
            map.insert((r, c), v);
        }
    };
    for (n, layer) in coeffs.layers.iter().enumerate() {
        let groups = idx.groups(n);
        let bits = idx.q_bits(n);
        let red = &layer.reduction;
        for i in 0..groups {
            put(
                idx.p(n, i),
                idx.p(n, i),
                layer.a.get(i, i) - gamma * red.d[i],
            );
            for j in i + 1..groups {
                put(idx.p(n, i), idx.p(n, j), 2.0 * layer.a.get(i, j));
            }
            for k in 0..bits {
                put(idx.p(n, i), idx.q(n, k), gamma * red.f(i, k));
            }
        }
        for k in 0..bits {
            put(
                idx.q(n, k),
                idx.q(n, k),
                beta * layer.b.get(k, k) - gamma * red.e[k],
            );
            for l in k + 1..bits {
                put(idx.q(n, k), idx.q(n, l), 2.0 * beta * layer.b.get(k, l));
            }
        }
    }
    Ok(QuboMatrix::from_map(idx.dim(), map, Some(idx.clone())))
}
