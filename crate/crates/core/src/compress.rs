//! Decoding annealer output into a compression plan, applying it to real
//! weights, and measuring what it did.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::{ModelDescriptor, WeightTensor};
use crate::error::{Error, Result};
use crate::qubo::{ModelLayout, VariableIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub id: usize,
    /// `true` removes the group.
    #[serde(with = "bits_as_ints")]
    pub prune: Vec<bool>,
    /// `r_n`; the layer keeps `b_max - r_n` bits.
    pub bits_removed: u32,
}

/// Pruning masks and bits removed for every layer. Serializes to the plan
/// file handed to accuracy oracles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub layers: Vec<LayerPlan>,
}

impl CompressionPlan {
    /// Nothing pruned, full precision.
    pub fn identity(layout: &ModelLayout) -> Self {
        Self {
            layers: layout
                .layers
                .iter()
                .map(|l| LayerPlan {
                    id: l.id,
                    prune: vec![false; l.counts.len()],
                    bits_removed: 0,
                })
                .collect(),
        }
    }

    pub fn bit_width(&self, layer: usize, b_max: u32) -> u32 {
        b_max - self.layers[layer].bits_removed
    }

    /// Check the plan fits `layout` and keeps at least one bit per layer.
    pub fn validate(&self, layout: &ModelLayout) -> Result<()> {
        if self.layers.len() != layout.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.layers.len(),
                found: self.layers.len(),
            });
        }
        for (plan, l) in self.layers.iter().zip(&layout.layers) {
            let bad = |reason: String| Error::InvalidLayer {
                layer: plan.id,
                reason,
            };
            if plan.id != l.id {
                return Err(bad(format!(
                    "plan layer id {} where {} expected",
                    plan.id, l.id
                )));
            }
            if plan.prune.len() != l.counts.len() {
                return Err(bad(format!(
                    "{} pruning flags for {} groups",
                    plan.prune.len(),
                    l.counts.len()
                )));
            }
            let max = (1u32 << l.q_bits) - 1;
            if plan.bits_removed > max || plan.bits_removed >= layout.b_max {
                return Err(bad(format!(
                    "{} bits removed exceeds the limit of {}",
                    plan.bits_removed,
                    max.min(layout.b_max - 1)
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

mod bits_as_ints {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        bits.iter()
            .map(|&b| b as u8)
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Vec::<u8>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "pruning flag must be 0 or 1, got {other}"
                ))),
            })
            .collect()
    }
}

pub fn decode_solution(x: &[bool], index: &VariableIndex) -> Result<CompressionPlan> {
    if x.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: x.len(),
        });
    }
    let layout = index.layout();
    let plan = CompressionPlan {
        layers: layout
            .layers
            .iter()
            .enumerate()
            .map(|(n, l)| LayerPlan {
                id: l.id,
                prune: (0..l.counts.len()).map(|i| x[index.p(n, i)]).collect(),
                bits_removed: (0..l.q_bits as usize)
                    .map(|k| (x[index.q(n, k)] as u32) << k)
                    .sum(),
            })
            .collect(),
    };
    for (n, layer) in plan.layers.iter().enumerate() {
        if layer.bits_removed >= layout.b_max {
            return Err(Error::CorruptIndex(format!(
                "layer {n} decodes to {} bits removed with b_max {}",
                layer.bits_removed, layout.b_max
            )));
        }
    }
    Ok(plan)
}

pub fn encode_plan(plan: &CompressionPlan, index: &VariableIndex) -> Result<Vec<bool>> {
    plan.validate(index.layout())?;
    let mut x = vec![false; index.dim()];
    for (n, layer) in plan.layers.iter().enumerate() {
        for (i, &p) in layer.prune.iter().enumerate() {
            x[index.p(n, i)] = p;
        }
        for k in 0..index.q_bits(n) {
            x[index.q(n, k)] = layer.bits_removed >> k & 1 == 1;
        }
    }
    Ok(x)
}

/// How each layer's quantization step is chosen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// `s_n = max|w_n| / 2^b_n`: the grid spans the layer's range, and the
    /// step doubles for every bit removed.
    #[default]
    FixedRange,
    /// Caller-provided step per layer, independent of bit-width.
    Explicit(Vec<f64>),
}

impl StepRule {
    pub fn step(&self, layer: usize, max_abs: f64, bit_width: u32) -> f64 {
        match self {
            StepRule::FixedRange => fixed_range_step(max_abs, bit_width),
            StepRule::Explicit(s) => s[layer],
        }
    }
}

pub fn fixed_range_step(max_abs: f64, bit_width: u32) -> f64 {
    max_abs / 2f64.powi(bit_width as i32)
}

/// `c_n`, the ratio between RMSE and `2^r_n` under the fixed-range rule.
pub fn rmse_scale(max_abs: f64, b_max: u32) -> f64 {
    fixed_range_step(max_abs, b_max) / 12f64.sqrt()
}

/// `clamp(⌊w/s⌉, −2^b, 2^b − 1)·s` with ties rounded to even.
pub fn quantize(w: f64, step: f64, bit_width: u32) -> f64 {
    if step == 0.0 {
        return 0.0;
    }
    let top = 2f64.powi(bit_width as i32);
    (w / step).round_ties_even().clamp(-top, top - 1.0) * step
}

fn check_tensors(tensors: &[WeightTensor], descriptor: &ModelDescriptor) -> Result<()> {
    if tensors.len() != descriptor.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: descriptor.layers.len(),
            found: tensors.len(),
        });
    }
    for (t, l) in tensors.iter().zip(&descriptor.layers) {
        let groups = descriptor.granularity.group_count(t.shape());
        if t.layer_id() != l.id || groups != l.groups.len() {
            return Err(Error::InvalidLayer {
                layer: t.layer_id(),
                reason: format!(
                    "tensor of shape {:?} does not match descriptor layer {} with {} groups",
                    t.shape(),
                    l.id,
                    l.groups.len()
                ),
            });
        }
    }
    Ok(())
}

/// Zero pruned groups and quantize the rest.
pub fn apply_compression(
    tensors: &[WeightTensor],
    descriptor: &ModelDescriptor,
    plan: &CompressionPlan,
    rule: &StepRule,
) -> Result<Vec<WeightTensor>> {
    check_tensors(tensors, descriptor)?;
    plan.validate(&ModelLayout::from_descriptor(descriptor))?;
    Ok(tensors
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let layer = &descriptor.layers[n];
            let b_n = plan.bit_width(n, descriptor.b_max);
            let step = rule.step(n, layer.max_abs(), b_n);
            let group_len = descriptor.granularity.group_len(t.shape());
            let data = t
                .data()
                .chunks_exact(group_len)
                .zip(&plan.layers[n].prune)
                .flat_map(|(chunk, &pruned)| {
                    chunk.iter().map(move |&w| {
                        if pruned {
                            0.0
                        } else {
                            quantize(w as f64, step, b_n) as f32
                        }
                    })
                })
                .collect();
            t.with_data(data)
        })
        .collect())
}

/// `WM_n = Σ_i (‖w‖₁/N)·p_i` per layer.
pub fn weight_magnitude(descriptor: &ModelDescriptor, plan: &CompressionPlan) -> Vec<f64> {
    descriptor
        .layers
        .iter()
        .zip(&plan.layers)
        .map(|(l, p)| {
            l.groups
                .iter()
                .zip(&p.prune)
                .filter(|(_, &pruned)| pruned)
                .map(|(g, _)| g.mean_magnitude())
                .sum()
        })
        .collect()
}

/// Fraction of the `b_max`-bit model removed, `Σ_n CR_n`.
pub fn reduction_ratio(layout: &ModelLayout, plan: &CompressionPlan) -> f64 {
    let s = layout.total_bits() as f64;
    let b_max = layout.b_max as f64;
    layout
        .layers
        .iter()
        .zip(&plan.layers)
        .map(|(l, p)| {
            let b_n = (layout.b_max - p.bits_removed) as f64;
            l.counts
                .iter()
                .zip(&p.prune)
                .map(|(&count, &pruned)| {
                    let n = count as f64;
                    n * b_max - n * b_n * (1.0 - pruned as u8 as f64)
                })
                .sum::<f64>()
                / s
        })
        .sum()
}

/// Reduction against a 32-bit floating-point baseline.
pub fn reduction_ratio_fp32(layout: &ModelLayout, plan: &CompressionPlan) -> f64 {
    let total: u64 = layout.layers.iter().flat_map(|l| &l.counts).sum();
    let kept: u64 = layout
        .layers
        .iter()
        .zip(&plan.layers)
        .map(|(l, p)| {
            let b_n = (layout.b_max - p.bits_removed) as u64;
            l.counts
                .iter()
                .zip(&p.prune)
                .filter(|(_, &pruned)| !pruned)
                .map(|(&c, _)| c * b_n)
                .sum::<u64>()
        })
        .sum();
    1.0 - kept as f64 / (32.0 * total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub weight_magnitude: Vec<f64>,
    /// Quantization error over unpruned weights, per layer.
    pub rmse: Vec<f64>,
    pub reduction: f64,
    pub reduction_fp32: f64,
}

pub fn measure(
    tensors: &[WeightTensor],
    plan: &CompressionPlan,
    descriptor: &ModelDescriptor,
    rule: &StepRule,
) -> Result<Measurement> {
    let compressed = apply_compression(tensors, descriptor, plan, rule)?;
    let rmse = tensors
        .iter()
        .zip(&compressed)
        .enumerate()
        .map(|(n, (orig, comp))| {
            let group_len = descriptor.granularity.group_len(orig.shape());
            let (mut sq, mut count) = (0.0f64, 0usize);
            for ((o, c), &pruned) in orig
                .data()
                .chunks_exact(group_len)
                .zip(comp.data().chunks_exact(group_len))
                .zip(&plan.layers[n].prune)
            {
                if pruned {
                    continue;
                }
                for (&a, &b) in o.iter().zip(c) {
                    let e = a as f64 - b as f64;
                    sq += e * e;
                }
                count += group_len;
            }
            if count == 0 {
                0.0
            } else {
                (sq / count as f64).sqrt()
            }
        })
        .collect();
    let layout = ModelLayout::from_descriptor(descriptor);
    Ok(Measurement {
        weight_magnitude: weight_magnitude(descriptor, plan),
        rmse,
        reduction: reduction_ratio(&layout, plan),
        reduction_fp32: reduction_ratio_fp32(&layout, plan),
    })
}
