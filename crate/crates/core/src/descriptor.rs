//! Weight ingestion and the per-group statistics consumed by the QUBO
//! coefficient builders.
//!
//! A model manifest is a JSON document listing layers in order. Each layer
//! either references a raw little-endian `f32` blob (`weights`) or ships
//! precomputed group statistics (`groups`) for models too large to carry
//! their weights around.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense weights of one layer, `[out, in, kh, kw]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    layer_id: usize,
    shape: [usize; 4],
    data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(layer_id: usize, shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidLayer {
                layer: layer_id,
                reason: format!("shape {shape:?} has a zero dimension"),
            });
        }
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                layer: layer_id,
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                layer: layer_id,
                index,
            });
        }
        Ok(Self {
            layer_id,
            shape,
            data,
        })
    }

    pub fn layer_id(&self) -> usize {
        self.layer_id
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same layer and shape, new values. Values are assumed finite.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            layer_id: self.layer_id,
            shape: self.shape,
            data,
        }
    }
}

/// How a layer's weights are partitioned into prunable groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One group per output channel.
    #[default]
    Filter,
    /// One group per (output channel, input channel) kernel slice.
    Channel,
}

impl Granularity {
    pub fn group_count(self, shape: [usize; 4]) -> usize {
        match self {
            Granularity::Filter => shape[0],
            Granularity::Channel => shape[0] * shape[1],
        }
    }

    /// Number of contiguous weights in each group.
    pub fn group_len(self, shape: [usize; 4]) -> usize {
        match self {
            Granularity::Filter => shape[1] * shape[2] * shape[3],
            Granularity::Channel => shape[2] * shape[3],
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "filter" => Ok(Granularity::Filter),
            "channel" => Ok(Granularity::Channel),
            other => Err(format!(
                "unknown granularity `{other}` (expected filter|channel)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub layer_id: usize,
    pub group_id: usize,
    pub count: u64,
    pub l1_norm: f64,
    pub max_abs: f64,
}

impl GroupStats {
    /// Average absolute weight, `‖w‖₁ / N`.
    pub fn mean_magnitude(&self) -> f64 {
        self.l1_norm / self.count as f64
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidLayer {
            layer: self.layer_id,
            reason,
        };
        if self.count == 0 {
            return Err(bad(format!("group {} has zero weights", self.group_id)));
        }
        if !(self.l1_norm.is_finite() && self.max_abs.is_finite())
            || self.l1_norm < 0.0
            || self.max_abs < 0.0
        {
            return Err(bad(format!(
                "group {} has invalid statistics (l1_norm {}, max_abs {})",
                self.group_id, self.l1_norm, self.max_abs
            )));
        }
        let bound = self.count as f64 * self.max_abs;
        if self.l1_norm > bound * (1.0 + 1e-9) {
            return Err(bad(format!(
                "group {}: l1_norm {} exceeds count * max_abs = {}",
                self.group_id, self.l1_norm, bound
            )));
        }
        Ok(())
    }
}

/// Partition `tensor` into groups in (out_channel, in_channel) order.
pub fn compute_group_stats(tensor: &WeightTensor, granularity: Granularity) -> Vec<GroupStats> {
    let group_len = granularity.group_len(tensor.shape);
    tensor
        .data
        .chunks_exact(group_len)
        .enumerate()
        .map(|(group_id, chunk)| {
            let (l1_norm, max_abs) = chunk.iter().fold((0.0f64, 0.0f64), |(l1, mx), &w| {
                let a = (w as f64).abs();
                (l1 + a, mx.max(a))
            });
            GroupStats {
                layer_id: tensor.layer_id,
                group_id,
                count: group_len as u64,
                l1_norm,
                max_abs,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub id: usize,
    pub groups: Vec<GroupStats>,
    /// Number of qubits encoding the bits removed from this layer.
    pub q_bits: u32,
    /// Present when the layer was built from raw weights.
    pub shape: Option<[usize; 4]>,
}

impl LayerDescriptor {
    pub fn weight_count(&self) -> u64 {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.groups.iter().map(|g| g.max_abs).fold(0.0, f64::max)
    }

    /// Weight magnitude when every group is pruned.
    pub fn max_weight_magnitude(&self) -> f64 {
        self.groups.iter().map(GroupStats::mean_magnitude).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub b_max: u32,
    pub granularity: Granularity,
    pub layers: Vec<LayerDescriptor>,
    /// Total model size in bits, `Σ N · b_max`.
    pub total_bits: u64,
}

impl ModelDescriptor {
    /// Number of binary variables: pruning masks plus quantization code bits.
    pub fn problem_size(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.groups.len() + l.q_bits as usize)
            .sum()
    }

    pub fn group_count(&self) -> usize {
        self.layers.iter().map(|l| l.groups.len()).sum()
    }

    pub fn weight_count(&self) -> u64 {
        self.layers.iter().map(LayerDescriptor::weight_count).sum()
    }

    /// Largest removable bit count for a layer, `2^q_bits - 1`.
    pub fn max_bits_removed(&self, layer: usize) -> u32 {
        (1u32 << self.layers[layer].q_bits) - 1
    }

    /// Rescale every group's magnitudes by `factor`; counts are unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for g in out.layers.iter_mut().flat_map(|l| l.groups.iter_mut()) {
            g.l1_norm *= factor;
            g.max_abs *= factor;
        }
        out
    }
}

/// Width of the bits-removed code for a given original bit-width.
///
/// The largest encodable value `2^q - 1` never exceeds `b_max - 1`, so every
/// decoded bit-width stays at least 1.
pub fn quant_bits(b_max: u32) -> u32 {
    b_max.ilog2()
}

pub fn build_descriptor(
    tensors: &[WeightTensor],
    granularity: Granularity,
    b_max: u32,
) -> Result<ModelDescriptor> {
    let layers = tensors
        .iter()
        .map(|t| {
            (
                t.layer_id,
                Some(t.shape),
                compute_group_stats(t, granularity),
            )
        })
        .collect();
    assemble(layers, granularity, b_max)
}

/// Build a descriptor from precomputed group statistics.
pub fn descriptor_from_stats(
    layers: Vec<(usize, Vec<GroupStats>)>,
    granularity: Granularity,
    b_max: u32,
) -> Result<ModelDescriptor> {
    let layers = layers
        .into_iter()
        .map(|(id, groups)| (id, None, groups))
        .collect();
    assemble(layers, granularity, b_max)
}

fn assemble(
    layers: Vec<(usize, Option<[usize; 4]>, Vec<GroupStats>)>,
    granularity: Granularity,
    b_max: u32,
) -> Result<ModelDescriptor> {
    if b_max < 2 {
        return Err(Error::InvalidBitWidth(b_max));
    }
    let q_bits = quant_bits(b_max);
    let mut total_bits = 0u64;
    let mut out = Vec::with_capacity(layers.len());
    for (id, shape, groups) in layers {
        if groups.is_empty() {
            return Err(Error::InvalidLayer {
                layer: id,
                reason: "layer has no groups".into(),
            });
        }
        for g in &groups {
            g.validate()?;
            total_bits += g.count * b_max as u64;
        }
        out.push(LayerDescriptor {
            id,
            groups,
            q_bits,
            shape,
        });
    }
    Ok(ModelDescriptor {
        b_max,
        granularity,
        layers: out,
        total_bits,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    b_max: u32,
    #[serde(default)]
    granularity: Option<Granularity>,
    layers: Vec<ManifestLayer>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLayer {
    id: usize,
    #[serde(default)]
    shape: Option<[usize; 4]>,
    #[serde(default)]
    weights: Option<PathBuf>,
    #[serde(default)]
    groups: Option<Vec<StatsEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsEntry {
    count: u64,
    l1_norm: f64,
    max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Weights(Vec<WeightTensor>),
    /// Group statistics with the grouping they were computed at.
    Stats {
        granularity: Granularity,
        layers: Vec<(usize, Vec<GroupStats>)>,
    },
}

/// A parsed model manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub b_max: u32,
    pub source: ModelSource,
}

impl Model {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: ManifestFile =
            serde_json::from_slice(&bytes).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(manifest, base)
    }

    fn from_manifest(manifest: ManifestFile, base: &Path) -> Result<Self> {
        let mut layers = manifest.layers;
        layers.sort_by_key(|l| l.id);
        if let Some(w) = layers.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidLayer {
                layer: w[0].id,
                reason: "duplicate layer id".into(),
            });
        }
        let stats_only = layers.iter().all(|l| l.groups.is_some());
        if stats_only && !layers.is_empty() {
            let granularity = manifest.granularity.unwrap_or_default();
            let layers = layers
                .into_iter()
                .map(|l| {
                    let id = l.id;
                    let groups = l
                        .groups
                        .unwrap_or_default()
                        .into_iter()
                        .enumerate()
                        .map(|(group_id, s)| GroupStats {
                            layer_id: id,
                            group_id,
                            count: s.count,
                            l1_norm: s.l1_norm,
                            max_abs: s.max_abs,
                        })
                        .collect();
                    (id, groups)
                })
                .collect();
            return Ok(Self {
                b_max: manifest.b_max,
                source: ModelSource::Stats {
                    granularity,
                    layers,
                },
            });
        }

        let mut tensors = Vec::with_capacity(layers.len());
        for layer in layers {
            let (Some(shape), Some(rel)) = (layer.shape, layer.weights) else {
                return Err(Error::InvalidLayer {
                    layer: layer.id,
                    reason: "needs both `shape` and `weights` (or every layer needs `groups`)"
                        .into(),
                });
            };
            let blob = base.join(rel);
            let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
            let expected = shape.iter().product::<usize>();
            if bytes.len() != expected * 4 {
                return Err(Error::SizeMismatch {
                    layer: layer.id,
                    expected,
                    found: bytes.len() / 4,
                });
            }
            tensors.push(WeightTensor::new(layer.id, shape, decode_f32(&bytes))?);
        }
        Ok(Self {
            b_max: manifest.b_max,
            source: ModelSource::Weights(tensors),
        })
    }

    pub fn tensors(&self) -> Result<&[WeightTensor]> {
        match &self.source {
            ModelSource::Weights(t) => Ok(t),
            ModelSource::Stats { .. } => Err(Error::StatsOnly),
        }
    }

    /// Build the descriptor at `granularity`, optionally overriding the
    /// manifest's `b_max`.
    pub fn descriptor(
        &self,
        granularity: Granularity,
        b_max: Option<u32>,
    ) -> Result<ModelDescriptor> {
        let b_max = b_max.unwrap_or(self.b_max);
        match &self.source {
            ModelSource::Weights(t) => build_descriptor(t, granularity, b_max),
            ModelSource::Stats {
                granularity: native,
                layers,
            } => {
                if *native != granularity {
                    return Err(Error::InvalidConfig(format!(
                        "manifest statistics are grouped by {native:?}, {granularity:?} requested"
                    )));
                }
                descriptor_from_stats(layers.clone(), granularity, b_max)
            }
        }
    }

    pub fn native_granularity(&self) -> Option<Granularity> {
        match &self.source {
            ModelSource::Weights(_) => None,
            ModelSource::Stats { granularity, .. } => Some(*granularity),
        }
    }
}

/// Load the raw weight tensors named by a manifest, in layer order.
pub fn ingest_model(manifest: impl AsRef<Path>) -> Result<Vec<WeightTensor>> {
    match Model::load(manifest)?.source {
        ModelSource::Weights(t) => Ok(t),
        ModelSource::Stats { .. } => Err(Error::StatsOnly),
    }
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_f32_blob(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|w| w.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
