//! Flat variable layout `x = vect(P, Q)`.
//!
//! All pruning variables come first, layer by layer and group by group,
//! followed by every layer's quantization code bits (bit 0 first).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::ModelDescriptor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    P,
    Q,
}

/// What a flat variable index stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarKey {
    pub kind: VarKind,
    /// Position of the layer in the model (not its manifest id).
    pub layer: usize,
    /// Group index for `P`, code bit for `Q`.
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutLayer {
    pub id: usize,
    /// Weight count of each group.
    pub counts: Vec<u64>,
    pub q_bits: u32,
}

/// The part of a descriptor needed to decode solutions and account for bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub b_max: u32,
    pub layers: Vec<LayoutLayer>,
}

impl ModelLayout {
    pub fn from_descriptor(d: &ModelDescriptor) -> Self {
        Self {
            b_max: d.b_max,
            layers: d
                .layers
                .iter()
                .map(|l| LayoutLayer {
                    id: l.id,
                    counts: l.groups.iter().map(|g| g.count).collect(),
                    q_bits: l.q_bits,
                })
                .collect(),
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.layers
            .iter()
            .flat_map(|l| l.counts.iter())
            .map(|&c| c * self.b_max as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableIndex {
    layout: ModelLayout,
    p_offsets: Vec<usize>,
    q_offsets: Vec<usize>,
    dim: usize,
}

impl VariableIndex {
    pub fn new(layout: ModelLayout) -> Self {
        let mut next = 0;
        let p_offsets = layout
            .layers
            .iter()
            .map(|l| {
                let at = next;
                next += l.counts.len();
                at
            })
            .collect();
        let q_offsets = layout
            .layers
            .iter()
            .map(|l| {
                let at = next;
                next += l.q_bits as usize;
                at
            })
            .collect();
        Self {
            layout,
            p_offsets,
            q_offsets,
            dim: next,
        }
    }

    pub fn from_descriptor(d: &ModelDescriptor) -> Self {
        Self::new(ModelLayout::from_descriptor(d))
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_count(&self) -> usize {
        self.layout.layers.len()
    }

    pub fn groups(&self, layer: usize) -> usize {
        self.layout.layers[layer].counts.len()
    }

    pub fn q_bits(&self, layer: usize) -> usize {
        self.layout.layers[layer].q_bits as usize
    }

    pub fn p(&self, layer: usize, group: usize) -> usize {
        debug_assert!(group < self.groups(layer));
        self.p_offsets[layer] + group
    }

    pub fn q(&self, layer: usize, bit: usize) -> usize {
        debug_assert!(bit < self.q_bits(layer));
        self.q_offsets[layer] + bit
    }

    pub fn key(&self, index: usize) -> Option<VarKey> {
        if index >= self.dim {
            return None;
        }
        let q_start = self.q_offsets.first().copied().unwrap_or(self.dim);
        let (offsets, kind) = if index < q_start {
            (&self.p_offsets, VarKind::P)
        } else {
            (&self.q_offsets, VarKind::Q)
        };
        // Last layer whose block starts at or before `index`. Empty blocks
        // share a start with their successor, so skip past them.
        let layer = offsets.partition_point(|&o| o <= index) - 1;
        Some(VarKey {
            kind,
            layer,
            slot: index - offsets[layer],
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = VarKey> + '_ {
        (0..self.dim).map(|i| self.key(i).expect("index in range"))
    }

    pub fn to_sidecar(&self) -> IndexSidecar {
        IndexSidecar {
            dim: self.dim,
            b_max: self.layout.b_max,
            layers: self.layout.layers.clone(),
            variables: self
                .keys()
                .enumerate()
                .map(|(index, key)| SidecarVariable {
                    index,
                    kind: key.kind,
                    layer: key.layer,
                    layer_id: self.layout.layers[key.layer].id,
                    slot: key.slot,
                })
                .collect(),
        }
    }

    pub fn from_sidecar(sidecar: IndexSidecar) -> Result<Self> {
        let index = Self::new(ModelLayout {
            b_max: sidecar.b_max,
            layers: sidecar.layers,
        });
        if index.dim != sidecar.dim || sidecar.variables.len() != index.dim {
            return Err(Error::CorruptIndex(format!(
                "layout implies {} variables, sidecar lists dim {} with {} entries",
                index.dim,
                sidecar.dim,
                sidecar.variables.len()
            )));
        }
        for (i, v) in sidecar.variables.iter().enumerate() {
            let key = index.key(i).expect("in range");
            let expected_id = index.layout.layers[key.layer].id;
            if v.index != i
                || v.kind != key.kind
                || v.layer != key.layer
                || v.slot != key.slot
                || v.layer_id != expected_id
            {
                return Err(Error::CorruptIndex(format!(
                    "variable {i} is recorded as {:?} layer {} slot {}, layout says {:?} layer {} slot {}",
                    v.kind, v.layer, v.slot, key.kind, key.layer, key.slot
                )));
            }
        }
        Ok(index)
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_sidecar()).expect("serializable");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_sidecar(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let sidecar: IndexSidecar =
            serde_json::from_slice(&bytes).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_sidecar(sidecar)
    }
}

/// JSON companion of an exported QUBO, mapping flat indices back to
/// (kind, layer, group or bit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSidecar {
    pub dim: usize,
    pub b_max: u32,
    pub layers: Vec<LayoutLayer>,
    pub variables: Vec<SidecarVariable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarVariable {
    pub index: usize,
    pub kind: VarKind,
    pub layer: usize,
    pub layer_id: usize,
    pub slot: usize,
}
