//! Per-layer attention dump (`ATTN`).
//!
//! Header: `n`, `k`, `heads`, `layers`, `neighbors` (flat `n * k`, slot
//! `i * k + m` holds the m-th neighbor of receiver `i`) and `dtype`.
//! Payload: float32, ordered by layer, then receiver, then neighbor slot,
//! then head.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError, Dtype};

pub const ATTENTION_MAGIC: &[u8; 4] = b"ATTN";

/// Attention of every encoder layer for one protein.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub n: usize,
    pub k: usize,
    pub heads: usize,
    pub neighbors: Vec<usize>,
    /// One `n * k * heads` block per layer.
    pub layers: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    n: usize,
    k: usize,
    heads: usize,
    layers: usize,
    neighbors: Vec<usize>,
    dtype: Dtype,
}

impl AttentionDump {
    /// Weight of edge `neighbors[i * k + m] -> i` in layer `l`, averaged over
    /// heads.
    pub fn head_mean(&self, l: usize, slot: usize) -> f64 {
        let block = &self.layers[l][slot * self.heads..(slot + 1) * self.heads];
        block.iter().sum::<f64>() / self.heads as f64
    }

    /// Head-averaged `n * k` attention of layer `l`.
    pub fn head_mean_layer(&self, l: usize) -> Vec<f64> {
        (0..self.n * self.k).map(|s| self.head_mean(l, s)).collect()
    }
}

pub fn write_attention_dump<W: Write>(w: W, dump: &AttentionDump) -> Result<(), ContainerError> {
    let header = DumpHeader {
        n: dump.n,
        k: dump.k,
        heads: dump.heads,
        layers: dump.layers.len(),
        neighbors: dump.neighbors.clone(),
        dtype: Dtype::Float32,
    };
    let payload = container::encode_f32(dump.layers.iter().flatten().map(|&v| v as f32));
    container::write(w, ATTENTION_MAGIC, &header, &payload)
}

pub fn read_attention_dump<R: Read>(r: R) -> Result<AttentionDump, ContainerError> {
    let (h, payload): (DumpHeader, Vec<u8>) = container::read(r, ATTENTION_MAGIC)?;
    if h.neighbors.len() != h.n * h.k {
        return Err(ContainerError::Invalid("neighbor list length".into()));
    }
    let block = h.n * h.k * h.heads;
    container::expect_len(payload.len(), block * h.layers * h.dtype.width())?;
    let values = container::decode(h.dtype, &payload);
    let layers = if block == 0 {
        vec![Vec::new(); h.layers]
    } else {
        values.chunks(block).map(<[f64]>::to_vec).collect()
    };
    Ok(AttentionDump {
        n: h.n,
        k: h.k,
        heads: h.heads,
        neighbors: h.neighbors,
        layers,
    })
}
