//! Featurized-graph container (`FEAT`).
//!
//! Header fields: `n`, `k`, `node_dim`, `edge_dim`, `layout` (feature
//! families with offsets and widths for node and edge blocks), `neighbors`
//! (flat `n * k` list, slot `i * k + m` is the edge neighbor -> i),
//! `seq_index`, `config` and `dtype`.
//!
//! Payload: float32 node block `n * node_dim` (row-major), then the edge
//! block `n * k * edge_dim` in slot order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, FeatureLayout, GeometryError, ResidueGraph};
use crate::container::{self, ContainerError, Dtype};

pub const FEATURES_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    n: usize,
    k: usize,
    node_dim: usize,
    edge_dim: usize,
    layout: FeatureLayout,
    neighbors: Vec<usize>,
    seq_index: Vec<i32>,
    config: Option<FeatureConfig>,
    dtype: Dtype,
}

pub fn write_features<W: Write>(
    w: W,
    g: &ResidueGraph,
    cfg: Option<&FeatureConfig>,
) -> Result<(), GeometryError> {
    let header = FeatureHeader {
        n: g.n,
        k: g.k,
        node_dim: g.node_dim,
        edge_dim: g.edge_dim,
        layout: g.layout.clone(),
        neighbors: g.neighbors.clone(),
        seq_index: g.seq_index.clone(),
        config: cfg.cloned(),
        dtype: Dtype::Float32,
    };
    let payload =
        container::encode_f32(g.node_feats.iter().chain(&g.edge_feats).map(|&v| v as f32));
    container::write(w, FEATURES_MAGIC, &header, &payload)?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<ResidueGraph, GeometryError> {
    let (h, payload): (FeatureHeader, Vec<u8>) = container::read(r, FEATURES_MAGIC)?;
    let invalid = |m: String| GeometryError::Container(ContainerError::Invalid(m));
    if h.layout.node_dim() != h.node_dim || h.layout.edge_dim() != h.edge_dim {
        return Err(invalid("layout widths disagree with declared dims".into()));
    }
    if h.neighbors.len() != h.n * h.k || h.seq_index.len() != h.n {
        return Err(invalid("neighbor or index list length mismatch".into()));
    }
    if h.neighbors.iter().any(|&j| j >= h.n) {
        return Err(invalid("neighbor index out of range".into()));
    }
    let node_len = h.n * h.node_dim;
    let edge_len = h.n * h.k * h.edge_dim;
    container::expect_len(payload.len(), (node_len + edge_len) * h.dtype.width())?;
    let mut values = container::decode(h.dtype, &payload);
    let edge_feats = values.split_off(node_len);
    Ok(ResidueGraph {
        n: h.n,
        k: h.k,
        neighbors: h.neighbors,
        node_dim: h.node_dim,
        edge_dim: h.edge_dim,
        node_feats: values,
        edge_feats,
        layout: h.layout,
        seq_index: h.seq_index,
    })
}
