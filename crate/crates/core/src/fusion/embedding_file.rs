//! Per-residue embedding container (`EMBD`).
//!
//! Header: `n`, `dim`, `provider` (free-form tag), `kind` (`structure` or
//! `sequence`), `sequence_hash` (16 hex digits of the FNV-1a hash of the
//! source token string, optional), `residue_index` (optional), `dtype`.
//! Payload: float32 `n x dim`, row-major.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::container::{self, ContainerError, Dtype};
use crate::numeric::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMBD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Structure,
    Sequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub n: usize,
    pub dim: usize,
    pub provider: String,
    pub kind: PriorKind,
    pub sequence_hash: Option<u64>,
    pub residue_index: Option<Vec<i32>>,
    pub values: Tensor<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingHeader {
    n: usize,
    dim: usize,
    provider: String,
    kind: PriorKind,
    sequence_hash: Option<String>,
    residue_index: Option<Vec<i32>>,
    dtype: Dtype,
}

pub fn write_embedding<W: Write>(w: W, e: &EmbeddingFile) -> Result<(), FusionError> {
    if e.values.shape() != [e.n, e.dim] {
        return Err(FusionError::Shape(format!(
            "values {:?} for declared {}x{}",
            e.values.shape(),
            e.n,
            e.dim
        )));
    }
    let header = EmbeddingHeader {
        n: e.n,
        dim: e.dim,
        provider: e.provider.clone(),
        kind: e.kind,
        sequence_hash: e.sequence_hash.map(|h| format!("{h:016x}")),
        residue_index: e.residue_index.clone(),
        dtype: Dtype::Float32,
    };
    let payload = container::encode_f32(e.values.data.iter().map(|&v| v as f32));
    container::write(w, EMBEDDING_MAGIC, &header, &payload)?;
    Ok(())
}

pub fn read_embedding<R: Read>(r: R) -> Result<EmbeddingFile, FusionError> {
    let (h, payload): (EmbeddingHeader, Vec<u8>) = container::read(r, EMBEDDING_MAGIC)?;
    container::expect_len(payload.len(), h.n * h.dim * h.dtype.width())?;
    if h.residue_index.as_ref().is_some_and(|r| r.len() != h.n) {
        return Err(ContainerError::Invalid("residue_index length differs from n".into()).into());
    }
    let sequence_hash = match h.sequence_hash {
        Some(s) => Some(
            u64::from_str_radix(&s, 16)
                .map_err(|_| ContainerError::Invalid(format!("bad sequence hash {s:?}")))?,
        ),
        None => None,
    };
    Ok(EmbeddingFile {
        n: h.n,
        dim: h.dim,
        provider: h.provider,
        kind: h.kind,
        sequence_hash,
        residue_index: h.residue_index,
        values: Tensor::from_f64(h.n, h.dim, &container::decode(h.dtype, &payload)),
    })
}
