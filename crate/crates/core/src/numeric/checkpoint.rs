//! Checkpoint container (`CKPT`).
//!
//! Header: `dtype`, `params` (name, shape, element offset into the
//! payload), `rng` (seed and counter of the generator at save time) and a
//! free-form `meta` object for the owner's configuration. Payload: every
//! parameter's data in header order, little-endian.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Real, Tensor};
use crate::container::{self, ContainerError, Dtype};
use crate::rng::CounterRng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    dtype: Dtype,
    params: Vec<ParamEntry>,
    rng: Option<CounterRng>,
    meta: serde_json::Value,
}

/// Parameters plus the state needed to resume or rebuild their owner.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub rng: Option<CounterRng>,
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Real, W: Write>(w: W, ck: &Checkpoint<T>) -> Result<(), NumericError> {
    let mut params = Vec::new();
    let mut offset = 0;
    let mut values = Vec::with_capacity(ck.params.num_scalars());
    for (name, t) in ck.params.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape(),
            offset,
        });
        offset += t.len();
        values.extend_from_slice(&t.data);
    }
    let header = CheckpointHeader {
        dtype: T::DTYPE,
        params,
        rng: ck.rng,
        meta: ck.meta.clone(),
    };
    container::write(w, CHECKPOINT_MAGIC, &header, &T::encode(&values))?;
    Ok(())
}

/// Reads a checkpoint written at either precision into `T`.
pub fn read_checkpoint<T: Real, R: Read>(r: R) -> Result<Checkpoint<T>, NumericError> {
    let (h, payload): (CheckpointHeader, Vec<u8>) = container::read(r, CHECKPOINT_MAGIC)?;
    let total: usize = h.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
    container::expect_len(payload.len(), total * h.dtype.width())?;
    let values = container::decode(h.dtype, &payload);
    let mut params = ParamStore::new();
    for p in &h.params {
        let len = p.shape[0] * p.shape[1];
        if p.offset + len > values.len() {
            return Err(
                ContainerError::Invalid(format!("parameter {} overruns payload", p.name)).into(),
            );
        }
        params.add(
            p.name.clone(),
            Tensor::from_f64(p.shape[0], p.shape[1], &values[p.offset..p.offset + len]),
        );
    }
    Ok(Checkpoint {
        params,
        rng: h.rng,
        meta: h.meta,
    })
}
