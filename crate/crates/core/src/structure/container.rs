//! Backbone container (`BKBN`).
//!
//! JSON header:
//!
//! ```json
//! {"chain_id": "A", "n": 2, "sequence": "AG", "seq_index": [1, 2],
//!  "imputed": [0, 0], "dtype": "float32", "atoms": ["N", "CA", "C", "O"]}
//! ```
//!
//! Payload: `n * 4 * 3` float32 values, residue-major, atoms N, CA, C, O,
//! components x, y, z. `imputed` holds the per-residue flag bits
//! (1 = N, 2 = C, 4 = O).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AminoAcid, ProteinBackbone, Residue, StructureError, Vec3};
use crate::container::{self, ContainerError, Dtype};

pub const BACKBONE_MAGIC: &[u8; 4] = b"BKBN";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackboneHeader {
    chain_id: String,
    n: usize,
    sequence: String,
    seq_index: Vec<i32>,
    imputed: Vec<u8>,
    dtype: Dtype,
    atoms: Vec<String>,
}

pub fn write_backbone<W: Write>(w: W, b: &ProteinBackbone) -> Result<(), StructureError> {
    let header = BackboneHeader {
        chain_id: b.chain_id.clone(),
        n: b.len(),
        sequence: super::sequence_string(&b.sequence()),
        seq_index: b.seq_indices(),
        imputed: b.residues.iter().map(|r| r.imputed).collect(),
        dtype: Dtype::Float32,
        atoms: ["N", "CA", "C", "O"].map(String::from).to_vec(),
    };
    let payload = container::encode_f32(
        b.residues
            .iter()
            .flat_map(|r| r.atoms())
            .flat_map(|x| [x.x as f32, x.y as f32, x.z as f32]),
    );
    container::write(w, BACKBONE_MAGIC, &header, &payload)?;
    Ok(())
}

pub fn read_backbone<R: Read>(r: R) -> Result<ProteinBackbone, StructureError> {
    let (h, payload): (BackboneHeader, Vec<u8>) = container::read(r, BACKBONE_MAGIC)?;
    let bad = |m: &str| StructureError::Container(ContainerError::Invalid(m.to_string()));
    if h.seq_index.len() != h.n || h.imputed.len() != h.n || h.sequence.chars().count() != h.n {
        return Err(bad("per-residue header arrays disagree with n"));
    }
    container::expect_len(payload.len(), h.n * 12 * h.dtype.width())?;
    let coords = container::decode(h.dtype, &payload);
    let residues = h
        .sequence
        .chars()
        .enumerate()
        .map(|(i, letter)| {
            let aa = AminoAcid::from_one_letter(letter).ok_or_else(|| bad("bad residue letter"))?;
            let at = |k: usize| {
                let o = i * 12 + k * 3;
                Vec3::new(coords[o], coords[o + 1], coords[o + 2])
            };
            Ok(Residue {
                aa,
                n: at(0),
                ca: at(1),
                c: at(2),
                o: at(3),
                seq_index: h.seq_index[i],
                imputed: h.imputed[i],
            })
        })
        .collect::<Result<Vec<_>, StructureError>>()?;
    Ok(ProteinBackbone {
        chain_id: h.chain_id,
        residues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::imputed;
    use proptest::prelude::*;

    fn arb_backbone() -> impl Strategy<Value = ProteinBackbone> {
        let residue = (
            0usize..21,
            proptest::collection::vec(-999.0f32..999.0, 12),
            -50i32..5000,
            0u8..8,
        );
        proptest::collection::vec(residue, 1..20).prop_map(|rs| ProteinBackbone {
            chain_id: "B".into(),
            residues: rs
                .into_iter()
                .map(|(aa, c, seq_index, flags)| {
                    let v = |k: usize| Vec3::new(c[k].into(), c[k + 1].into(), c[k + 2].into());
                    Residue {
                        aa: AminoAcid::from_index(aa),
                        n: v(0),
                        ca: v(3),
                        c: v(6),
                        o: v(9),
                        seq_index,
                        imputed: flags & (imputed::N | imputed::C | imputed::O),
                    }
                })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn container_round_trip_is_exact(b in arb_backbone()) {
            let mut bytes = Vec::new();
            write_backbone(&mut bytes, &b).unwrap();
            let back = read_backbone(bytes.as_slice()).unwrap();
            prop_assert_eq!(back, b);
        }
    }

    #[test]
    fn rejects_inconsistent_header() {
        let b = crate::structure::synthetic::build_backbone(
            &[AminoAcid::Ala, AminoAcid::Gly],
            &[(0.0, 0.0, std::f64::consts::PI); 2],
        );
        let mut bytes = Vec::new();
        write_backbone(&mut bytes, &b).unwrap();
        // Truncate one float from the payload and fix the length prefix.
        let (h, mut payload): (serde_json::Value, Vec<u8>) =
            container::read(bytes.as_slice(), BACKBONE_MAGIC).unwrap();
        payload.truncate(payload.len() - 4);
        let bad = container::to_bytes(BACKBONE_MAGIC, &h, &payload).unwrap();
        assert!(read_backbone(bad.as_slice()).is_err());
    }
}
