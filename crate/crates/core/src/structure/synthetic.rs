//! Ideal-geometry backbones built from torsion angles (NeRF placement).
//!
//! Used for fixtures, the toy training corpus and the runnable examples.

use std::f64::consts::PI;

use super::{AminoAcid, ProteinBackbone, Residue, Vec3};
use crate::rng::CounterRng;

pub const BOND_N_CA: f64 = 1.458;
pub const BOND_CA_C: f64 = 1.525;
pub const BOND_C_N: f64 = 1.329;
pub const BOND_C_O: f64 = 1.231;
pub const ANGLE_N_CA_C: f64 = 111.2 * PI / 180.0;
pub const ANGLE_CA_C_N: f64 = 116.2 * PI / 180.0;
pub const ANGLE_C_N_CA: f64 = 121.7 * PI / 180.0;
pub const ANGLE_CA_C_O: f64 = 120.5 * PI / 180.0;

/// Canonical right-handed alpha helix (degrees).
pub const HELIX_PHI_PSI: (f64, f64) = (-57.0, -47.0);
const STRAND_PHI_PSI: (f64, f64) = (-120.0, 130.0);

/// Places `d` so that |cd| = `bond`, angle(b, c, d) = `angle` and
/// dihedral(a, b, c, d) = `torsion`.
pub fn place(a: &Vec3, b: &Vec3, c: &Vec3, bond: f64, angle: f64, torsion: f64) -> Vec3 {
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = n.cross(&bc);
    let d2 = Vec3::new(
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    );
    c + bc * d2.x + m * d2.y + n * d2.z
}

/// Builds a chain from per-residue `(phi, psi, omega)` in radians.
///
/// `psi_i` places `N_{i+1}` and `O_i`, `omega_i` places `CA_{i+1}` and
/// `phi_{i+1}` places `C_{i+1}`; `phi_0` and the final `psi`/`omega` only
/// affect the terminal oxygen.
pub fn build_backbone(seq: &[AminoAcid], torsions: &[(f64, f64, f64)]) -> ProteinBackbone {
    assert_eq!(seq.len(), torsions.len());
    let mut residues: Vec<Residue> = Vec::with_capacity(seq.len());
    let n0 = Vec3::zeros();
    let ca0 = Vec3::new(BOND_N_CA, 0.0, 0.0);
    let c0 = ca0
        + Vec3::new(
            -BOND_CA_C * ANGLE_N_CA_C.cos(),
            BOND_CA_C * ANGLE_N_CA_C.sin(),
            0.0,
        );
    let (mut n, mut ca, mut c) = (n0, ca0, c0);
    for (i, &aa) in seq.iter().enumerate() {
        if i > 0 {
            let (_, psi_prev, omega_prev) = torsions[i - 1];
            let (phi, _, _) = torsions[i];
            let prev = residues.last().expect("previous residue");
            n = place(&prev.n, &prev.ca, &prev.c, BOND_C_N, ANGLE_CA_C_N, psi_prev);
            ca = place(&prev.ca, &prev.c, &n, BOND_N_CA, ANGLE_C_N_CA, omega_prev);
            c = place(&prev.c, &n, &ca, BOND_CA_C, ANGLE_N_CA_C, phi);
        }
        let psi = torsions[i].1;
        let o = place(&n, &ca, &c, BOND_C_O, ANGLE_CA_C_O, psi + PI);
        residues.push(Residue {
            aa,
            n,
            ca,
            c,
            o,
            seq_index: i as i32 + 1,
            imputed: 0,
        });
    }
    ProteinBackbone {
        chain_id: "A".into(),
        residues,
    }
}

/// Ideal helix of `len` residues with the given sequence letters cycled.
pub fn ideal_helix(len: usize) -> ProteinBackbone {
    let (phi, psi) = HELIX_PHI_PSI;
    let t = (phi.to_radians(), psi.to_radians(), PI);
    let seq: Vec<AminoAcid> = (0..len).map(|i| AminoAcid::CANONICAL[i % 20]).collect();
    build_backbone(&seq, &vec![t; len])
}

/// Random backbone made of helix, strand and loop segments, with a random
/// sequence.
pub fn random_backbone(len: usize, rng: &mut CounterRng) -> ProteinBackbone {
    let mut torsions = Vec::with_capacity(len);
    while torsions.len() < len {
        let seg = 3 + rng.below(8);
        let kind = rng.below(3);
        for _ in 0..seg {
            let (phi, psi) = match kind {
                0 => HELIX_PHI_PSI,
                1 => STRAND_PHI_PSI,
                _ => (
                    rng.uniform_range(-160.0, -50.0),
                    rng.uniform_range(-60.0, 160.0),
                ),
            };
            let jitter = |rng: &mut CounterRng| rng.normal() * 8.0;
            torsions.push((
                (phi + jitter(rng)).to_radians(),
                (psi + jitter(rng)).to_radians(),
                (180.0 + rng.normal() * 3.0).to_radians(),
            ));
        }
    }
    torsions.truncate(len);
    let seq: Vec<AminoAcid> = (0..len)
        .map(|_| AminoAcid::CANONICAL[rng.below(20)])
        .collect();
    build_backbone(&seq, &torsions)
}

/// Deterministic toy corpus: `count` proteins with lengths drawn uniformly
/// from `min_len..=max_len`.
pub fn toy_corpus(count: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<ProteinBackbone> {
    let mut rng = CounterRng::new(seed);
    (0..count)
        .map(|_| {
            let len = min_len + rng.below(max_len - min_len + 1);
            let mut b = random_backbone(len, &mut rng);
            b.chain_id = "A".into();
            b
        })
        .collect()
}
