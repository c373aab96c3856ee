//! Backbone structures: PDB ingestion, rigid transforms, coordinate noise and
//! the binary backbone container.

mod container;
mod pdb;
pub mod synthetic;

pub use container::{read_backbone, write_backbone, BACKBONE_MAGIC};
pub use pdb::{parse_pdb, to_pdb};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::rng::CounterRng;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("chain {chain:?} not found (available: {available:?})")]
    ChainNotFound {
        chain: String,
        available: Vec<String>,
    },
    #[error("chain {0:?} has no residues with a CA atom")]
    EmptyBackbone(String),
    #[error(
        "rotation matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det:.6})"
    )]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
}

/// The twenty canonical residues in one-letter alphabetical order, plus `Unk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum AminoAcid {
    Ala,
    Cys,
    Asp,
    Glu,
    Phe,
    Gly,
    His,
    Ile,
    Lys,
    Leu,
    Met,
    Asn,
    Pro,
    Gln,
    Arg,
    Ser,
    Thr,
    Val,
    Trp,
    Tyr,
    Unk,
}

pub const NUM_CANONICAL: usize = 20;

const ONE_LETTER: &[u8; 21] = b"ACDEFGHIKLMNPQRSTVWYX";
const THREE_LETTER: [&str; 21] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO",
    "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR", "UNK",
];

impl AminoAcid {
    pub const CANONICAL: [AminoAcid; 20] = [
        AminoAcid::Ala,
        AminoAcid::Cys,
        AminoAcid::Asp,
        AminoAcid::Glu,
        AminoAcid::Phe,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Lys,
        AminoAcid::Leu,
        AminoAcid::Met,
        AminoAcid::Asn,
        AminoAcid::Pro,
        AminoAcid::Gln,
        AminoAcid::Arg,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Val,
        AminoAcid::Trp,
        AminoAcid::Tyr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i < NUM_CANONICAL {
            Self::CANONICAL[i]
        } else {
            AminoAcid::Unk
        }
    }

    pub fn is_canonical(self) -> bool {
        self != AminoAcid::Unk
    }

    pub fn one_letter(self) -> char {
        ONE_LETTER[self.index()] as char
    }

    pub fn three_letter(self) -> &'static str {
        THREE_LETTER[self.index()]
    }

    /// Any non-canonical three-letter name (MSE, SEP, ...) maps to `Unk`.
    pub fn from_three_letter(name: &str) -> Self {
        THREE_LETTER[..NUM_CANONICAL]
            .iter()
            .position(|&t| t.eq_ignore_ascii_case(name))
            .map(Self::from_index)
            .unwrap_or(AminoAcid::Unk)
    }

    /// Returns `None` for characters outside the 20-letter alphabet and `X`.
    pub fn from_one_letter(c: char) -> Option<Self> {
        let up = c.to_ascii_uppercase() as u8;
        ONE_LETTER
            .iter()
            .position(|&l| l == up)
            .map(Self::from_index)
    }
}

pub fn sequence_string(seq: &[AminoAcid]) -> String {
    seq.iter().map(|a| a.one_letter()).collect()
}

pub fn parse_sequence(s: &str) -> Option<Vec<AminoAcid>> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(AminoAcid::from_one_letter)
        .collect()
}

/// Bit flags marking backbone atoms that were absent and imputed from CA.
pub mod imputed {
    pub const N: u8 = 1;
    pub const C: u8 = 2;
    pub const O: u8 = 4;
}

/// Backbone atom slots in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    N,
    Ca,
    C,
    O,
}

impl Atom {
    pub const ALL: [Atom; 4] = [Atom::N, Atom::Ca, Atom::C, Atom::O];

    pub fn imputed_bit(self) -> u8 {
        match self {
            Atom::N => imputed::N,
            Atom::Ca => 0,
            Atom::C => imputed::C,
            Atom::O => imputed::O,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    pub aa: AminoAcid,
    pub n: Vec3,
    pub ca: Vec3,
    pub c: Vec3,
    pub o: Vec3,
    pub seq_index: i32,
    /// Combination of [`imputed`] bits.
    pub imputed: u8,
}

impl Residue {
    pub fn atom(&self, a: Atom) -> &Vec3 {
        match a {
            Atom::N => &self.n,
            Atom::Ca => &self.ca,
            Atom::C => &self.c,
            Atom::O => &self.o,
        }
    }

    pub fn atom_mut(&mut self, a: Atom) -> &mut Vec3 {
        match a {
            Atom::N => &mut self.n,
            Atom::Ca => &mut self.ca,
            Atom::C => &mut self.c,
            Atom::O => &mut self.o,
        }
    }

    pub fn is_imputed(&self, a: Atom) -> bool {
        self.imputed & a.imputed_bit() != 0
    }

    pub fn atoms(&self) -> [Vec3; 4] {
        [self.n, self.ca, self.c, self.o]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinBackbone {
    pub chain_id: String,
    pub residues: Vec<Residue>,
}

impl ProteinBackbone {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn sequence(&self) -> Vec<AminoAcid> {
        self.residues.iter().map(|r| r.aa).collect()
    }

    pub fn seq_indices(&self) -> Vec<i32> {
        self.residues.iter().map(|r| r.seq_index).collect()
    }

    /// Residues excluded from the loss (non-canonical labels).
    pub fn loss_mask(&self) -> Vec<bool> {
        self.residues.iter().map(|r| r.aa.is_canonical()).collect()
    }

    fn map_coords(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let residues = self
            .residues
            .iter()
            .map(|r| Residue {
                n: f(&r.n),
                ca: f(&r.ca),
                c: f(&r.c),
                o: f(&r.o),
                ..r.clone()
            })
            .collect();
        Self {
            chain_id: self.chain_id.clone(),
            residues,
        }
    }
}

/// Applies `x -> R x + t` to every atom.
pub fn apply_rigid_transform(
    b: &ProteinBackbone,
    rotation: &Matrix3<f64>,
    translation: &Vec3,
) -> Result<ProteinBackbone, StructureError> {
    let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
    let det = rotation.determinant();
    if ortho > 1e-10 || (det - 1.0).abs() > 1e-10 {
        return Err(StructureError::InvalidRotation { ortho, det });
    }
    Ok(b.map_coords(|x| rotation * x + translation))
}

/// Uniformly random proper rotation (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut CounterRng) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Adds independent N(0, sigma^2) noise to each coordinate component.
///
/// Draw order is residue-major, atoms N, CA, C, O, components x, y, z.
/// Imputed atoms stay tied to their (noised) CA.
pub fn inject_backbone_noise(
    b: &ProteinBackbone,
    sigma: f64,
    seed: u64,
) -> Result<ProteinBackbone, StructureError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(StructureError::InvalidParameter(format!(
            "noise sigma must be a finite value >= 0, got {sigma}"
        )));
    }
    let mut out = b.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = CounterRng::new(seed);
    for r in &mut out.residues {
        for atom in Atom::ALL {
            let x = r.atom_mut(atom);
            for k in 0..3 {
                x[k] += sigma * rng.normal();
            }
        }
        for atom in [Atom::N, Atom::C, Atom::O] {
            if r.is_imputed(atom) {
                *r.atom_mut(atom) = r.ca;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ProteinBackbone {
        synthetic::build_backbone(
            &[AminoAcid::Ala, AminoAcid::Gly, AminoAcid::Ser],
            &[(-1.0, -0.8, std::f64::consts::PI); 3],
        )
    }

    #[test]
    fn identity_transform_is_identity() {
        let b = fixture();
        let out = apply_rigid_transform(&b, &Matrix3::identity(), &Vec3::zeros()).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn translation_shifts_x() {
        let b = fixture();
        let out =
            apply_rigid_transform(&b, &Matrix3::identity(), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        for (r0, r1) in b.residues.iter().zip(&out.residues) {
            for a in Atom::ALL {
                assert_eq!(r1.atom(a).x, r0.atom(a).x + 1.0);
                assert_eq!(r1.atom(a).y, r0.atom(a).y);
                assert_eq!(r1.atom(a).z, r0.atom(a).z);
            }
            assert_eq!(r1.aa, r0.aa);
        }
    }

    #[test]
    fn transform_then_inverse_restores_coordinates() {
        let b = fixture();
        let mut rng = CounterRng::new(11);
        let r = random_rotation(&mut rng);
        let t = Vec3::new(3.0, -7.0, 12.5);
        let fwd = apply_rigid_transform(&b, &r, &t).unwrap();
        let rt = r.transpose();
        let back = apply_rigid_transform(&fwd, &rt, &(-(rt * t))).unwrap();
        for (r0, r1) in b.residues.iter().zip(&back.residues) {
            for a in Atom::ALL {
                assert!((r0.atom(a) - r1.atom(a)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn reflection_and_scaling_are_rejected() {
        let b = fixture();
        let reflect = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            apply_rigid_transform(&b, &reflect, &Vec3::zeros()),
            Err(StructureError::InvalidRotation { .. })
        ));
        let scale = Matrix3::identity() * 1.01;
        assert!(apply_rigid_transform(&b, &scale, &Vec3::zeros()).is_err());
    }

    #[test]
    fn zero_noise_is_identity_and_negative_is_rejected() {
        let b = fixture();
        assert_eq!(inject_backbone_noise(&b, 0.0, 5).unwrap(), b);
        assert!(matches!(
            inject_backbone_noise(&b, -0.1, 5),
            Err(StructureError::InvalidParameter(_))
        ));
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let b = fixture();
        let x = inject_backbone_noise(&b, 0.02, 9).unwrap();
        let y = inject_backbone_noise(&b, 0.02, 9).unwrap();
        let z = inject_backbone_noise(&b, 0.02, 10).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn noise_standard_deviation_matches_sigma() {
        // 10^5 independent draws of the x-coordinate of one atom.
        let single = synthetic::build_backbone(&[AminoAcid::Ala], &[(0.0, 0.0, 0.0)]);
        let x0 = single.residues[0].ca.x;
        let samples: Vec<f64> = (0..100_000u64)
            .map(|seed| {
                inject_backbone_noise(&single, 0.02, seed).unwrap().residues[0]
                    .ca
                    .x
                    - x0
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.0195..=0.0205).contains(&sd), "sample sd {sd}");
    }

    #[test]
    fn amino_acid_names() {
        assert_eq!(AminoAcid::from_three_letter("GLY"), AminoAcid::Gly);
        assert_eq!(AminoAcid::from_three_letter("MSE"), AminoAcid::Unk);
        assert_eq!(AminoAcid::from_one_letter('w'), Some(AminoAcid::Trp));
        assert_eq!(AminoAcid::from_one_letter('B'), None);
        for (i, aa) in AminoAcid::CANONICAL.iter().enumerate() {
            assert_eq!(aa.index(), i);
            assert_eq!(AminoAcid::from_three_letter(aa.three_letter()), *aa);
        }
    }
}
