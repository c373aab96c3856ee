//! SE(3)-invariant featurization and k-NN residue graphs.
//!
//! Every feature is computed from distances, torsions or relative rotations
//! between residue-local frames, so features are unchanged by any rigid
//! motion of the input coordinates.

mod dihedral;
mod features;
mod frames;
mod secondary;

pub use dihedral::{dihedral, dihedral_angles, Dihedrals};
pub use features::{read_features, write_features, FEATURES_MAGIC};
pub use frames::{
    local_frames, relative_orientation, rotation_to_quaternion, to_local, LocalFrame,
};
pub use secondary::{parse_secondary_structure, SecondaryStructure};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::structure::{Atom, ProteinBackbone};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("residue {0} has collinear N, CA, C; no local frame")]
    DegenerateFrame(usize),
    #[error("graph needs at least 2 residues, got {0}")]
    GraphTooSmall(usize),
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("secondary structure annotation: {0}")]
    Annotation(String),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub k: usize,
    pub rbf_count: usize,
    pub rbf_min: f64,
    pub rbf_max: f64,
    /// Relative sequence offsets are clamped to `[-relpos_clamp, relpos_clamp]`.
    pub relpos_clamp: usize,
    pub intra_rbf: bool,
    pub dihedrals: bool,
    pub secondary_structure: bool,
    pub inter_rbf: bool,
    pub orientation: bool,
    pub relative_position: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k: 48,
            rbf_count: 16,
            rbf_min: 0.0,
            rbf_max: 20.0,
            relpos_clamp: 32,
            intra_rbf: true,
            dihedrals: true,
            secondary_structure: true,
            inter_rbf: true,
            orientation: true,
            relative_position: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.rbf_count < 2 {
            return bad(format!("rbf_count must be >= 2, got {}", self.rbf_count));
        }
        if !(self.rbf_min < self.rbf_max) {
            return bad(format!(
                "rbf_min ({}) must be below rbf_max ({})",
                self.rbf_min, self.rbf_max
            ));
        }
        Ok(())
    }

    pub fn rbf_spacing(&self) -> f64 {
        (self.rbf_max - self.rbf_min) / (self.rbf_count - 1) as f64
    }

    pub fn rbf_center(&self, m: usize) -> f64 {
        self.rbf_min + m as f64 * self.rbf_spacing()
    }

    pub fn layout(&self) -> FeatureLayout {
        let mut node = Vec::new();
        let mut edge = Vec::new();
        let push = |list: &mut Vec<FamilySpan>, on: bool, name: &str, width: usize| {
            if on {
                let offset = list.last().map_or(0, |s: &FamilySpan| s.offset + s.width);
                list.push(FamilySpan {
                    name: name.to_string(),
                    offset,
                    width,
                });
            }
        };
        let r = self.rbf_count;
        push(
            &mut node,
            self.intra_rbf,
            "intra_rbf",
            INTRA_PAIRS.len() * r,
        );
        push(&mut node, self.dihedrals, "dihedrals", 9);
        push(
            &mut node,
            self.secondary_structure,
            "secondary_structure",
            SecondaryStructure::COUNT,
        );
        push(&mut edge, self.inter_rbf, "inter_rbf", 16 * r);
        push(&mut edge, self.orientation, "orientation", 4);
        push(
            &mut edge,
            self.relative_position,
            "relative_position",
            2 * self.relpos_clamp + 1,
        );
        FeatureLayout { node, edge }
    }
}

/// Gaussian radial basis expansion of a distance.
pub fn rbf_encode(d: f64, cfg: &FeatureConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.rbf_count];
    rbf_into(d, cfg, &mut out);
    out
}

fn rbf_into(d: f64, cfg: &FeatureConfig, out: &mut [f64]) {
    let sigma = cfg.rbf_spacing();
    for (m, o) in out.iter_mut().enumerate() {
        let z = (d - cfg.rbf_center(m)) / sigma;
        *o = (-0.5 * z * z).exp();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilySpan {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub node: Vec<FamilySpan>,
    pub edge: Vec<FamilySpan>,
}

impl FeatureLayout {
    pub fn node_dim(&self) -> usize {
        self.node.last().map_or(0, |s| s.offset + s.width)
    }

    pub fn edge_dim(&self) -> usize {
        self.edge.last().map_or(0, |s| s.offset + s.width)
    }

    pub fn node_family(&self, name: &str) -> Option<&FamilySpan> {
        self.node.iter().find(|s| s.name == name)
    }

    pub fn edge_family(&self, name: &str) -> Option<&FamilySpan> {
        self.edge.iter().find(|s| s.name == name)
    }
}

const INTRA_PAIRS: [(Atom, Atom); 6] = [
    (Atom::N, Atom::Ca),
    (Atom::N, Atom::C),
    (Atom::N, Atom::O),
    (Atom::Ca, Atom::C),
    (Atom::Ca, Atom::O),
    (Atom::C, Atom::O),
];

/// k-NN residue graph with node features and one feature vector per
/// *oriented* edge.
///
/// Every node has exactly `k` neighbors (the configured k clipped to n - 1).
/// Slot `i * k + m` holds the edge from neighbor `neighbors[i * k + m]` into
/// receiver `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueGraph {
    pub n: usize,
    pub k: usize,
    pub neighbors: Vec<usize>,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub node_feats: Vec<f64>,
    pub edge_feats: Vec<f64>,
    pub layout: FeatureLayout,
    pub seq_index: Vec<i32>,
}

impl ResidueGraph {
    pub fn num_edges(&self) -> usize {
        self.n * self.k
    }

    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.node_feats[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn edge_at(&self, slot: usize) -> &[f64] {
        &self.edge_feats[slot * self.edge_dim..(slot + 1) * self.edge_dim]
    }

    /// Slot of the oriented edge `src -> dst`, if `src` is a neighbor of `dst`.
    pub fn slot(&self, src: usize, dst: usize) -> Option<usize> {
        self.neighbors_of(dst)
            .iter()
            .position(|&j| j == src)
            .map(|m| dst * self.k + m)
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<&[f64]> {
        self.slot(src, dst).map(|s| self.edge_at(s))
    }

    /// Receiver node of every slot.
    pub fn receivers(&self) -> Vec<usize> {
        (0..self.num_edges()).map(|s| s / self.k).collect()
    }

    /// For each slot `j -> i`, the slot of `i -> j` when that edge exists.
    pub fn reverse_slots(&self) -> Vec<Option<usize>> {
        (0..self.num_edges())
            .map(|s| self.slot(s / self.k, self.neighbors[s]))
            .collect()
    }
}

/// Brute-force neighbor order: ascending CA distance, ties by residue index.
pub(crate) fn knn_indices(b: &ProteinBackbone, k: usize) -> Vec<usize> {
    let n = b.len();
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let ci = &b.residues[i].ca;
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| ((b.residues[j].ca - ci).norm_squared(), j)),
        );
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(cand[..k].iter().map(|&(_, j)| j));
    }
    out
}

/// Builds the k-NN graph and all node and oriented-edge features.
///
/// Features that depend on an imputed atom are zero. `secondary` supplies
/// optional per-residue classes; without it every residue gets the
/// `Unknown` class.
pub fn build_knn_graph(
    b: &ProteinBackbone,
    cfg: &FeatureConfig,
    secondary: Option<&[SecondaryStructure]>,
) -> Result<ResidueGraph, GeometryError> {
    cfg.validate()?;
    let n = b.len();
    if n < 2 {
        return Err(GeometryError::GraphTooSmall(n));
    }
    if let Some(ss) = secondary {
        if ss.len() != n {
            return Err(GeometryError::Annotation(format!(
                "{} classes for {} residues",
                ss.len(),
                n
            )));
        }
    }
    let k = cfg.k.min(n - 1);
    let layout = cfg.layout();
    let (node_dim, edge_dim) = (layout.node_dim(), layout.edge_dim());
    let neighbors = knn_indices(b, k);
    let frames = frames::masked_frames(b)?;
    let torsions = dihedral_angles(b);
    let r = cfg.rbf_count;

    let mut node_feats = vec![0.0; n * node_dim];
    for (i, res) in b.residues.iter().enumerate() {
        let row = &mut node_feats[i * node_dim..(i + 1) * node_dim];
        if let Some(span) = layout.node_family("intra_rbf") {
            for (p, &(a1, a2)) in INTRA_PAIRS.iter().enumerate() {
                if res.is_imputed(a1) || res.is_imputed(a2) {
                    continue;
                }
                let d = (res.atom(a1) - res.atom(a2)).norm();
                let o = span.offset + p * r;
                rbf_into(d, cfg, &mut row[o..o + r]);
            }
        }
        if let Some(span) = layout.node_family("dihedrals") {
            row[span.offset..span.offset + 9].copy_from_slice(&torsions[i].encode());
        }
        if let Some(span) = layout.node_family("secondary_structure") {
            let class = secondary.map_or(SecondaryStructure::Unknown, |s| s[i]);
            row[span.offset + class.index()] = 1.0;
        }
    }

    let mut edge_feats = vec![0.0; n * k * edge_dim];
    for i in 0..n {
        for m in 0..k {
            let j = neighbors[i * k + m];
            let slot = i * k + m;
            let row = &mut edge_feats[slot * edge_dim..(slot + 1) * edge_dim];
            let (ri, rj) = (&b.residues[i], &b.residues[j]);
            if let Some(span) = layout.edge_family("inter_rbf") {
                for (ai, a) in Atom::ALL.into_iter().enumerate() {
                    for (bi, bt) in Atom::ALL.into_iter().enumerate() {
                        if ri.is_imputed(a) || rj.is_imputed(bt) {
                            continue;
                        }
                        let d = (ri.atom(a) - rj.atom(bt)).norm();
                        let o = span.offset + (ai * 4 + bi) * r;
                        rbf_into(d, cfg, &mut row[o..o + r]);
                    }
                }
            }
            if let Some(span) = layout.edge_family("orientation") {
                if let (Some(fi), Some(fj)) = (&frames[i], &frames[j]) {
                    row[span.offset..span.offset + 4]
                        .copy_from_slice(&relative_orientation(fi, fj));
                }
            }
            if let Some(span) = layout.edge_family("relative_position") {
                let c = cfg.relpos_clamp as i64;
                let off = (j as i64 - i as i64).clamp(-c, c);
                row[span.offset + (off + c) as usize] = 1.0;
            }
        }
    }

    Ok(ResidueGraph {
        n,
        k,
        neighbors,
        node_dim,
        edge_dim,
        node_feats,
        edge_feats,
        layout,
        seq_index: b.seq_indices(),
    })
}
