use std::collections::HashMap;
use std::path::Path;

use super::embedding_file::{read_embedding, EmbeddingFile, PriorKind};
use super::{FusionError, SeqToken};
use crate::geometry::ResidueGraph;
use crate::numeric::Tensor;
use crate::rng::{mix64, CounterRng};
use crate::structure::AminoAcid;

/// Frozen per-residue embedding computed from structure.
pub trait StructurePrior: Sync {
    fn dim(&self) -> usize;
    fn tag(&self) -> String;
    /// `n x dim` rows in graph node order.
    fn embed_structure(&self, graph: &ResidueGraph) -> Result<Tensor<f64>, FusionError>;
}

/// Frozen per-residue embedding computed from a (possibly masked) sequence.
pub trait SequencePrior: Sync {
    fn dim(&self) -> usize;
    fn tag(&self) -> String;
    /// `n x dim` rows, one per token. Must accept an all-mask sequence.
    fn embed_sequence(&self, tokens: &[SeqToken]) -> Result<Tensor<f64>, FusionError>;
}

/// Fixed random projection of node features through `tanh`. Outputs are
/// rounded to single precision so exported files reproduce them exactly.
#[derive(Debug, Clone)]
pub struct StubStructurePrior {
    pub dim: usize,
    pub seed: u64,
}

/// Seeds of the stub priors a run uses unless told otherwise, so a
/// checkpoint trained on stubs is served the same embeddings later.
pub const STANDARD_STRUCTURE_STUB_SEED: u64 = 0x5eed_0001;
pub const STANDARD_SEQUENCE_STUB_SEED: u64 = 0x5eed_0002;

impl StubStructurePrior {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubStructurePrior { dim, seed }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(dim, STANDARD_STRUCTURE_STUB_SEED)
    }

    fn projection(&self, rows: usize) -> Vec<f64> {
        let mut rng = CounterRng::new(self.seed).fork(rows as u64);
        let scale = 2.0 / (rows as f64).sqrt();
        (0..rows * self.dim).map(|_| rng.normal() * scale).collect()
    }
}

impl StructurePrior for StubStructurePrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("stub-structure:{}", self.seed)
    }

    fn embed_structure(&self, graph: &ResidueGraph) -> Result<Tensor<f64>, FusionError> {
        let w = self.projection(graph.node_dim);
        let mut out = vec![0.0; graph.n * self.dim];
        for i in 0..graph.n {
            let x = graph.node(i);
            let row = &mut out[i * self.dim..(i + 1) * self.dim];
            for (r, &xv) in x.iter().enumerate() {
                if xv != 0.0 {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v += xv * w[r * self.dim + c];
                    }
                }
            }
            row.iter_mut().for_each(|v| *v = f64::from(v.tanh() as f32));
        }
        Ok(Tensor::new(graph.n, self.dim, out))
    }
}

/// Deterministic pseudo-embedding: a hashed Gaussian vector for the token
/// plus a weaker hashed vector for its position, rounded to single
/// precision.
#[derive(Debug, Clone)]
pub struct StubSequencePrior {
    pub dim: usize,
    pub seed: u64,
}

const POSITION_WEIGHT: f64 = 0.25;

impl StubSequencePrior {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubSequencePrior { dim, seed }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(dim, STANDARD_SEQUENCE_STUB_SEED)
    }

    fn hashed_normal(&self, domain: u64, key: u64, c: usize) -> f64 {
        let h = mix64(self.seed ^ mix64(domain ^ mix64(key ^ mix64(c as u64))));
        let mut rng = CounterRng::new(h);
        rng.normal()
    }
}

impl SequencePrior for StubSequencePrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("stub-sequence:{}", self.seed)
    }

    fn embed_sequence(&self, tokens: &[SeqToken]) -> Result<Tensor<f64>, FusionError> {
        let mut out = Vec::with_capacity(tokens.len() * self.dim);
        for (pos, t) in tokens.iter().enumerate() {
            for c in 0..self.dim {
                let tok = self.hashed_normal(1, t.index() as u64, c);
                let at = self.hashed_normal(2, pos as u64, c);
                out.push(f64::from((tok + POSITION_WEIGHT * at) as f32));
            }
        }
        Ok(Tensor::new(tokens.len(), self.dim, out))
    }
}

/// Answers an all-mask query through `inner`, and any other query with
/// `inner`'s embedding of the true sequence. Every refinement stage then
/// sees a prior at least as informative as the previous one.
#[derive(Debug, Clone)]
pub struct OracleSequencePrior<P> {
    pub inner: P,
    pub truth: Vec<AminoAcid>,
}

impl<P: SequencePrior> SequencePrior for OracleSequencePrior<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn tag(&self) -> String {
        format!("oracle({})", self.inner.tag())
    }

    fn embed_sequence(&self, tokens: &[SeqToken]) -> Result<Tensor<f64>, FusionError> {
        if tokens.len() != self.truth.len() {
            return Err(FusionError::Shape(format!(
                "{} tokens for a {}-residue truth",
                tokens.len(),
                self.truth.len()
            )));
        }
        if tokens.iter().all(|t| *t == SeqToken::Mask) {
            return self.inner.embed_sequence(tokens);
        }
        let truth: Vec<SeqToken> = self.truth.iter().map(|&a| SeqToken::Residue(a)).collect();
        self.inner.embed_sequence(&truth)
    }
}

/// Structure embeddings exported out of band, matched to graphs by their
/// residue numbering.
#[derive(Debug, Clone, Default)]
pub struct FileStructurePrior {
    entries: Vec<EmbeddingFile>,
}

impl FileStructurePrior {
    pub fn new(entries: Vec<EmbeddingFile>) -> Result<Self, FusionError> {
        let dims: Vec<usize> = entries.iter().map(|e| e.dim).collect();
        if dims.is_empty() || dims.iter().any(|&d| d != dims[0]) {
            return Err(FusionError::Shape(
                "structure prior needs at least one file, all of one width".into(),
            ));
        }
        if entries
            .iter()
            .any(|e| e.kind != PriorKind::Structure || e.residue_index.is_none())
        {
            return Err(FusionError::Shape(
                "structure prior files must be of kind structure and carry residue indices".into(),
            ));
        }
        Ok(FileStructurePrior { entries })
    }

    pub fn open(paths: &[impl AsRef<Path>]) -> Result<Self, FusionError> {
        let entries = paths
            .iter()
            .map(|p| read_embedding(std::fs::File::open(p.as_ref())?))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }
}

impl StructurePrior for FileStructurePrior {
    fn dim(&self) -> usize {
        self.entries[0].dim
    }

    fn tag(&self) -> String {
        format!("file-structure:{}", self.entries[0].provider)
    }

    fn embed_structure(&self, graph: &ResidueGraph) -> Result<Tensor<f64>, FusionError> {
        let want = &graph.seq_index;
        let mut reordered = false;
        for e in &self.entries {
            let idx = e.residue_index.as_ref().expect("checked at construction");
            if idx == want {
                return Ok(e.values.clone());
            }
            if e.n == graph.n {
                let mut a = idx.clone();
                let mut b = want.clone();
                a.sort_unstable();
                b.sort_unstable();
                reordered |= a == b;
            }
        }
        if reordered {
            Err(FusionError::Shape(
                "structure prior rows are ordered differently from the graph".into(),
            ))
        } else {
            Err(FusionError::MissingEmbedding(format!(
                "no structure embedding for a {}-residue graph",
                graph.n
            )))
        }
    }
}

/// Sequence embeddings exported out of band, looked up by the hash of the
/// query's token string.
#[derive(Debug, Clone, Default)]
pub struct FileSequencePrior {
    dim: usize,
    provider: String,
    by_hash: HashMap<u64, Tensor<f64>>,
}

impl FileSequencePrior {
    pub fn new(entries: Vec<EmbeddingFile>) -> Result<Self, FusionError> {
        let first = entries
            .first()
            .ok_or_else(|| FusionError::Shape("no sequence prior files".into()))?;
        let (dim, provider) = (first.dim, first.provider.clone());
        let mut by_hash = HashMap::new();
        for e in entries {
            if e.kind != PriorKind::Sequence || e.dim != dim {
                return Err(FusionError::Shape(
                    "sequence prior files must share kind and width".into(),
                ));
            }
            let hash = e.sequence_hash.ok_or_else(|| {
                FusionError::Shape("sequence prior file lacks a sequence hash".into())
            })?;
            by_hash.insert(hash, e.values);
        }
        Ok(FileSequencePrior {
            dim,
            provider,
            by_hash,
        })
    }

    pub fn open(paths: &[impl AsRef<Path>]) -> Result<Self, FusionError> {
        let entries = paths
            .iter()
            .map(|p| read_embedding(std::fs::File::open(p.as_ref())?))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }
}

impl SequencePrior for FileSequencePrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("file-sequence:{}", self.provider)
    }

    fn embed_sequence(&self, tokens: &[SeqToken]) -> Result<Tensor<f64>, FusionError> {
        let hash = super::token_hash(tokens);
        match self.by_hash.get(&hash) {
            Some(t) if t.rows == tokens.len() => Ok(t.clone()),
            Some(t) => Err(FusionError::Shape(format!(
                "{} rows stored for {} tokens",
                t.rows,
                tokens.len()
            ))),
            None => Err(FusionError::MissingEmbedding(format!(
                "no sequence embedding for {}",
                super::tokens_to_string(tokens)
            ))),
        }
    }
}
