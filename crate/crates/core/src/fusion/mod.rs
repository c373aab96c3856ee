//! Prior fusion, decoding to residue distributions, and cascaded recycling.

mod embedding_file;
mod providers;

pub use embedding_file::{
    read_embedding, write_embedding, EmbeddingFile, PriorKind, EMBEDDING_MAGIC,
};
pub use providers::{
    FileSequencePrior, FileStructurePrior, OracleSequencePrior, SequencePrior, StructurePrior,
    StubSequencePrior, StubStructurePrior, STANDARD_SEQUENCE_STUB_SEED,
    STANDARD_STRUCTURE_STUB_SEED,
};

use crate::container::{fnv1a64, ContainerError};
use crate::geometry::ResidueGraph;
use crate::model::{
    argmax_rows, AttentionDump, EdgeTopology, InverseFoldingModel, ModelError, StageOutput,
    NUM_CLASSES,
};
use crate::numeric::{softmax, BoundParams, Graph, NumericError, Real, Tensor, Var};
use crate::structure::{AminoAcid, ProteinBackbone};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing embedding: {0}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

impl From<std::io::Error> for FusionError {
    fn from(e: std::io::Error) -> Self {
        FusionError::Container(ContainerError::Io(e))
    }
}

/// Sequence-prior input token: a residue or the mask placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqToken {
    Residue(AminoAcid),
    Mask,
}

impl SeqToken {
    pub const MASK_INDEX: usize = 21;

    /// 0..20 for canonical residues, 20 for UNK, 21 for the mask.
    pub fn index(self) -> usize {
        match self {
            SeqToken::Residue(a) => a.index(),
            SeqToken::Mask => Self::MASK_INDEX,
        }
    }

    pub fn letter(self) -> char {
        match self {
            SeqToken::Residue(a) => a.one_letter(),
            SeqToken::Mask => '#',
        }
    }
}

pub fn tokens_to_string(tokens: &[SeqToken]) -> String {
    tokens.iter().map(|t| t.letter()).collect()
}

/// FNV-1a of the token string (one letter per residue, `#` for mask).
pub fn token_hash(tokens: &[SeqToken]) -> u64 {
    fnv1a64(tokens_to_string(tokens).as_bytes())
}

pub fn residue_tokens(seq: &[AminoAcid]) -> Vec<SeqToken> {
    seq.iter().map(|&a| SeqToken::Residue(a)).collect()
}

/// Row-wise `[h_geom | e_struct | e_seq]`.
pub fn fuse<'g, T: Real>(
    h_geom: Var<'g, T>,
    e_struct: Var<'g, T>,
    e_seq: Var<'g, T>,
) -> Result<Var<'g, T>, FusionError> {
    let rows = [h_geom.rows(), e_struct.rows(), e_seq.rows()];
    if rows[1] != rows[0] || rows[2] != rows[0] {
        return Err(FusionError::Shape(format!("row counts {rows:?} differ")));
    }
    Ok(Var::concat_cols(&[h_geom, e_struct, e_seq]))
}

/// Per-residue class probabilities of one stage (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDistribution {
    pub stage: usize,
    pub probs: Tensor<f64>,
}

impl SequenceDistribution {
    pub fn n(&self) -> usize {
        self.probs.rows
    }

    pub fn argmax(&self) -> PredictedSequence {
        let classes = argmax_rows(self.probs.rows, self.probs.cols, &self.probs.data);
        PredictedSequence {
            stage: self.stage,
            tokens: classes.into_iter().map(AminoAcid::from_index).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedSequence {
    pub stage: usize,
    pub tokens: Vec<AminoAcid>,
}

impl PredictedSequence {
    pub fn to_fasta(&self, name: &str) -> String {
        let seq: String = self.tokens.iter().map(|a| a.one_letter()).collect();
        let mut out = format!(">{name}\n");
        for chunk in seq.as_bytes().chunks(60) {
            out.push_str(std::str::from_utf8(chunk).expect("ASCII letters"));
            out.push('\n');
        }
        out
    }
}

/// Softmax over each row of `logits`.
pub fn decode<T: Real>(
    logits: &Tensor<T>,
    stage: usize,
) -> Result<SequenceDistribution, FusionError> {
    if logits.cols != NUM_CLASSES {
        return Err(FusionError::Shape(format!(
            "{} logit columns, expected {NUM_CLASSES}",
            logits.cols
        )));
    }
    let mut probs = Vec::with_capacity(logits.len());
    for r in 0..logits.rows {
        let row: Vec<f64> = logits.row(r).iter().map(|v| v.f64()).collect();
        probs.extend(softmax(&row)?);
    }
    Ok(SequenceDistribution {
        stage,
        probs: Tensor::new(logits.rows, NUM_CLASSES, probs),
    })
}

fn check_prior(t: &Tensor<f64>, n: usize, dim: usize, what: &str) -> Result<(), FusionError> {
    if t.rows != n || t.cols != dim {
        return Err(FusionError::Shape(format!(
            "{what} prior is {}x{}, expected {n}x{dim}",
            t.rows, t.cols
        )));
    }
    Ok(())
}

/// Structure prior for `graph`, checked against the model's width.
pub fn structure_embedding<T: Real>(
    model: &InverseFoldingModel<T>,
    graph: &ResidueGraph,
    prior: &dyn StructurePrior,
) -> Result<Tensor<f64>, FusionError> {
    let e = prior.embed_structure(graph)?;
    check_prior(&e, graph.n, model.config().structure_dim, "structure")?;
    Ok(e)
}

/// Runs `stages` recycling stages on `g`. Geometry and the structure prior
/// are embedded once; stage 1 sees an all-mask sequence prior and stage
/// `t > 1` the argmax sequence of stage `t - 1`.
#[allow(clippy::too_many_arguments)]
pub fn recycle_forward<'g, T: Real>(
    g: &'g Graph<T>,
    p: &BoundParams<'g, T>,
    model: &InverseFoldingModel<T>,
    graph: &ResidueGraph,
    topo: &EdgeTopology,
    e_struct: &Tensor<f64>,
    seq_prior: &dyn SequencePrior,
    stages: usize,
) -> Result<Vec<StageOutput<'g, T>>, FusionError> {
    if stages == 0 {
        return Err(FusionError::InvalidParameter(
            "at least one recycling stage is required".into(),
        ));
    }
    check_prior(e_struct, graph.n, model.config().structure_dim, "structure")?;
    let (h_geom, e_geom) = model.embed_geometry(g, p, graph, topo)?;
    let e_if = g.constant(e_struct.cast());
    let mut tokens = vec![SeqToken::Mask; graph.n];
    let mut outputs = Vec::with_capacity(stages);
    for t in 0..stages {
        let e_seq = seq_prior.embed_sequence(&tokens)?;
        check_prior(&e_seq, graph.n, model.config().sequence_dim, "sequence")?;
        let fused = fuse(h_geom, e_if, g.constant(e_seq.cast()))?;
        let out = model.stage_forward(p, topo, fused, e_geom, t)?;
        let logits = out.logits.value();
        let classes = argmax_rows(logits.rows, logits.cols, &logits.to_f64());
        tokens = classes
            .into_iter()
            .map(|c| SeqToken::Residue(AminoAcid::from_index(c)))
            .collect();
        outputs.push(out);
    }
    Ok(outputs)
}

/// Result of cascaded inference on one protein.
#[derive(Debug, Clone)]
pub struct RecycleOutput {
    pub distributions: Vec<SequenceDistribution>,
    pub sequence: PredictedSequence,
    /// Attention of every layer, one dump per stage.
    pub attention: Vec<AttentionDump>,
}

/// Evaluation-mode cascaded inference.
pub fn recycle_infer<T: Real>(
    model: &InverseFoldingModel<T>,
    graph: &ResidueGraph,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
    stages: usize,
) -> Result<RecycleOutput, FusionError> {
    let topo = EdgeTopology::from_graph(graph)?;
    let e_struct = structure_embedding(model, graph, structure_prior)?;
    let g = Graph::new();
    let p = model.params.bind_frozen(&g);
    let outputs = recycle_forward(&g, &p, model, graph, &topo, &e_struct, seq_prior, stages)?;
    g.status()?;
    let mut distributions = Vec::with_capacity(stages);
    let mut attention = Vec::with_capacity(stages);
    for (t, out) in outputs.iter().enumerate() {
        distributions.push(decode(&out.logits.value(), t + 1)?);
        attention.push(AttentionDump {
            n: graph.n,
            k: graph.k,
            heads: model.config().heads,
            neighbors: graph.neighbors.clone(),
            layers: out.alphas.iter().map(|a| a.value().to_f64()).collect(),
        });
    }
    let sequence = distributions.last().expect("stages >= 1").argmax();
    Ok(RecycleOutput {
        distributions,
        sequence,
        attention,
    })
}

/// Exports a structure prior's output for `graph` as an embedding file.
pub fn export_structure_embedding(
    prior: &dyn StructurePrior,
    graph: &ResidueGraph,
    backbone: Option<&ProteinBackbone>,
) -> Result<EmbeddingFile, FusionError> {
    let values = prior.embed_structure(graph)?;
    Ok(EmbeddingFile {
        n: graph.n,
        dim: prior.dim(),
        provider: prior.tag(),
        kind: PriorKind::Structure,
        sequence_hash: backbone.map(|b| token_hash(&residue_tokens(&b.sequence()))),
        residue_index: Some(graph.seq_index.clone()),
        values,
    })
}

/// Exports a sequence prior's output for `tokens` as an embedding file.
pub fn export_sequence_embedding(
    prior: &dyn SequencePrior,
    tokens: &[SeqToken],
) -> Result<EmbeddingFile, FusionError> {
    let values = prior.embed_sequence(tokens)?;
    Ok(EmbeddingFile {
        n: tokens.len(),
        dim: prior.dim(),
        provider: prior.tag(),
        kind: PriorKind::Sequence,
        sequence_hash: Some(token_hash(tokens)),
        residue_index: None,
        values,
    })
}

#[cfg(test)]
mod tests;
