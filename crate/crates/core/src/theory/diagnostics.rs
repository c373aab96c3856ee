use serde::Serialize;

use super::attention::return_mass_series;
use super::TheoryError;
use crate::fusion::{
    fuse, recycle_infer, structure_embedding, OracleSequencePrior, SeqToken, SequencePrior,
    StructurePrior,
};
use crate::geometry::{FeatureConfig, ResidueGraph};
use crate::model::{encoder_layer, EdgeTopology, InverseFoldingModel, LayerState};
use crate::numeric::{Graph, Real, Tensor};
use crate::structure::ProteinBackbone;
use crate::training::{evaluate_corpus, MetricSums};

#[derive(Debug, Clone, Serialize)]
pub struct ContractionProfile {
    /// Graph-average return mass per layer, averaged over graphs.
    pub series: Vec<f64>,
    /// Largest `r^{l+1} / r^l` over layers with `r^l > 0`.
    pub max_ratio: f64,
}

/// Return mass of every layer of the final recycling stage.
pub fn contraction_profile<T: Real>(
    model: &InverseFoldingModel<T>,
    graphs: &[ResidueGraph],
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
) -> Result<ContractionProfile, TheoryError> {
    let depth = model.config().depth;
    let mut series = vec![0.0; depth];
    for graph in graphs {
        let out = recycle_infer(
            model,
            graph,
            structure_prior,
            seq_prior,
            model.config().stages,
        )?;
        let last = out.attention.last().expect("at least one stage");
        for (acc, r) in series.iter_mut().zip(return_mass_series(last)?) {
            *acc += r / graphs.len() as f64;
        }
    }
    let max_ratio = series
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ContractionProfile { series, max_ratio })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionComparison {
    pub directional: ContractionProfile,
    pub symmetric: ContractionProfile,
}

/// The model as trained next to its symmetric-edge ablation, on the same
/// graphs.
pub fn contraction_comparison<T: Real>(
    model: &InverseFoldingModel<T>,
    graphs: &[ResidueGraph],
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
) -> Result<ContractionComparison, TheoryError> {
    Ok(ContractionComparison {
        directional: contraction_profile(model, graphs, structure_prior, seq_prior)?,
        symmetric: contraction_profile(
            &model.symmetric_edge_ablation(),
            graphs,
            structure_prior,
            seq_prior,
        )?,
    })
}

/// Mean pairwise row distance divided by the mean row norm; 0 when all
/// rows are zero.
pub fn normalized_spread(h: &Tensor<f64>) -> f64 {
    let n = h.rows;
    let norm: f64 = (0..n)
        .map(|i| h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64;
    if n < 2 || norm == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += h
                .row(i)
                .iter()
                .zip(h.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64 / norm
}

/// Spread of the node states entering the first layer and leaving every
/// layer of stage 1 (all-mask sequence prior), in evaluation mode.
pub fn oversmoothing_profile<T: Real>(
    model: &InverseFoldingModel<T>,
    graph: &ResidueGraph,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
) -> Result<Vec<f64>, TheoryError> {
    let topo = EdgeTopology::from_graph(graph)?;
    let e_struct = structure_embedding(model, graph, structure_prior)?;
    let e_seq = seq_prior.embed_sequence(&vec![SeqToken::Mask; graph.n])?;
    let g = Graph::new();
    let p = model.params.bind_frozen(&g);
    let (h_geom, e_geom) = model.embed_geometry(&g, &p, graph, &topo)?;
    let fused = fuse(
        h_geom,
        g.constant(e_struct.cast()),
        g.constant(e_seq.cast()),
    )?;
    let stage = model.stage(0);
    let mut state = LayerState {
        h: stage.fuse.forward(&p, fused),
        e: e_geom,
        layer: 0,
    };
    let mut out = vec![normalized_spread(&state.h.value().cast())];
    for layer in &stage.layers {
        state = encoder_layer(&topo, &p, layer, state)?.0;
        out.push(normalized_spread(&state.h.value().cast()));
    }
    g.status()?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct OversmoothingComparison {
    pub with_bridge: Vec<f64>,
    pub without_bridge: Vec<f64>,
}

pub fn oversmoothing_comparison<T: Real>(
    model: &InverseFoldingModel<T>,
    graph: &ResidueGraph,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
) -> Result<OversmoothingComparison, TheoryError> {
    Ok(OversmoothingComparison {
        with_bridge: oversmoothing_profile(model, graph, structure_prior, seq_prior)?,
        without_bridge: oversmoothing_profile(
            &model.bridge_ablation(),
            graph,
            structure_prior,
            seq_prior,
        )?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecyclingReport {
    /// Cross-entropy of each stage.
    pub losses: Vec<f64>,
    pub perplexities: Vec<f64>,
    /// `L_T <= L_1`.
    pub final_not_worse: bool,
    pub non_increasing: bool,
}

pub fn recycling_monotonicity_report(losses: &[f64]) -> RecyclingReport {
    RecyclingReport {
        losses: losses.to_vec(),
        perplexities: losses.iter().map(|l| l.exp()).collect(),
        final_not_worse: match (losses.first(), losses.last()) {
            (Some(a), Some(b)) => b <= a,
            _ => true,
        },
        non_increasing: losses.windows(2).all(|w| w[1] <= w[0]),
    }
}

/// Per-stage cross-entropy of evaluation-mode inference over a corpus.
pub fn stage_losses<T: Real>(
    model: &InverseFoldingModel<T>,
    corpus: &[&ProteinBackbone],
    features: &FeatureConfig,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
) -> Result<Vec<f64>, TheoryError> {
    evaluate_corpus(model, corpus, features, structure_prior, seq_prior)?
        .iter()
        .map(|s| Ok(s.finish()?.cross_entropy))
        .collect()
}

/// Per-stage sums over a corpus with each protein served by an oracle
/// sequence prior built around its own native sequence.
pub fn oracle_stage_sums<T: Real, P: SequencePrior + Clone>(
    model: &InverseFoldingModel<T>,
    corpus: &[&ProteinBackbone],
    features: &FeatureConfig,
    structure_prior: &dyn StructurePrior,
    inner: &P,
) -> Result<Vec<MetricSums>, TheoryError> {
    let mut total = vec![MetricSums::default(); model.config().stages];
    for b in corpus {
        let oracle = OracleSequencePrior {
            inner: inner.clone(),
            truth: b.sequence(),
        };
        for (acc, s) in total.iter_mut().zip(evaluate_corpus(
            model,
            &[*b],
            features,
            structure_prior,
            &oracle,
        )?) {
            acc.add(s);
        }
    }
    Ok(total)
}

/// Whether stage 1 is bit-identical when run alone and as the first of
/// `stages` stages.
pub fn stage_one_is_causal<T: Real>(
    model: &InverseFoldingModel<T>,
    graph: &ResidueGraph,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
    stages: usize,
) -> Result<bool, TheoryError> {
    let alone = recycle_infer(model, graph, structure_prior, seq_prior, 1)?;
    let full = recycle_infer(model, graph, structure_prior, seq_prior, stages)?;
    let bits = |t: &Tensor<f64>| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    Ok(bits(&alone.distributions[0].probs) == bits(&full.distributions[0].probs))
}
