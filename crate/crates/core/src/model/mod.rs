//! Geometric attention encoder: edge-as-key attention, directional edge
//! updates and the global context bridge, stacked and wrapped with input
//! projections and a per-residue classification head.

mod dump;
mod layer;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use dump::{read_attention_dump, write_attention_dump, AttentionDump, ATTENTION_MAGIC};
pub use layer::{
    edge_update, encoder_layer, encoder_stack, gau_attention, global_context_bridge,
    symmetrize_edges, BridgeMode, BridgeParams, EncoderLayer, GauParams, LayerSpec, LayerState,
};

use crate::geometry::ResidueGraph;
use crate::numeric::{
    Activation, BoundParams, Graph, LayerNorm, Linear, MlpBlock, NumericError, ParamStore, Real,
    Tensor, Var,
};
use crate::rng::CounterRng;
use crate::structure::AminoAcid;

/// Output classes: the 20 canonical amino acids.
pub const NUM_CLASSES: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Recycling stages `T`.
    pub stages: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub bridge: bool,
    pub bridge_mode: BridgeMode,
    /// `false` averages each edge with its reverse channel after every
    /// update (symmetric-edge ablation).
    pub directional_edges: bool,
    /// One encoder reused by every stage, or one per stage.
    pub share_stage_params: bool,
    pub structure_dim: usize,
    pub sequence_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            heads: 4,
            depth: 5,
            stages: 3,
            dropout: 0.1,
            activation: Activation::Gelu,
            bridge: true,
            bridge_mode: BridgeMode::Channel,
            directional_edges: true,
            share_stage_params: true,
            structure_dim: 512,
            sequence_dim: 320,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad("hidden_dim must be a positive multiple of heads");
        }
        if self.stages == 0 {
            return bad("stages must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Edge index arrays of a k-regular directed graph in slot order.
#[derive(Debug, Clone)]
pub struct EdgeTopology {
    pub n: usize,
    pub k: usize,
    /// `receivers[s] = s / k`.
    pub receivers: Rc<[usize]>,
    /// Neighbor (source) of slot `s`.
    pub senders: Rc<[usize]>,
    /// Slot of the reverse channel, or `s` itself when absent.
    pub reverse: Rc<[usize]>,
}

impl EdgeTopology {
    pub fn new(n: usize, k: usize, neighbors: &[usize]) -> Result<Self, ModelError> {
        if n == 0 || k == 0 {
            return Err(ModelError::IsolatedNode(0));
        }
        if neighbors.len() != n * k || neighbors.iter().any(|&j| j >= n) {
            return Err(ModelError::Shape(format!(
                "neighbor list of {} entries for n = {n}, k = {k}",
                neighbors.len()
            )));
        }
        let slot = |src: usize, dst: usize| {
            neighbors[dst * k..(dst + 1) * k]
                .iter()
                .position(|&j| j == src)
                .map(|m| dst * k + m)
        };
        let reverse = (0..n * k)
            .map(|s| slot(s / k, neighbors[s]).unwrap_or(s))
            .collect();
        Ok(EdgeTopology {
            n,
            k,
            receivers: (0..n * k).map(|s| s / k).collect(),
            senders: neighbors.into(),
            reverse,
        })
    }

    pub fn from_graph(g: &ResidueGraph) -> Result<Self, ModelError> {
        Self::new(g.n, g.k, &g.neighbors)
    }

    pub fn num_edges(&self) -> usize {
        self.n * self.k
    }
}

/// Parameters used by one recycling stage.
#[derive(Debug, Clone)]
pub struct StageModule {
    pub fuse: Linear,
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
    /// Two hidden layers of width `d` and a linear head to the classes.
    pub tuning: MlpBlock,
}

/// Everything a stage produces for one protein.
pub struct StageOutput<'g, T> {
    pub logits: Var<'g, T>,
    pub alphas: Vec<Var<'g, T>>,
    pub h: Var<'g, T>,
}

/// Build-time description stored next to the parameters in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub config: ModelConfig,
    pub node_in: usize,
    pub edge_in: usize,
}

#[derive(Debug, Clone)]
pub struct InverseFoldingModel<T> {
    pub shape: ModelShape,
    pub params: ParamStore<T>,
    pub node_proj: Linear,
    pub edge_proj: Linear,
    pub stages: Vec<StageModule>,
}

impl<T: Real> InverseFoldingModel<T> {
    pub fn new(
        config: ModelConfig,
        node_in: usize,
        edge_in: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = CounterRng::new(seed);
        let mut params = ParamStore::new();
        let d = config.hidden_dim;
        let node_proj = Linear::new(&mut params, "node_proj", node_in, d, true, &mut rng);
        let edge_proj = Linear::new(&mut params, "edge_proj", edge_in, d, true, &mut rng);
        let spec = LayerSpec {
            d,
            heads: config.heads,
            activation: config.activation,
            dropout: config.dropout,
            bridge: config.bridge.then_some(config.bridge_mode),
            directional: config.directional_edges,
        };
        let fused = d + config.structure_dim + config.sequence_dim;
        let count = if config.share_stage_params {
            1
        } else {
            config.stages
        };
        let stages = (0..count)
            .map(|t| {
                let name = format!("stage{t}");
                StageModule {
                    fuse: Linear::new(
                        &mut params,
                        &format!("{name}.fuse"),
                        fused,
                        d,
                        true,
                        &mut rng,
                    ),
                    layers: (0..config.depth)
                        .map(|l| {
                            EncoderLayer::new(
                                &mut params,
                                &format!("{name}.layer{l}"),
                                &spec,
                                &mut rng,
                            )
                        })
                        .collect(),
                    final_ln: LayerNorm::new(&mut params, &format!("{name}.final_ln"), d),
                    tuning: MlpBlock::new(
                        &mut params,
                        &format!("{name}.tuning"),
                        &[d, d, d, NUM_CLASSES],
                        config.activation,
                        config.dropout,
                        &mut rng,
                    ),
                }
            })
            .collect();
        Ok(InverseFoldingModel {
            shape: ModelShape {
                config,
                node_in,
                edge_in,
            },
            params,
            node_proj,
            edge_proj,
            stages,
        })
    }

    /// Rebuilds the layout for `shape` and adopts `params`, which must
    /// match it name for name and shape for shape.
    pub fn from_params(shape: ModelShape, params: ParamStore<T>) -> Result<Self, ModelError> {
        let mut model = Self::new(shape.config.clone(), shape.node_in, shape.edge_in, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for ((name, t), (want, w)) in params.iter().zip(model.params.iter()) {
            if name != want || t.shape() != w.shape() {
                return Err(ModelError::Shape(format!(
                    "checkpoint tensor {name} {:?} vs model {want} {:?}",
                    t.shape(),
                    w.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.shape.config
    }

    /// Same parameters with edges averaged with their reverse channel
    /// after the input projection and every update.
    pub fn symmetric_edge_ablation(&self) -> Self {
        let mut m = self.clone();
        m.shape.config.directional_edges = false;
        m.stages
            .iter_mut()
            .flat_map(|s| s.layers.iter_mut())
            .for_each(|l| l.directional = false);
        m
    }

    /// Same parameters with every global context bridge skipped.
    pub fn bridge_ablation(&self) -> Self {
        let mut m = self.clone();
        m.stages
            .iter_mut()
            .flat_map(|s| s.layers.iter_mut())
            .for_each(|l| l.bridge = None);
        m
    }

    /// Parameters of stage `t` (0-based).
    pub fn stage(&self, t: usize) -> &StageModule {
        &self.stages[t.min(self.stages.len() - 1)]
    }

    /// Projects raw node and edge features to the hidden width.
    pub fn embed_geometry<'g>(
        &self,
        g: &'g Graph<T>,
        p: &BoundParams<'g, T>,
        graph: &ResidueGraph,
        topo: &EdgeTopology,
    ) -> Result<(Var<'g, T>, Var<'g, T>), ModelError> {
        if graph.node_dim != self.shape.node_in || graph.edge_dim != self.shape.edge_in {
            return Err(ModelError::Shape(format!(
                "features are {}/{} wide, model expects {}/{}",
                graph.node_dim, graph.edge_dim, self.shape.node_in, self.shape.edge_in
            )));
        }
        let nodes = g.constant(Tensor::from_f64(graph.n, graph.node_dim, &graph.node_feats));
        let edges = g.constant(Tensor::from_f64(
            graph.num_edges(),
            graph.edge_dim,
            &graph.edge_feats,
        ));
        let h = self.node_proj.forward(p, nodes);
        let mut e = self.edge_proj.forward(p, edges);
        if !self.config().directional_edges {
            e = symmetrize_edges(topo, e);
        }
        Ok((h, e))
    }

    /// One stage on already fused node inputs.
    pub fn stage_forward<'g>(
        &self,
        p: &BoundParams<'g, T>,
        topo: &EdgeTopology,
        fused: Var<'g, T>,
        e_geom: Var<'g, T>,
        t: usize,
    ) -> Result<StageOutput<'g, T>, ModelError> {
        let m = self.stage(t);
        let want = m.fuse.fan_in;
        if fused.cols() != want {
            return Err(ModelError::Shape(format!(
                "fused width {} but stage expects {want}",
                fused.cols()
            )));
        }
        let h0 = m.fuse.forward(p, fused);
        let (state, alphas) = encoder_stack(topo, p, &m.layers, h0, e_geom)?;
        let h = m.final_ln.forward(p, state.h);
        let logits = m.tuning.forward(p, h);
        Ok(StageOutput { logits, alphas, h })
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(rows: usize, cols: usize, data: &[f64]) -> Vec<usize> {
    (0..rows)
        .map(|r| {
            let row = &data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn classes_to_sequence(classes: &[usize]) -> Vec<AminoAcid> {
    classes.iter().map(|&c| AminoAcid::from_index(c)).collect()
}
