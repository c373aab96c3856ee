use serde::{Deserialize, Serialize};

use super::{EdgeTopology, ModelError};
use crate::numeric::{
    Activation, BoundParams, LayerNorm, MlpBlock, ParamId, ParamStore, Real, Var,
};
use crate::rng::CounterRng;

/// Node and directed-edge states entering layer `layer`. Edge row
/// `i * k + m` is the channel from the m-th neighbor into receiver `i`.
#[derive(Debug, Clone, Copy)]
pub struct LayerState<'g, T> {
    pub h: Var<'g, T>,
    pub e: Var<'g, T>,
    pub layer: usize,
}

/// Edge-as-key attention weights. `w_v` stacks the row blocks acting on
/// `[h_i | e_ji | h_j]`.
#[derive(Debug, Clone)]
pub struct GauParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub heads: usize,
    pub d: usize,
    pub d_e: usize,
}

impl GauParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_e: usize,
        heads: usize,
        rng: &mut CounterRng,
    ) -> Self {
        assert!(
            heads > 0 && d.is_multiple_of(heads),
            "hidden width must split evenly across heads"
        );
        GauParams {
            w_q: store.add_weight(format!("{name}.w_q"), d, d, rng),
            w_k: store.add_weight(format!("{name}.w_k"), d_e, d, rng),
            w_v: store.add_weight(format!("{name}.w_v"), 2 * d + d_e, d, rng),
            heads,
            d,
            d_e,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d / self.heads
    }
}

/// Receiver-wise attention with queries from nodes and keys from incoming
/// edges. Returns `(h_local, alpha)` where `alpha` is `E x heads`.
///
/// The value map is evaluated blockwise: `h_i W1` and `h_j W3` are computed
/// once per node and gathered per edge.
pub fn gau_attention<'g, T: Real>(
    topo: &EdgeTopology,
    p: &BoundParams<'g, T>,
    gp: &GauParams,
    h: Var<'g, T>,
    e: Var<'g, T>,
    dropout: f64,
) -> Result<(Var<'g, T>, Var<'g, T>), ModelError> {
    if topo.k == 0 {
        return Err(ModelError::IsolatedNode(0));
    }
    let (d, d_e, d_k) = (gp.d, gp.d_e, gp.d_k());
    let q = h.matmul(p[gp.w_q]);
    let key = e.matmul(p[gp.w_k]);
    let logits = q
        .gathered_block_dot(topo.receivers.clone(), key, gp.heads)
        .scale(1.0 / (d_k as f64).sqrt());
    let alpha = logits.segment_softmax(topo.k);
    let w_v = p[gp.w_v];
    let v = Var::gather_sum(&[
        (h.matmul(w_v.slice_rows(0, d)), Some(topo.receivers.clone())),
        (e.matmul(w_v.slice_rows(d, d_e)), None),
        (
            h.matmul(w_v.slice_rows(d + d_e, d)),
            Some(topo.senders.clone()),
        ),
    ]);
    let h_local = alpha.dropout(dropout).segment_attend(v, topo.k);
    Ok((h_local, alpha))
}

/// Residual update of every directed edge from `[h_i | h_j | e_ji]`.
///
/// Each channel reads only its own edge row, so `e_{j->i}` never sees
/// `e_{i->j}` within a layer. `e_in` is the (normalized) edge input to the
/// MLP and `e_res` the residual stream.
pub fn edge_update<'g, T: Real>(
    topo: &EdgeTopology,
    p: &BoundParams<'g, T>,
    mlp: &MlpBlock,
    h: Var<'g, T>,
    e_in: Var<'g, T>,
    e_res: Var<'g, T>,
) -> Var<'g, T> {
    let first = mlp.layers[0];
    let d = h.cols();
    let d_e = e_in.cols();
    let w = p[first.w];
    let mut pre = Var::gather_sum(&[
        (h.matmul(w.slice_rows(0, d)), Some(topo.receivers.clone())),
        (h.matmul(w.slice_rows(d, d)), Some(topo.senders.clone())),
        (e_in.matmul(w.slice_rows(2 * d, d_e)), None),
    ]);
    if let Some(b) = first.b {
        pre = pre.add_row(p[b]);
    }
    e_res.add(mlp.forward_from_first(p, pre))
}

/// How the bridge normalizes its pooling scores across nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BridgeMode {
    /// One softmax per feature channel.
    #[default]
    Channel,
    /// One scalar score per node shared by all channels.
    Scalar,
}

#[derive(Debug, Clone)]
pub struct BridgeParams {
    pub w_att: ParamId,
    pub w_val: ParamId,
    pub mlp_up: MlpBlock,
    pub mlp_in: MlpBlock,
    pub mlp_out: MlpBlock,
    pub mode: BridgeMode,
}

impl BridgeParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        mode: BridgeMode,
        activation: Activation,
        dropout: f64,
        rng: &mut CounterRng,
    ) -> Self {
        let att_cols = match mode {
            BridgeMode::Channel => d,
            BridgeMode::Scalar => 1,
        };
        BridgeParams {
            w_att: store.add_weight(format!("{name}.w_att"), d, att_cols, rng),
            w_val: store.add_weight(format!("{name}.w_val"), d, d, rng),
            mlp_up: MlpBlock::new(
                store,
                &format!("{name}.mlp_up"),
                &[2 * d, d, d],
                activation,
                dropout,
                rng,
            ),
            mlp_in: MlpBlock::new(
                store,
                &format!("{name}.mlp_in"),
                &[d, d, d],
                activation,
                dropout,
                rng,
            ),
            mlp_out: MlpBlock::new(
                store,
                &format!("{name}.mlp_out"),
                &[d, d, d],
                activation,
                dropout,
                rng,
            ),
            mode,
        }
    }
}

/// Attention-pooled global vector gated back into every node. Returns
/// `(h_out, g_pool)` with `g_pool` of shape `1 x d`.
pub fn global_context_bridge<'g, T: Real>(
    p: &BoundParams<'g, T>,
    bp: &BridgeParams,
    h: Var<'g, T>,
) -> (Var<'g, T>, Var<'g, T>) {
    let (n, d) = (h.rows(), h.cols());
    let mut alpha = h.matmul(p[bp.w_att]).segment_softmax(n);
    if bp.mode == BridgeMode::Scalar {
        alpha = alpha.repeat_cols(d);
    }
    let g_pool = alpha.mul(h.matmul(p[bp.w_val])).segment_sum(n);
    let g_rows = g_pool.gather_rows(vec![0; n].into());
    let u = bp.mlp_up.forward(p, Var::concat_cols(&[h, g_rows]));
    let z = u.mul(bp.mlp_in.forward(p, h).sigmoid());
    let h_out = h.mul(bp.mlp_out.forward(p, z).sigmoid());
    (h_out, g_pool)
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_h: LayerNorm,
    pub ln_e: LayerNorm,
    pub gau: GauParams,
    pub edge_mlp: MlpBlock,
    pub bridge: Option<BridgeParams>,
    pub directional: bool,
    pub dropout: f64,
}

/// Construction options shared by every encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub d: usize,
    pub heads: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub bridge: Option<BridgeMode>,
    pub directional: bool,
}

impl EncoderLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: &LayerSpec,
        rng: &mut CounterRng,
    ) -> Self {
        let d = spec.d;
        EncoderLayer {
            ln_h: LayerNorm::new(store, &format!("{name}.ln_h"), d),
            ln_e: LayerNorm::new(store, &format!("{name}.ln_e"), d),
            gau: GauParams::new(store, &format!("{name}.gau"), d, d, spec.heads, rng),
            edge_mlp: MlpBlock::new(
                store,
                &format!("{name}.edge_mlp"),
                &[3 * d, d, d],
                spec.activation,
                spec.dropout,
                rng,
            ),
            bridge: spec.bridge.map(|mode| {
                BridgeParams::new(
                    store,
                    &format!("{name}.bridge"),
                    d,
                    mode,
                    spec.activation,
                    spec.dropout,
                    rng,
                )
            }),
            directional: spec.directional,
            dropout: spec.dropout,
        }
    }
}

/// Gathers each edge with its reverse channel and averages them; edges
/// without a reverse partner are left as they are.
pub fn symmetrize_edges<'g, T: Real>(topo: &EdgeTopology, e: Var<'g, T>) -> Var<'g, T> {
    e.add(e.gather_rows(topo.reverse.clone())).scale(0.5)
}

/// Pre-normalized attention, edge update and bridge, with residual node
/// and edge streams. Returns the next state and this layer's `alpha`.
pub fn encoder_layer<'g, T: Real>(
    topo: &EdgeTopology,
    p: &BoundParams<'g, T>,
    layer: &EncoderLayer,
    state: LayerState<'g, T>,
) -> Result<(LayerState<'g, T>, Var<'g, T>), ModelError> {
    let x = layer.ln_h.forward(p, state.h);
    let e_n = layer.ln_e.forward(p, state.e);
    let (h_local, alpha) = gau_attention(topo, p, &layer.gau, x, e_n, layer.dropout)?;
    let mut e = edge_update(topo, p, &layer.edge_mlp, x, e_n, state.e);
    if !layer.directional {
        e = symmetrize_edges(topo, e);
    }
    let h_out = match &layer.bridge {
        Some(bp) => global_context_bridge(p, bp, h_local).0,
        None => h_local,
    };
    let next = LayerState {
        h: state.h.add(h_out),
        e,
        layer: state.layer + 1,
    };
    Ok((next, alpha))
}

/// Applies `layers` in order, collecting every layer's attention.
pub fn encoder_stack<'g, T: Real>(
    topo: &EdgeTopology,
    p: &BoundParams<'g, T>,
    layers: &[EncoderLayer],
    h: Var<'g, T>,
    e: Var<'g, T>,
) -> Result<(LayerState<'g, T>, Vec<Var<'g, T>>), ModelError> {
    let mut state = LayerState { h, e, layer: 0 };
    let mut alphas = Vec::with_capacity(layers.len());
    for layer in layers {
        let (next, alpha) = encoder_layer(topo, p, layer, state)?;
        state = next;
        alphas.push(alpha);
    }
    Ok((state, alphas))
}
