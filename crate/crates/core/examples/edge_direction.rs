//! Shows that one encoder layer keeps the two directions of an edge apart:
//! perturbing the features of edge (s -> r) cannot change the updated
//! features of the reverse edge (r -> s), while the symmetric-edge ablation
//! couples them.
//!
//!     cargo run --release --example edge_direction

use invfold::geometry::{build_knn_graph, FeatureConfig};
use invfold::model::{encoder_layer, EdgeTopology, InverseFoldingModel, LayerState, ModelConfig};
use invfold::numeric::{Graph, Tensor};
use invfold::rng::CounterRng;
use invfold::structure::synthetic::random_backbone;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let features = FeatureConfig {
        k: 6,
        ..FeatureConfig::default()
    };
    let backbone = random_backbone(24, &mut CounterRng::new(3));
    let graph = build_knn_graph(&backbone, &features, None)?;
    let topo = EdgeTopology::from_graph(&graph)?;
    let layout = features.layout();
    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = InverseFoldingModel::<f64>::new(cfg, layout.node_dim(), layout.edge_dim(), 11)?;
    let ablated = model.symmetric_edge_ablation();

    let reverse = graph.reverse_slots();
    let (s, r) = reverse
        .iter()
        .enumerate()
        .find_map(|(s, r)| r.map(|r| (s, r)))
        .ok_or("no reciprocal edge")?;
    println!("slot {s} and slot {r} are the two directions of one edge");

    for (label, m) in [("directional", &model), ("symmetric ablation", &ablated)] {
        let change = |bump: f64| -> Result<Vec<f64>, Box<dyn std::error::Error>> {
            let g = Graph::new();
            let p = m.params.bind_frozen(&g);
            let (h, e) = m.embed_geometry(&g, &p, &graph, &topo)?;
            let mut ev = (*e.value()).clone();
            for c in 0..ev.cols {
                ev.data[s * ev.cols + c] += bump;
            }
            let e = g.constant(Tensor::new(ev.rows, ev.cols, ev.data));
            let (out, _) = encoder_layer(
                &topo,
                &p,
                &m.stage(0).layers[0],
                LayerState { h, e, layer: 0 },
            )?;
            Ok(out.e.value().row(r).to_vec())
        };
        let (before, after) = (change(0.0)?, change(0.75)?);
        let moved = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{label:>20}: reverse edge moved by {moved:.3e}");
    }
    Ok(())
}
