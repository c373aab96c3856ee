//! Compares reverse-mode gradients of the full staged loss with central
//! finite differences on a small f64 model, one line per parameter tensor.
//!
//!     cargo run --release --example gradient_check -- [probes-per-tensor]

use invfold::fusion::{
    recycle_forward, structure_embedding, StubSequencePrior, StubStructurePrior,
};
use invfold::geometry::{build_knn_graph, FeatureConfig};
use invfold::model::{EdgeTopology, InverseFoldingModel, ModelConfig};
use invfold::numeric::gradient_probes;
use invfold::rng::CounterRng;
use invfold::structure::synthetic::random_backbone;
use invfold::training::staged_loss_graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let per_tensor: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(3);
    let features = FeatureConfig {
        k: 8,
        ..FeatureConfig::default()
    };
    let cfg = ModelConfig {
        hidden_dim: 32,
        heads: 4,
        depth: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let layout = features.layout();
    let model =
        InverseFoldingModel::<f64>::new(cfg.clone(), layout.node_dim(), layout.edge_dim(), 5)?;
    let (sp, qp) = (
        StubStructurePrior::standard(cfg.structure_dim),
        StubSequencePrior::standard(cfg.sequence_dim),
    );

    let backbone = random_backbone(20, &mut CounterRng::new(17));
    let graph = build_knn_graph(&backbone, &features, None)?;
    let topo = EdgeTopology::from_graph(&graph)?;
    let e_struct = structure_embedding(&model, &graph, &sp)?;
    let (truth, mask) = (backbone.sequence(), backbone.loss_mask());
    let normalizer = mask.iter().filter(|m| **m).count();

    let probes = gradient_probes(
        |g, p| {
            let outs = recycle_forward(g, p, &model, &graph, &topo, &e_struct, &qp, cfg.stages)
                .expect("forward");
            let logits: Vec<_> = outs.iter().map(|o| o.logits).collect();
            staged_loss_graph(&logits, &truth, &mask, normalizer).expect("loss")
        },
        &model.params,
        1e-5,
        per_tensor,
        1,
    );
    // Components this small sit at the finite-difference noise floor.
    let floor = 1e-5;
    let mut worst = 0.0f64;
    for id in model.params.ids() {
        let mine: Vec<_> = probes.iter().filter(|p| p.param == id).collect();
        let err = mine.iter().map(|p| p.error(floor)).fold(0.0, f64::max);
        worst = worst.max(err);
        println!(
            "{:<32} {} probes, max rel err {err:.2e}",
            model.params.name(id),
            mine.len()
        );
    }
    println!("{} probes, worst {worst:.2e}", probes.len());
    Ok(())
}
