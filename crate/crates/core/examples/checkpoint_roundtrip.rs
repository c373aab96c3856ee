//! Saves a model checkpoint, reloads it in both precisions and confirms the
//! reloaded model predicts exactly what the original did.
//!
//!     cargo run --release --example checkpoint_roundtrip

use invfold::fusion::{recycle_infer, StubSequencePrior, StubStructurePrior};
use invfold::geometry::{build_knn_graph, FeatureConfig};
use invfold::model::{InverseFoldingModel, ModelConfig};
use invfold::rng::CounterRng;
use invfold::structure::synthetic::random_backbone;
use invfold::training::{load_model, save_model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let features = FeatureConfig::default();
    let cfg = ModelConfig::default();
    let layout = features.layout();
    let model =
        InverseFoldingModel::<f32>::new(cfg.clone(), layout.node_dim(), layout.edge_dim(), 42)?;
    let mut bytes = Vec::new();
    save_model(&mut bytes, &model, &features, None)?;
    println!(
        "{} tensors, {} scalars, {} bytes",
        model.params.len(),
        model.params.num_scalars(),
        bytes.len()
    );

    let (same, feats): (InverseFoldingModel<f32>, _) = load_model(&bytes[..])?;
    let (wide, _): (InverseFoldingModel<f64>, _) = load_model(&bytes[..])?;
    assert_eq!(feats, features);

    let (sp, qp) = (
        StubStructurePrior::standard(cfg.structure_dim),
        StubSequencePrior::standard(cfg.sequence_dim),
    );
    let graph = build_knn_graph(
        &random_backbone(30, &mut CounterRng::new(8)),
        &features,
        None,
    )?;
    let a = recycle_infer(&model, &graph, &sp, &qp, cfg.stages)?;
    let b = recycle_infer(&same, &graph, &sp, &qp, cfg.stages)?;
    let c = recycle_infer(&wide, &graph, &sp, &qp, cfg.stages)?;
    let gap = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let last =
        |o: &invfold::fusion::RecycleOutput| o.distributions.last().unwrap().probs.data.clone();
    println!(
        "f32 reload: max probability change {:.1e}",
        gap(&last(&a), &last(&b))
    );
    println!(
        "f64 reload: max probability change {:.1e}",
        gap(&last(&a), &last(&c))
    );
    println!("same design: {}", a.sequence.tokens == b.sequence.tokens);
    Ok(())
}
