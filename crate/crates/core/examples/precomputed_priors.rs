//! Exports the stub structure prior for one backbone to an embedding file,
//! serves it back through a file-backed prior and checks that inference
//! does not change.
//!
//!     cargo run --release --example precomputed_priors -- [dir]

use invfold::fusion::{
    export_structure_embedding, read_embedding, recycle_infer, write_embedding, FileStructurePrior,
    StubSequencePrior, StubStructurePrior,
};
use invfold::geometry::{build_knn_graph, FeatureConfig};
use invfold::model::{InverseFoldingModel, ModelConfig};
use invfold::rng::CounterRng;
use invfold::structure::synthetic::random_backbone;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let features = FeatureConfig::default();
    let cfg = ModelConfig::default();
    let layout = features.layout();
    let model =
        InverseFoldingModel::<f64>::new(cfg.clone(), layout.node_dim(), layout.edge_dim(), 2)?;
    let backbone = random_backbone(36, &mut CounterRng::new(4));
    let graph = build_knn_graph(&backbone, &features, None)?;

    let stub = StubStructurePrior::standard(cfg.structure_dim);
    let file = export_structure_embedding(&stub, &graph, Some(&backbone))?;
    let path = dir.join("structure_prior.emb");
    write_embedding(std::fs::File::create(&path)?, &file)?;
    println!(
        "wrote {} ({} x {}, provider {})",
        path.display(),
        file.n,
        file.dim,
        file.provider
    );
    assert_eq!(read_embedding(std::fs::File::open(&path)?)?, file);

    let served = FileStructurePrior::open(&[&path])?;
    let qp = StubSequencePrior::standard(cfg.sequence_dim);
    let live = recycle_infer(&model, &graph, &stub, &qp, cfg.stages)?;
    let cached = recycle_infer(&model, &graph, &served, &qp, cfg.stages)?;
    let same = live
        .distributions
        .iter()
        .zip(&cached.distributions)
        .all(|(a, b)| a.probs == b.probs);
    println!("file-backed prior reproduces every stage exactly: {same}");
    Ok(())
}
