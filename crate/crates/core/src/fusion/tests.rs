use super::*;
use crate::geometry::{build_knn_graph, FeatureConfig};
use crate::model::ModelConfig;
use crate::rng::CounterRng;
use crate::structure::synthetic;

fn fixture() -> (InverseFoldingModel<f64>, ResidueGraph, ProteinBackbone) {
    let mut rng = CounterRng::new(70);
    let b = synthetic::random_backbone(12, &mut rng);
    let graph = build_knn_graph(
        &b,
        &FeatureConfig {
            k: 5,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let cfg = ModelConfig {
        hidden_dim: 8,
        heads: 2,
        depth: 1,
        dropout: 0.0,
        structure_dim: 6,
        sequence_dim: 4,
        ..Default::default()
    };
    let model = InverseFoldingModel::new(cfg, graph.node_dim, graph.edge_dim, 71).unwrap();
    (model, graph, b)
}

fn priors() -> (StubStructurePrior, StubSequencePrior) {
    (StubStructurePrior::new(6, 1), StubSequencePrior::new(4, 2))
}

#[test]
fn fuse_widths_and_zero_priors() {
    let g = Graph::<f64>::new();
    let h = g.constant(Tensor::full(3, 128, 1.0));
    let fused = fuse(
        h,
        g.constant(Tensor::zeros(3, 512)),
        g.constant(Tensor::zeros(3, 320)),
    )
    .unwrap()
    .value();
    assert_eq!(fused.shape(), [3, 960]);
    for r in 0..3 {
        assert!(fused.row(r)[..128].iter().all(|v| *v == 1.0));
        assert!(fused.row(r)[128..].iter().all(|v| *v == 0.0));
    }
    let short = g.constant(Tensor::zeros(2, 320));
    assert!(matches!(
        fuse(h, g.constant(Tensor::zeros(3, 512)), short),
        Err(FusionError::Shape(_))
    ));
}

#[test]
fn decode_contract() {
    let uniform = decode(&Tensor::<f64>::zeros(2, 20), 1).unwrap();
    assert!(uniform.probs.data.iter().all(|p| (p - 0.05).abs() < 1e-15));
    let mut logits = Tensor::<f64>::zeros(1, 20);
    logits.data[7] = 10.0;
    let d = decode(&logits, 1).unwrap();
    assert!(d.probs.data[7] > 0.999);
    assert_eq!(d.argmax().tokens[0], AminoAcid::from_index(7));
    let mut rng = CounterRng::new(3);
    let random = Tensor::<f64>::new(5, 20, (0..100).map(|_| 5.0 * rng.normal()).collect());
    let d = decode(&random, 2).unwrap();
    for r in 0..5 {
        assert!((d.probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!(decode(&Tensor::<f64>::zeros(1, 19), 1).is_err());
}

#[test]
fn single_stage_equals_plain_forward() {
    let (model, graph, _) = fixture();
    let (sp, qp) = priors();
    let out = recycle_infer(&model, &graph, &sp, &qp, 1).unwrap();
    let topo = EdgeTopology::from_graph(&graph).unwrap();
    let g = Graph::new();
    let p = model.params.bind_frozen(&g);
    let (h, e) = model.embed_geometry(&g, &p, &graph, &topo).unwrap();
    let s = g.constant(sp.embed_structure(&graph).unwrap());
    let q = g.constant(qp.embed_sequence(&vec![SeqToken::Mask; graph.n]).unwrap());
    let logits = model
        .stage_forward(&p, &topo, fuse(h, s, q).unwrap(), e, 0)
        .unwrap()
        .logits
        .value();
    assert_eq!(out.distributions.len(), 1);
    assert_eq!(out.distributions[0], decode(&logits, 1).unwrap());
}

#[test]
fn earlier_stages_ignore_later_ones() {
    let (model, graph, _) = fixture();
    let (sp, qp) = priors();
    let one = recycle_infer(&model, &graph, &sp, &qp, 1).unwrap();
    let three = recycle_infer(&model, &graph, &sp, &qp, 3).unwrap();
    assert_eq!(three.distributions.len(), 3);
    assert_eq!(one.distributions[0], three.distributions[0]);
    assert_eq!(three.sequence, three.distributions[2].argmax());
    let again = recycle_infer(&model, &graph, &sp, &qp, 3).unwrap();
    assert_eq!(again.distributions, three.distributions);
    assert!(matches!(
        recycle_infer(&model, &graph, &sp, &qp, 0),
        Err(FusionError::InvalidParameter(_))
    ));
}

#[test]
fn file_providers_reproduce_stub_providers() {
    let (model, graph, b) = fixture();
    let (sp, qp) = priors();
    let stub = recycle_infer(&model, &graph, &sp, &qp, 3).unwrap();

    let mut files = vec![export_sequence_embedding(&qp, &vec![SeqToken::Mask; graph.n]).unwrap()];
    for d in &stub.distributions[..2] {
        files.push(export_sequence_embedding(&qp, &residue_tokens(&d.argmax().tokens)).unwrap());
    }
    let round_trip = |e: &EmbeddingFile| {
        let mut bytes = Vec::new();
        write_embedding(&mut bytes, e).unwrap();
        read_embedding(bytes.as_slice()).unwrap()
    };
    let seq_file = FileSequencePrior::new(files.iter().map(round_trip).collect()).unwrap();
    let st = round_trip(&export_structure_embedding(&sp, &graph, Some(&b)).unwrap());
    let struct_file = FileStructurePrior::new(vec![st]).unwrap();
    let from_files = recycle_infer(&model, &graph, &struct_file, &seq_file, 3).unwrap();
    assert_eq!(from_files.distributions, stub.distributions);
}

#[test]
fn misordered_structure_rows_are_rejected() {
    let (_, graph, b) = fixture();
    let (sp, _) = priors();
    let mut e = export_structure_embedding(&sp, &graph, Some(&b)).unwrap();
    e.residue_index.as_mut().unwrap().swap(0, 1);
    let prior = FileStructurePrior::new(vec![e]).unwrap();
    assert!(matches!(
        prior.embed_structure(&graph),
        Err(FusionError::Shape(_))
    ));
}

#[test]
fn missing_sequence_embedding() {
    let (_, graph, _) = fixture();
    let (_, qp) = priors();
    let prior = FileSequencePrior::new(vec![export_sequence_embedding(
        &qp,
        &vec![SeqToken::Mask; graph.n],
    )
    .unwrap()])
    .unwrap();
    let tokens = vec![SeqToken::Residue(AminoAcid::Ala); graph.n];
    assert!(matches!(
        prior.embed_sequence(&tokens),
        Err(FusionError::MissingEmbedding(_))
    ));
}

#[test]
fn oracle_prior_switches_to_truth_after_mask() {
    let (_, _, b) = fixture();
    let (_, qp) = priors();
    let truth = b.sequence();
    let oracle = OracleSequencePrior {
        inner: qp.clone(),
        truth: truth.clone(),
    };
    let n = truth.len();
    let mask = vec![SeqToken::Mask; n];
    assert_eq!(
        oracle.embed_sequence(&mask).unwrap(),
        qp.embed_sequence(&mask).unwrap()
    );
    let guess = vec![SeqToken::Residue(AminoAcid::Gly); n];
    assert_eq!(
        oracle.embed_sequence(&guess).unwrap(),
        qp.embed_sequence(&residue_tokens(&truth)).unwrap()
    );
}

#[test]
fn stub_priors_are_deterministic_and_mask_aware() {
    let (sp, qp) = priors();
    let toks = [SeqToken::Mask, SeqToken::Residue(AminoAcid::Trp)];
    assert_eq!(
        qp.embed_sequence(&toks).unwrap(),
        qp.embed_sequence(&toks).unwrap()
    );
    let a = qp.embed_sequence(&toks).unwrap();
    assert_ne!(a.row(0), a.row(1));
    assert_eq!(SeqToken::Mask.index(), 21);
    assert_eq!(tokens_to_string(&toks), "#W");
    let (_, graph, _) = fixture();
    assert_eq!(
        sp.embed_structure(&graph).unwrap(),
        sp.embed_structure(&graph).unwrap()
    );
}
