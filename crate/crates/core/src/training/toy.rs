use crate::fusion::{StubSequencePrior, StubStructurePrior};
use crate::geometry::FeatureConfig;
use crate::model::ModelConfig;
use crate::structure::{synthetic, ProteinBackbone};

use super::TrainConfig;

/// Everything a memorization run needs: five synthetic proteins of 30 to
/// 60 residues, default featurization and model, stub priors, and 2000
/// single-protein steps on the full set.
#[derive(Debug, Clone)]
pub struct ToySetup {
    pub corpus: Vec<ProteinBackbone>,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub structure_prior: StubStructurePrior,
    pub seq_prior: StubSequencePrior,
}

pub const TOY_PROTEINS: usize = 5;
pub const TOY_STEPS: usize = 2000;

impl ToySetup {
    pub fn new(seed: u64) -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig {
            batch_size: 1,
            epochs: TOY_STEPS.div_ceil(TOY_PROTEINS),
            max_steps: Some(TOY_STEPS),
            early_stop_patience: 0,
            val_fraction: 0.0,
            seed,
            ..Default::default()
        };
        ToySetup {
            corpus: synthetic::toy_corpus(TOY_PROTEINS, 30, 60, seed),
            features: FeatureConfig::default(),
            structure_prior: StubStructurePrior::standard(model.structure_dim),
            seq_prior: StubSequencePrior::standard(model.sequence_dim),
            model,
            train,
        }
    }
}
