//! Executable checks of the graph-theoretic claims behind the encoder:
//! effective resistance under rank-one Laplacian updates, return mass of
//! attention, softmax product sensitivity, and measured diagnostics of
//! contraction, oversmoothing and recycling.

mod attention;
mod diagnostics;
mod resistance;

pub use attention::{
    random_pair_fixture, return_mass, return_mass_series, sensitivity_case,
    softmax_sensitivity_check, DirectedAttention, PairFixture, ReturnMassReport,
    SensitivityOutcome, SensitivityReport,
};
pub use diagnostics::{
    contraction_comparison, contraction_profile, normalized_spread, oracle_stage_sums,
    oversmoothing_comparison, oversmoothing_profile, recycling_monotonicity_report, stage_losses,
    stage_one_is_causal, ContractionComparison, ContractionProfile, OversmoothingComparison,
    RecyclingReport,
};
pub use resistance::{
    effective_resistance, jacobi_eigen, pseudoinverse, quadratic_form, random_connected_graph,
    rank_one_resistance_check, resistance_sweep, RankOneReport, ResistanceRow, ResistanceSweep,
    WeightedGraph, EIGEN_CUTOFF,
};

use crate::fusion::FusionError;
use crate::model::ModelError;
use crate::numeric::NumericError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum TheoryError {
    #[error("nodes {0} and {1} are disconnected")]
    InfiniteResistance(usize, usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid attention: {0}")]
    InvalidAttention(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Train(#[from] TrainError),
}
