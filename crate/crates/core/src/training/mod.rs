//! Staged cross-entropy, perplexity and recovery, AdamW with warmup and
//! cosine decay, and a small training driver.

mod driver;
mod optim;
mod toy;

pub use driver::{
    evaluate_corpus, load_model, save_model, split_corpus, train_toy, write_log_csv, LogRow,
    TrainOutcome,
};
pub use optim::{clip_grad_norm, learning_rate, AdamW, Schedule};
pub use toy::{ToySetup, TOY_PROTEINS, TOY_STEPS};

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::fusion::{FusionError, SequenceDistribution};
use crate::geometry::GeometryError;
use crate::model::{ModelError, NUM_CLASSES};
use crate::numeric::{NumericError, Real, Tensor, Var};
use crate::structure::{AminoAcid, StructureError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no residue contributes to the loss")]
    EmptyLoss,
    #[error("training diverged at step {step}: loss {loss}")]
    TrainingDiverged { step: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch. The schedule
    /// decays to zero at `min(max_steps, epochs * steps_per_epoch)`.
    pub max_steps: Option<usize>,
    /// Length of the learning-rate schedule when it should differ from the
    /// run length. A short run with the schedule of a longer one replays
    /// that run's first steps exactly.
    pub schedule_steps: Option<usize>,
    /// Epochs without a validation perplexity improvement before stopping;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    /// Per-coordinate Gaussian backbone noise in angstroms, redrawn every step.
    pub noise_sigma: f64,
    /// Held-out share of the corpus used for early stopping. With no
    /// held-out proteins the final-stage training perplexity is monitored.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            warmup_steps: 1000,
            schedule: Schedule::Cosine,
            grad_clip_norm: 1.0,
            batch_size: 8,
            epochs: 100,
            max_steps: None,
            schedule_steps: None,
            early_stop_patience: 10,
            noise_sigma: 0.02,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1");
        }
        if self.max_steps == Some(0) || self.schedule_steps == Some(0) {
            return bad("max_steps and schedule_steps must be >= 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cross_entropy: f64,
    pub perplexity: f64,
    /// Percent of scored residues whose argmax class is the native one.
    pub recovery: f64,
    pub residues: usize,
}

/// Running sums behind [`Metrics`], so several proteins aggregate over
/// residues rather than over per-protein averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MetricSums {
    pub nll: f64,
    pub correct: usize,
    pub residues: usize,
}

impl MetricSums {
    pub fn add(&mut self, o: MetricSums) {
        self.nll += o.nll;
        self.correct += o.correct;
        self.residues += o.residues;
    }

    pub fn finish(&self) -> Result<Metrics, TrainError> {
        if self.residues == 0 {
            return Err(TrainError::EmptyLoss);
        }
        let ce = self.nll / self.residues as f64;
        Ok(Metrics {
            cross_entropy: ce,
            perplexity: ce.exp(),
            recovery: 100.0 * self.correct as f64 / self.residues as f64,
            residues: self.residues,
        })
    }
}

/// Whether residue `i` is scored: selected by `mask` and a canonical label.
fn scored(truth: &[AminoAcid], mask: &[bool], i: usize) -> bool {
    mask[i] && truth[i].is_canonical()
}

fn check_lengths(n: usize, truth: &[AminoAcid], mask: &[bool]) -> Result<(), TrainError> {
    if truth.len() != n || mask.len() != n {
        return Err(TrainError::Shape(format!(
            "{n} predictions, {} labels, {} mask entries",
            truth.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// Negative log-likelihood sums of one distribution against `truth`.
pub fn metric_sums(
    dist: &SequenceDistribution,
    truth: &[AminoAcid],
    mask: &[bool],
) -> Result<MetricSums, TrainError> {
    check_lengths(dist.n(), truth, mask)?;
    let pred = dist.argmax();
    let mut s = MetricSums::default();
    for i in 0..dist.n() {
        if !scored(truth, mask, i) {
            continue;
        }
        let c = truth[i].index();
        s.nll -= dist.probs.at(i, c).ln();
        s.correct += usize::from(pred.tokens[i] == truth[i]);
        s.residues += 1;
    }
    Ok(s)
}

/// Perplexity and recovery of one stage's distribution.
pub fn metrics(
    dist: &SequenceDistribution,
    truth: &[AminoAcid],
    mask: &[bool],
) -> Result<Metrics, TrainError> {
    metric_sums(dist, truth, mask)?.finish()
}

/// `-(1/N) sum_t sum_i log P_t(truth_i)` over the `N` scored residues;
/// stages are summed, not averaged.
pub fn staged_loss(
    dists: &[SequenceDistribution],
    truth: &[AminoAcid],
    mask: &[bool],
) -> Result<f64, TrainError> {
    check_lengths(truth.len(), truth, mask)?;
    let residues = scored_count(truth, mask);
    if residues == 0 {
        return Err(TrainError::EmptyLoss);
    }
    let mut total = 0.0;
    for d in dists {
        total += metric_sums(d, truth, mask)?.nll;
    }
    Ok(total / residues as f64)
}

/// Differentiable staged loss over stage logits. `normalizer` is the `N`
/// of the whole batch, so per-protein terms can be summed.
pub fn staged_loss_graph<'g, T: Real>(
    logits: &[Var<'g, T>],
    truth: &[AminoAcid],
    mask: &[bool],
    normalizer: usize,
) -> Result<Var<'g, T>, TrainError> {
    let first = logits
        .first()
        .ok_or_else(|| TrainError::Shape("no stage logits".into()))?;
    let n = first.rows();
    check_lengths(n, truth, mask)?;
    if normalizer == 0 {
        return Err(TrainError::EmptyLoss);
    }
    let idx: Rc<[usize]> = (0..n)
        .map(|i| {
            if scored(truth, mask, i) {
                truth[i].index()
            } else {
                0
            }
        })
        .collect();
    let weights: Vec<f64> = (0..n)
        .map(|i| if scored(truth, mask, i) { 1.0 } else { 0.0 })
        .collect();
    let g = first.graph();
    let w = g.constant(Tensor::from_f64(n, 1, &weights));
    let mut total: Option<Var<'g, T>> = None;
    for l in logits {
        if l.shape() != [n, NUM_CLASSES] {
            return Err(TrainError::Shape(format!(
                "stage logits {:?}, expected [{n}, {NUM_CLASSES}]",
                l.shape()
            )));
        }
        let picked = l
            .log_softmax_rows()
            .select_per_row(idx.clone())
            .mul(w)
            .sum();
        total = Some(match total {
            None => picked,
            Some(t) => t.add(picked),
        });
    }
    Ok(total
        .expect("at least one stage")
        .scale(-1.0 / normalizer as f64))
}

/// Number of residues that [`staged_loss`] scores.
pub fn scored_count(truth: &[AminoAcid], mask: &[bool]) -> usize {
    (0..truth.len().min(mask.len()))
        .filter(|&i| scored(truth, mask, i))
        .count()
}

#[cfg(test)]
mod tests;
