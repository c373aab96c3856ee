use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, learning_rate, AdamW};
use super::{metric_sums, scored_count, staged_loss_graph, MetricSums, TrainConfig, TrainError};
use crate::fusion::{
    decode, recycle_forward, recycle_infer, structure_embedding, SequencePrior, StructurePrior,
};
use crate::geometry::{build_knn_graph, FeatureConfig};
use crate::model::{EdgeTopology, InverseFoldingModel, ModelShape};
use crate::numeric::{
    read_checkpoint, write_checkpoint, Checkpoint, Graph, NumericError, ParamStore, Real, Tensor,
};
use crate::rng::{mix64, CounterRng};
use crate::structure::{inject_backbone_noise, ProteinBackbone};

/// One line of the training log. `stage` is `1..=T`, `total` (staged
/// loss, with the perplexity of its per-stage mean) or `val`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub stage: String,
    pub loss: f64,
    pub ppl: f64,
    pub recovery: f64,
    pub lr: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "epoch,step,stage,loss,ppl,recovery,lr";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.9},{:.9},{:.4},{:.9e}",
            self.epoch, self.step, self.stage, self.loss, self.ppl, self.recovery, self.lr
        )
    }
}

pub fn write_log_csv<W: Write>(mut w: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "{}", LogRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best monitored perplexity.
    pub model: InverseFoldingModel<T>,
    pub log: Vec<LogRow>,
    pub steps: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded split of `0..count` into training and held-out indices. At
/// least one protein always stays in training.
pub fn split_corpus(count: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    CounterRng::new(seed).fork(0x5b1).shuffle(&mut idx);
    let val = ((count as f64 * val_fraction).round() as usize).min(count.saturating_sub(1));
    let held = idx.split_off(count - val);
    (idx, held)
}

/// Per-stage metric sums of eval-mode cascaded inference on clean
/// backbones.
pub fn evaluate_corpus<T: Real>(
    model: &InverseFoldingModel<T>,
    corpus: &[&ProteinBackbone],
    features: &FeatureConfig,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
) -> Result<Vec<MetricSums>, TrainError> {
    let stages = model.config().stages;
    let mut sums = vec![MetricSums::default(); stages];
    for b in corpus {
        let graph = build_knn_graph(b, features, None)?;
        let out = recycle_infer(model, &graph, structure_prior, seq_prior, stages)?;
        let (truth, mask) = (b.sequence(), b.loss_mask());
        for (s, d) in sums.iter_mut().zip(&out.distributions) {
            s.add(metric_sums(d, &truth, &mask)?);
        }
    }
    Ok(sums)
}

struct StepResult<T> {
    loss: f64,
    grads: Vec<Tensor<T>>,
    stage_sums: Vec<MetricSums>,
}

#[allow(clippy::too_many_arguments)]
fn batch_gradients<T: Real>(
    model: &InverseFoldingModel<T>,
    batch: &[&ProteinBackbone],
    features: &FeatureConfig,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepResult<T>, TrainError> {
    let stages = model.config().stages;
    let normalizer: usize = batch
        .iter()
        .map(|b| scored_count(&b.sequence(), &b.loss_mask()))
        .sum();
    if normalizer == 0 {
        return Err(TrainError::EmptyLoss);
    }
    let mut grads: Vec<Tensor<T>> = model
        .params
        .iter()
        .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
        .collect();
    let mut stage_sums = vec![MetricSums::default(); stages];
    let mut loss = 0.0;
    for (j, b) in batch.iter().enumerate() {
        let draw = mix64(cfg.seed ^ mix64(((step as u64) << 16) | j as u64));
        let noisy = inject_backbone_noise(b, cfg.noise_sigma, draw)?;
        let graph = build_knn_graph(&noisy, features, None)?;
        let topo = EdgeTopology::from_graph(&graph)?;
        let e_struct = structure_embedding(model, &graph, structure_prior)?;
        let g = Graph::training(mix64(draw)).with_finite_checks(false);
        let p = model.params.bind(&g);
        let outs = recycle_forward(&g, &p, model, &graph, &topo, &e_struct, seq_prior, stages)?;
        let (truth, mask) = (b.sequence(), b.loss_mask());
        let logits: Vec<_> = outs.iter().map(|o| o.logits).collect();
        let l = staged_loss_graph(&logits, &truth, &mask, normalizer)?;
        loss += l.item().f64();
        if !loss.is_finite() {
            return Ok(StepResult {
                loss,
                grads,
                stage_sums,
            });
        }
        for (t, lg) in logits.iter().enumerate() {
            stage_sums[t].add(metric_sums(&decode(&lg.value(), t + 1)?, &truth, &mask)?);
        }
        let gr = g.backward(l)?;
        for (acc, v) in grads.iter_mut().zip(&p.vars) {
            if let Some(d) = gr.get(*v) {
                acc.data.iter_mut().zip(&d.data).for_each(|(a, &x)| *a += x);
            }
        }
    }
    Ok(StepResult {
        loss,
        grads,
        stage_sums,
    })
}

/// Trains `model` on `corpus` with per-step backbone noise, dropout,
/// AdamW and the warmup/cosine schedule. Logs one row per stage per
/// epoch plus the staged total and, with a held-out split, validation
/// metrics of the final stage.
pub fn train_toy<T: Real>(
    mut model: InverseFoldingModel<T>,
    corpus: &[ProteinBackbone],
    features: &FeatureConfig,
    structure_prior: &dyn StructurePrior,
    seq_prior: &dyn SequencePrior,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::InvalidConfig("training corpus is empty".into()));
    }
    let stages = model.config().stages;
    let (train_idx, val_idx) = split_corpus(corpus.len(), cfg.val_fraction, cfg.seed);
    let val: Vec<&ProteinBackbone> = val_idx.iter().map(|&i| &corpus[i]).collect();
    let per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = cfg
        .max_steps
        .map_or(cfg.epochs * per_epoch, |m| m.min(cfg.epochs * per_epoch));
    let schedule_total = cfg.schedule_steps.unwrap_or(total);

    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut order_rng = CounterRng::new(cfg.seed).fork(0x0de5);
    let mut log = Vec::new();
    let mut step = 0;
    let mut best = (f64::INFINITY, 0usize);
    let mut best_params: ParamStore<T> = model.params.clone();
    let mut stale = 0;
    let mut stopped_early = false;
    let mut lr = 0.0;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order_rng.shuffle(&mut order);
        let mut sums = vec![MetricSums::default(); stages];
        for chunk in order.chunks(cfg.batch_size) {
            if step == total {
                break;
            }
            step += 1;
            let batch: Vec<&ProteinBackbone> = chunk.iter().map(|&i| &corpus[i]).collect();
            let mut r = batch_gradients(
                &model,
                &batch,
                features,
                structure_prior,
                seq_prior,
                cfg,
                step,
            )?;
            if !r.loss.is_finite() || r.grads.iter().any(|g| !g.all_finite()) {
                return Err(TrainError::TrainingDiverged { step, loss: r.loss });
            }
            clip_grad_norm(&mut r.grads, cfg.grad_clip_norm);
            lr = learning_rate(cfg.schedule, cfg.lr, cfg.warmup_steps, step, schedule_total);
            opt.step(&mut model.params, &r.grads, lr);
            for (s, o) in sums.iter_mut().zip(r.stage_sums) {
                s.add(o);
            }
        }
        if sums[0].residues == 0 {
            break;
        }
        let mut staged = 0.0;
        for (t, s) in sums.iter().enumerate() {
            let m = s.finish()?;
            staged += m.cross_entropy;
            log.push(LogRow {
                epoch,
                step,
                stage: (t + 1).to_string(),
                loss: m.cross_entropy,
                ppl: m.perplexity,
                recovery: m.recovery,
                lr,
            });
        }
        let last = sums[stages - 1].finish()?;
        log.push(LogRow {
            epoch,
            step,
            stage: "total".into(),
            loss: staged,
            ppl: (staged / stages as f64).exp(),
            recovery: last.recovery,
            lr,
        });
        let monitored = if val.is_empty() {
            last.perplexity
        } else {
            let v = evaluate_corpus(&model, &val, features, structure_prior, seq_prior)?
                [stages - 1]
                .finish()?;
            log.push(LogRow {
                epoch,
                step,
                stage: "val".into(),
                loss: v.cross_entropy,
                ppl: v.perplexity,
                recovery: v.recovery,
                lr,
            });
            v.perplexity
        };
        if monitored < best.0 {
            best = (monitored, epoch);
            best_params = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                stopped_early = true;
                break 'epochs;
            }
        }
        if step == total {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
        best_epoch: best.1,
        stopped_early,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    model: ModelShape,
    features: FeatureConfig,
}

/// Writes the model's parameters with everything needed to rebuild it.
pub fn save_model<T: Real, W: Write>(
    w: W,
    model: &InverseFoldingModel<T>,
    features: &FeatureConfig,
    rng: Option<CounterRng>,
) -> Result<(), TrainError> {
    let meta = serde_json::to_value(CheckpointMeta {
        model: model.shape.clone(),
        features: features.clone(),
    })
    .map_err(|e| NumericError::Shape(e.to_string()))?;
    write_checkpoint(
        w,
        &Checkpoint {
            params: model.params.clone(),
            rng,
            meta,
        },
    )?;
    Ok(())
}

/// Reads a checkpoint written by [`save_model`] at either precision.
pub fn load_model<T: Real, R: Read>(
    r: R,
) -> Result<(InverseFoldingModel<T>, FeatureConfig), TrainError> {
    let ck: Checkpoint<T> = read_checkpoint(r)?;
    let meta: CheckpointMeta = serde_json::from_value(ck.meta)
        .map_err(|e| TrainError::Shape(format!("checkpoint metadata: {e}")))?;
    let model = InverseFoldingModel::from_params(meta.model, ck.params)?;
    Ok((model, meta.features))
}
