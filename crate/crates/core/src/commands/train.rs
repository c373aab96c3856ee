use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{
    load_backbone, print_json, sequence_prior, structure_files, structure_prior, with_precision,
    write_output, CliError, CommonArgs, PrecisionTask, PriorArgs,
};
use crate::config::{Precision, RunConfig};
use crate::model::InverseFoldingModel;
use crate::numeric::Real;
use crate::structure::{synthetic, ProteinBackbone};
use crate::training::{
    evaluate_corpus, save_model, train_toy, write_log_csv, Metrics, TOY_PROTEINS,
};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory of PDB files; without it the synthetic toy corpus is used.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint, metrics CSV and resolved config.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Serialize)]
struct StageSummary {
    stage: usize,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct Summary {
    proteins: usize,
    train_proteins: usize,
    val_proteins: usize,
    steps: usize,
    best_epoch: usize,
    stopped_early: bool,
    /// Clean-backbone metrics of the returned parameters on the training split.
    train: Vec<StageSummary>,
    checkpoint: PathBuf,
    metrics_csv: PathBuf,
}

pub fn run(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(d) = a.data {
        cfg.data_dir = Some(d);
    }
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    if let Some(s) = a.max_steps {
        cfg.train.max_steps = Some(s);
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    a.priors.apply(&mut cfg)?;
    cfg.validate()?;

    let corpus = match &cfg.data_dir {
        Some(dir) => {
            let files = structure_files(dir)?;
            if files.is_empty() {
                return Err(CliError::Usage(format!(
                    "no structure files in {}",
                    dir.display()
                )));
            }
            files
                .iter()
                .map(|f| load_backbone(f, &cfg.chain))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => synthetic::toy_corpus(TOY_PROTEINS, 30, 60, cfg.seed),
    };
    let summary = with_precision(
        cfg.precision,
        Task {
            cfg: &cfg,
            corpus: &corpus,
        },
    )?;
    print_json(&summary);
    Ok(())
}

struct Task<'a> {
    cfg: &'a RunConfig,
    corpus: &'a [ProteinBackbone],
}

impl PrecisionTask for Task<'_> {
    type Output = Summary;

    fn run<T: Real>(self) -> Result<Summary, CliError> {
        let cfg = self.cfg;
        let layout = cfg.features.layout();
        let model = InverseFoldingModel::<T>::new(
            cfg.model.clone(),
            layout.node_dim(),
            layout.edge_dim(),
            cfg.seed,
        )?;
        let sp = structure_prior(&cfg.structure_prior, cfg.model.structure_dim)?;
        let qp = sequence_prior(&cfg.sequence_prior, cfg.model.sequence_dim)?;
        let out = train_toy(
            model,
            self.corpus,
            &cfg.features,
            sp.as_ref(),
            qp.as_ref(),
            &cfg.train,
        )?;

        let dir = &cfg.output_dir;
        let (checkpoint, metrics_csv) = (dir.join("model.ckpt"), dir.join("metrics.csv"));
        let mut bytes = Vec::new();
        save_model(&mut bytes, &out.model, &cfg.features, None)?;
        write_output(&checkpoint, &bytes)?;
        let mut csv = Vec::new();
        write_log_csv(&mut csv, &out.log)?;
        write_output(&metrics_csv, &csv)?;
        write_output(&dir.join("config.json"), cfg.to_json().as_bytes())?;

        let train: Vec<&ProteinBackbone> =
            out.train_indices.iter().map(|&i| &self.corpus[i]).collect();
        let sums = evaluate_corpus(&out.model, &train, &cfg.features, sp.as_ref(), qp.as_ref())?;
        let train = sums
            .iter()
            .enumerate()
            .map(|(t, s)| {
                Ok(StageSummary {
                    stage: t + 1,
                    metrics: s.finish()?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(Summary {
            proteins: self.corpus.len(),
            train_proteins: out.train_indices.len(),
            val_proteins: out.val_indices.len(),
            steps: out.steps,
            best_epoch: out.best_epoch,
            stopped_early: out.stopped_early,
            train,
            checkpoint,
            metrics_csv,
        })
    }
}
