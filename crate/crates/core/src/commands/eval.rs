use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use super::{
    load_backbone, load_checkpoint, parse_fasta, print_json, sequence_prior, structure_files,
    structure_prior, with_precision, write_output, CliError, CommonArgs, PrecisionTask, PriorArgs,
};
use crate::config::{Precision, RunConfig};
use crate::fusion::{recycle_infer, SequencePrior, StructurePrior};
use crate::geometry::{build_knn_graph, FeatureConfig};
use crate::model::InverseFoldingModel;
use crate::numeric::Real;
use crate::training::{metric_sums, MetricSums};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Directory of structures. `name.fasta` next to `name.pdb` overrides
    /// the reference sequence read from the structure.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long)]
    pub chain: Option<String>,
    #[arg(long)]
    pub recycles: Option<usize>,
    /// Metrics CSV to write; printed to stdout when absent.
    #[arg(long, short, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Proteins scored concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Final-stage metrics of one protein, or why it could not be scored.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub name: String,
    pub sums: Option<MetricSums>,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct Summary {
    proteins: usize,
    failed: usize,
    residues: usize,
    cross_entropy: Option<f64>,
    perplexity: Option<f64>,
    recovery: Option<f64>,
    csv: Option<PathBuf>,
}

pub fn run(a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(t) = a.recycles {
        cfg.recycles = Some(t);
    }
    if let Some(c) = &a.chain {
        cfg.chain = c.clone();
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    a.priors.apply(&mut cfg)?;
    cfg.validate()?;
    let files = structure_files(&a.data)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no structure files in {}",
            a.data.display()
        )));
    }
    let rows = with_precision(
        cfg.precision,
        Task {
            cfg: &cfg,
            checkpoint: &a.checkpoint,
            files: &files,
            jobs: a.jobs,
        },
    )?;

    let mut total = MetricSums::default();
    for s in rows.iter().filter_map(|r| r.sums) {
        total.add(s);
    }
    let csv = eval_csv(&rows, &total);
    let aggregate = total.finish().ok();
    match &a.out {
        Some(path) => {
            write_output(path, csv.as_bytes())?;
            print_json(&Summary {
                proteins: rows.len(),
                failed: rows.iter().filter(|r| r.error.is_some()).count(),
                residues: total.residues,
                cross_entropy: aggregate.map(|m| m.cross_entropy),
                perplexity: aggregate.map(|m| m.perplexity),
                recovery: aggregate.map(|m| m.recovery),
                csv: a.out.clone(),
            });
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// `name,residues,cross_entropy,ppl,recovery,error`, then an `ALL` row
/// pooling every scored residue: its perplexity is `exp` of the mean
/// cross-entropy over all residues of all proteins.
pub fn eval_csv(rows: &[EvalRow], total: &MetricSums) -> String {
    let mut out = String::from("name,residues,cross_entropy,ppl,recovery,error\n");
    let line = |name: &str, sums: Option<&MetricSums>, error: &str| match sums
        .and_then(|s| s.finish().ok())
    {
        Some(m) => format!(
            "{name},{},{},{},{},{error}\n",
            sums.map_or(0, |s| s.residues),
            m.cross_entropy,
            m.perplexity,
            m.recovery
        ),
        None => format!("{name},0,,,,{error}\n"),
    };
    for r in rows {
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&line(&r.name, r.sums.as_ref(), &error));
    }
    out.push_str(&line("ALL", Some(total), ""));
    out
}

struct Task<'a> {
    cfg: &'a RunConfig,
    checkpoint: &'a Path,
    files: &'a [PathBuf],
    jobs: usize,
}

impl PrecisionTask for Task<'_> {
    type Output = Vec<EvalRow>;

    fn run<T: Real>(self) -> Result<Vec<EvalRow>, CliError> {
        let (model, features) = load_checkpoint::<T>(self.checkpoint)?;
        let sp = structure_prior(&self.cfg.structure_prior, model.config().structure_dim)?;
        let qp = sequence_prior(&self.cfg.sequence_prior, model.config().sequence_dim)?;
        let stages = self.cfg.recycles.unwrap_or(model.config().stages);
        let ctx = Ctx {
            model: &model,
            features: &features,
            sp: sp.as_ref(),
            qp: qp.as_ref(),
            stages,
            chain: &self.cfg.chain,
        };
        let jobs = self.jobs.min(self.files.len());
        if jobs <= 1 {
            return Ok(self.files.iter().map(|f| ctx.score(f)).collect());
        }
        let mut rows: Vec<Option<EvalRow>> = vec![None; self.files.len()];
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let ctx = &ctx;
                    let files = self.files;
                    s.spawn(move || {
                        (j..files.len())
                            .step_by(jobs)
                            .map(|i| (i, ctx.score(&files[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, row) in h.join().expect("eval worker panicked") {
                    rows[i] = Some(row);
                }
            }
        });
        Ok(rows
            .into_iter()
            .map(|r| r.expect("every file scored"))
            .collect())
    }
}

struct Ctx<'a, T> {
    model: &'a InverseFoldingModel<T>,
    features: &'a FeatureConfig,
    sp: &'a dyn StructurePrior,
    qp: &'a dyn SequencePrior,
    stages: usize,
    chain: &'a str,
}

impl<T: Real> Ctx<'_, T> {
    fn score(&self, path: &Path) -> EvalRow {
        let name = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into(),
        );
        match self.try_score(path) {
            Ok(sums) => EvalRow {
                name,
                sums: Some(sums),
                error: None,
            },
            Err(e) => EvalRow {
                name,
                sums: None,
                error: Some(e.to_string()),
            },
        }
    }

    fn try_score(&self, path: &Path) -> Result<MetricSums, CliError> {
        let backbone = load_backbone(path, self.chain)?;
        let fasta = path.with_extension("fasta");
        let (truth, mask) = if fasta.exists() {
            let text = std::fs::read_to_string(&fasta)?;
            let (_, seq) = parse_fasta(&text)
                .map_err(|m| CliError::Parse(format!("reference {}: {m}", fasta.display())))?;
            if seq.len() != backbone.len() {
                return Err(CliError::Parse(format!(
                    "reference has {} residues, structure has {}",
                    seq.len(),
                    backbone.len()
                )));
            }
            let mask = seq.iter().map(|a| a.is_canonical()).collect();
            (seq, mask)
        } else {
            (backbone.sequence(), backbone.loss_mask())
        };
        let graph = build_knn_graph(&backbone, self.features, None)?;
        let out = recycle_infer(self.model, &graph, self.sp, self.qp, self.stages)?;
        Ok(metric_sums(
            out.distributions.last().expect("at least one stage"),
            &truth,
            &mask,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_pools_residues() {
        let a = MetricSums {
            nll: 2.0,
            correct: 1,
            residues: 2,
        };
        let b = MetricSums {
            nll: 9.0,
            correct: 3,
            residues: 3,
        };
        let rows = vec![
            EvalRow {
                name: "a".into(),
                sums: Some(a),
                error: None,
            },
            EvalRow {
                name: "bad".into(),
                sums: None,
                error: Some("malformed, really".into()),
            },
            EvalRow {
                name: "b".into(),
                sums: Some(b),
                error: None,
            },
        ];
        let mut total = MetricSums::default();
        total.add(a);
        total.add(b);
        let csv = eval_csv(&rows, &total);
        let last = csv.lines().last().unwrap();
        let fields: Vec<&str> = last.split(',').collect();
        assert_eq!(fields[0], "ALL");
        assert_eq!(fields[1], "5");
        // Pooled: exp(11 / 5), not the mean of per-protein perplexities.
        assert!((fields[3].parse::<f64>().unwrap() - (11.0f64 / 5.0).exp()).abs() < 1e-12);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 80.0);
        assert!(csv.contains("bad,0,,,,malformed; really"));
    }
}
