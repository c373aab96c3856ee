use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{
    load_backbone, load_checkpoint, parse_fasta, print_json, read_input, sequence_prior,
    structure_prior, with_precision, write_output, CliError, CommonArgs, PrecisionTask, PriorArgs,
};
use crate::config::{Precision, RunConfig};
use crate::fusion::{recycle_infer, SequenceDistribution};
use crate::geometry::{build_knn_graph, read_features, ResidueGraph};
use crate::model::NUM_CLASSES;
use crate::model::{write_attention_dump, AttentionDump};
use crate::numeric::Real;
use crate::structure::{AminoAcid, ProteinBackbone};
use crate::training::{metrics, Metrics};

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Backbone to design for (PDB or backbone container).
    #[arg(
        long,
        value_name = "FILE",
        conflicts_with = "features",
        required_unless_present = "features"
    )]
    pub pdb: Option<PathBuf>,
    /// Pre-built feature container instead of a PDB.
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub chain: Option<String>,
    /// Recycling stages (default: the model's stage count).
    #[arg(long)]
    pub recycles: Option<usize>,
    /// Reference sequence (FASTA) for recovery and perplexity. A PDB input
    /// supplies its own.
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,
    /// Output directory for the FASTA, distributions and metrics.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Record name in the FASTA header (default: input file stem).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Also write every stage's per-layer attention as `{name}.stage{t}.attn`.
    #[arg(long)]
    pub dump_attention: bool,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Serialize)]
struct StageMetrics {
    stage: usize,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct Summary {
    name: String,
    residues: usize,
    stages: usize,
    sequence: String,
    metrics: Option<Vec<StageMetrics>>,
    fasta: PathBuf,
    distributions: PathBuf,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    attention: Vec<PathBuf>,
}

enum Input {
    Backbone(ProteinBackbone),
    Graph(ResidueGraph),
}

pub fn run(a: InferArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(t) = a.recycles {
        cfg.recycles = Some(t);
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    a.priors.apply(&mut cfg)?;
    cfg.validate()?;
    let chain = a.chain.clone().unwrap_or(cfg.chain.clone());
    let (input, source) = match (&a.pdb, &a.features) {
        (Some(p), _) => (Input::Backbone(load_backbone(p, &chain)?), p),
        (None, Some(f)) => (Input::Graph(read_features(&read_input(f)?[..])?), f),
        (None, None) => {
            return Err(CliError::Usage(
                "one of --pdb or --features is required".into(),
            ))
        }
    };
    let name = a.name.clone().unwrap_or_else(|| {
        source
            .file_stem()
            .map_or("design".into(), |s| s.to_string_lossy().into())
    });
    let reference = match &a.reference {
        Some(path) => {
            let text = String::from_utf8(read_input(path)?)
                .map_err(|_| CliError::Parse(format!("{} is not text", path.display())))?;
            Some(
                parse_fasta(&text)
                    .map_err(|m| CliError::Parse(format!("{}: {m}", path.display())))?
                    .1,
            )
        }
        None => match &input {
            Input::Backbone(b) => Some(b.sequence()),
            Input::Graph(_) => None,
        },
    };
    let task = Task {
        cfg: &cfg,
        checkpoint: &a.checkpoint,
        input: &input,
    };
    let (dists, dumps) = with_precision(cfg.precision, task)?;
    let n = dists[0].n();

    let metrics = match &reference {
        Some(truth) => {
            if truth.len() != n {
                return Err(CliError::Usage(format!(
                    "reference has {} residues, structure has {n}",
                    truth.len()
                )));
            }
            let mask: Vec<bool> = truth.iter().map(|a| a.is_canonical()).collect();
            let rows = dists
                .iter()
                .map(|d| {
                    Ok(StageMetrics {
                        stage: d.stage,
                        metrics: metrics(d, truth, &mask)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Some(rows)
        }
        None => None,
    };

    let predicted = dists.last().expect("at least one stage").argmax();
    let dir = &cfg.output_dir;
    let (fasta, distributions) = (
        dir.join(format!("{name}.fasta")),
        dir.join(format!("{name}.distributions.csv")),
    );
    write_output(&fasta, predicted.to_fasta(&name).as_bytes())?;
    write_output(&distributions, distributions_csv(&dists).as_bytes())?;
    let mut attention = Vec::new();
    if a.dump_attention {
        for (t, d) in dumps.iter().enumerate() {
            let path = dir.join(format!("{name}.stage{}.attn", t + 1));
            let mut bytes = Vec::new();
            write_attention_dump(&mut bytes, d)?;
            write_output(&path, &bytes)?;
            attention.push(path);
        }
    }
    if let Some(m) = &metrics {
        write_output(
            &dir.join(format!("{name}.metrics.json")),
            serde_json::to_string_pretty(m)
                .expect("serializes")
                .as_bytes(),
        )?;
    }
    print_json(&Summary {
        name,
        residues: n,
        stages: dists.len(),
        sequence: predicted.tokens.iter().map(|a| a.one_letter()).collect(),
        metrics,
        fasta,
        distributions,
        attention,
    });
    Ok(())
}

/// One row per stage and residue: `stage,position,A,C,...` in class order.
pub fn distributions_csv(dists: &[SequenceDistribution]) -> String {
    let mut out = String::from("stage,position");
    for c in 0..NUM_CLASSES {
        out.push(',');
        out.push(AminoAcid::from_index(c).one_letter());
    }
    out.push('\n');
    for d in dists {
        for i in 0..d.n() {
            write!(out, "{},{}", d.stage, i).expect("string write");
            for p in d.probs.row(i) {
                write!(out, ",{p:.6e}").expect("string write");
            }
            out.push('\n');
        }
    }
    out
}

struct Task<'a> {
    cfg: &'a RunConfig,
    checkpoint: &'a PathBuf,
    input: &'a Input,
}

impl PrecisionTask for Task<'_> {
    type Output = (Vec<SequenceDistribution>, Vec<AttentionDump>);

    fn run<T: Real>(self) -> Result<Self::Output, CliError> {
        let (model, features) = load_checkpoint::<T>(self.checkpoint)?;
        let built;
        let graph = match self.input {
            Input::Backbone(b) => {
                built = build_knn_graph(b, &features, None)?;
                &built
            }
            Input::Graph(g) => g,
        };
        let sp = structure_prior(&self.cfg.structure_prior, model.config().structure_dim)?;
        let qp = sequence_prior(&self.cfg.sequence_prior, model.config().sequence_dim)?;
        let stages = self.cfg.recycles.unwrap_or(model.config().stages);
        let out = recycle_infer(&model, graph, sp.as_ref(), qp.as_ref(), stages)?;
        Ok((out.distributions, out.attention))
    }
}
