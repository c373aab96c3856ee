use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use super::{
    load_backbone, load_checkpoint, read_input, sequence_prior, structure_files, structure_prior,
    with_precision, write_output, CliError, CommonArgs, PrecisionTask,
};
use crate::config::{Precision, RunConfig};
use crate::fusion::StubSequencePrior;
use crate::geometry::{build_knn_graph, FeatureConfig, ResidueGraph};
use crate::model::{read_attention_dump, InverseFoldingModel};
use crate::numeric::Real;
use crate::rng::CounterRng;
use crate::structure::{synthetic, ProteinBackbone};
use crate::theory::{
    contraction_comparison, oracle_stage_sums, oversmoothing_comparison, random_pair_fixture,
    recycling_monotonicity_report, resistance_sweep, return_mass, return_mass_series,
    softmax_sensitivity_check, stage_losses, stage_one_is_causal, DirectedAttention,
    RecyclingReport,
};
use crate::training::TOY_PROTEINS;

/// Largest Sherman-Morrison mismatch the resistance suite accepts.
pub const SHERMAN_MORRISON_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Rank-one Laplacian updates never raise effective resistance (hard check).
    Resistance,
    /// Return mass of a fixed attention graph.
    ReturnMass,
    /// First-order softmax product sensitivity bound (hard check).
    Sensitivity,
    /// Per-layer return mass of a model, directional vs symmetric edges.
    Contraction,
    /// Per-stage loss under recycling with an oracle sequence prior.
    Recycling,
    /// Node-state spread per layer, with and without the bridge.
    Oversmoothing,
}

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Attention graph for `return-mass`: `star<m>`, `two-cycle`, `cycle<n>`
    /// or an attention dump written by `infer --dump-attention`.
    #[arg(long, default_value = "star3")]
    pub graph: String,
    /// Random graphs in the resistance sweep.
    #[arg(long, default_value_t = 200)]
    pub graphs: usize,
    /// Largest graph in the resistance sweep.
    #[arg(long, default_value_t = 12)]
    pub max_n: usize,
    /// Violation tolerance of the resistance sweep.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Random fixtures in the sensitivity check.
    #[arg(long, default_value_t = 1000)]
    pub fixtures: usize,
    /// Perturbation size in the sensitivity check.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Model for the model-based suites; a freshly initialized one otherwise.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Structures for the model-based suites; the toy corpus otherwise.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Directory for `<suite>.json` and `<suite>.csv`.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

struct Report {
    json: serde_json::Value,
    csv: String,
    failure: Option<String>,
}

fn report<T: Serialize>(value: &T, csv: String, failure: Option<String>) -> Report {
    Report {
        json: serde_json::to_value(value).expect("report serializes"),
        csv,
        failure,
    }
}

pub fn run(a: TheoryArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    let name = a
        .suite
        .to_possible_value()
        .expect("named suite")
        .get_name()
        .to_string();
    let r = match a.suite {
        Suite::Resistance => resistance(&a, cfg.seed)?,
        Suite::ReturnMass => return_mass_suite(&a.graph)?,
        Suite::Sensitivity => sensitivity(&a, cfg.seed)?,
        Suite::Contraction | Suite::Recycling | Suite::Oversmoothing => {
            let corpus = corpus(&a, &cfg)?;
            with_precision(
                cfg.precision,
                ModelSuite {
                    args: &a,
                    cfg: &cfg,
                    corpus: &corpus,
                },
            )?
        }
    };
    let text = serde_json::to_string_pretty(&r.json).expect("report serializes");
    println!("{text}");
    if let Some(dir) = &a.out {
        write_output(&dir.join(format!("{name}.json")), text.as_bytes())?;
        write_output(&dir.join(format!("{name}.csv")), r.csv.as_bytes())?;
    }
    match r.failure {
        Some(why) => Err(CliError::Numeric(format!("{name} check failed: {why}"))),
        None => Ok(()),
    }
}

fn resistance(a: &TheoryArgs, seed: u64) -> Result<Report, CliError> {
    if a.max_n < 2 {
        return Err(CliError::Usage("--max-n must be >= 2".into()));
    }
    let s = resistance_sweep(a.graphs, a.max_n, a.tol, seed)?;
    let mut csv = String::from("graph,n,u,v,before,after\n");
    for r in &s.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.graph, r.n, r.u, r.v, r.before, r.after
        )
        .expect("string write");
    }
    let failure = if s.violations > 0 {
        Some(format!("{} pairs gained resistance", s.violations))
    } else if s.max_sherman_morrison_residual > SHERMAN_MORRISON_TOL {
        Some(format!(
            "Sherman-Morrison residual {:.3e}",
            s.max_sherman_morrison_residual
        ))
    } else {
        None
    };
    Ok(report(&s, csv, failure))
}

/// `star<m>`, `two-cycle` or `cycle<n>`, all with uniform attention.
pub fn named_attention(spec: &str) -> Result<DirectedAttention, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "unknown graph {spec:?}; expected star<m>, two-cycle or cycle<n>"
        ))
    };
    if spec == "two-cycle" {
        return Ok(DirectedAttention::two_cycle());
    }
    if let Some(m) = spec.strip_prefix("star") {
        let m: usize = m.parse().map_err(|_| bad())?;
        return if m == 0 {
            Err(bad())
        } else {
            Ok(DirectedAttention::star(m))
        };
    }
    if let Some(n) = spec.strip_prefix("cycle") {
        let n: usize = n.parse().map_err(|_| bad())?;
        if n < 3 {
            return Err(bad());
        }
        let nb: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
        return Ok(DirectedAttention::uniform(&nb));
    }
    Err(bad())
}

fn return_mass_suite(graph: &str) -> Result<Report, CliError> {
    if graph.ends_with(".attn") {
        return dump_return_mass(graph);
    }
    let att = named_attention(graph)?;
    let r = return_mass(&att)?;
    let mut csv = String::from("node,return_mass\n");
    for (i, v) in r.per_node.iter().enumerate() {
        writeln!(csv, "{i},{v}").expect("string write");
    }
    #[derive(Serialize)]
    struct Out<'a> {
        graph: &'a str,
        per_node: &'a [f64],
        mean: f64,
    }
    Ok(report(
        &Out {
            graph,
            per_node: &r.per_node,
            mean: r.mean,
        },
        csv,
        None,
    ))
}

/// Head-averaged return mass of every layer of an attention dump.
fn dump_return_mass(path: &str) -> Result<Report, CliError> {
    let dump = read_attention_dump(&read_input(std::path::Path::new(path))?[..])?;
    let series = return_mass_series(&dump)?;
    let mut csv = String::from("layer,return_mass\n");
    for (l, r) in series.iter().enumerate() {
        writeln!(csv, "{},{r}", l + 1).expect("string write");
    }
    #[derive(Serialize)]
    struct Out<'a> {
        graph: &'a str,
        n: usize,
        k: usize,
        heads: usize,
        per_layer: &'a [f64],
    }
    Ok(report(
        &Out {
            graph: path,
            n: dump.n,
            k: dump.k,
            heads: dump.heads,
            per_layer: &series,
        },
        csv,
        None,
    ))
}

fn sensitivity(a: &TheoryArgs, seed: u64) -> Result<Report, CliError> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(CliError::Usage("--eps must be positive".into()));
    }
    let mut rng = CounterRng::new(seed);
    let fixtures: Vec<_> = (0..a.fixtures)
        .map(|_| random_pair_fixture(&mut rng))
        .collect();
    let r = softmax_sensitivity_check(&fixtures, a.eps);
    let mut csv = String::from("fixture,measured,first_order_bound,second_order_slack\n");
    for (i, c) in r.cases.iter().enumerate() {
        writeln!(
            csv,
            "{i},{},{},{}",
            c.measured, c.first_order_bound, c.second_order_slack
        )
        .expect("string write");
    }
    let failure = (r.hard_violations > 0)
        .then(|| format!("{} fixtures exceed the bound plus slack", r.hard_violations));
    Ok(report(&r, csv, failure))
}

fn corpus(a: &TheoryArgs, cfg: &RunConfig) -> Result<Vec<ProteinBackbone>, CliError> {
    match &a.data {
        Some(dir) => {
            let files = structure_files(dir)?;
            if files.is_empty() {
                return Err(CliError::Usage(format!(
                    "no structure files in {}",
                    dir.display()
                )));
            }
            files.iter().map(|f| load_backbone(f, &cfg.chain)).collect()
        }
        None => Ok(synthetic::toy_corpus(TOY_PROTEINS, 30, 60, cfg.seed)),
    }
}

struct ModelSuite<'a> {
    args: &'a TheoryArgs,
    cfg: &'a RunConfig,
    corpus: &'a [ProteinBackbone],
}

#[derive(Serialize)]
struct RecyclingOut {
    /// Stage 1 is bit-identical alone and inside the full cascade.
    stage_one_causal: bool,
    /// Each protein served its own native sequence after stage 1.
    oracle: RecyclingReport,
    /// The configured sequence prior, fed the model's own predictions.
    model_prior: RecyclingReport,
}

impl PrecisionTask for ModelSuite<'_> {
    type Output = Report;

    fn run<T: Real>(self) -> Result<Report, CliError> {
        let (model, features): (InverseFoldingModel<T>, FeatureConfig) = match &self.args.checkpoint
        {
            Some(path) => load_checkpoint(path)?,
            None => {
                self.cfg.validate()?;
                let l = self.cfg.features.layout();
                let m = InverseFoldingModel::new(
                    self.cfg.model.clone(),
                    l.node_dim(),
                    l.edge_dim(),
                    self.cfg.seed,
                )?;
                (m, self.cfg.features.clone())
            }
        };
        let sp = structure_prior(&self.cfg.structure_prior, model.config().structure_dim)?;
        let qp = sequence_prior(&self.cfg.sequence_prior, model.config().sequence_dim)?;
        let graphs: Vec<ResidueGraph> = self
            .corpus
            .iter()
            .map(|b| build_knn_graph(b, &features, None))
            .collect::<Result<_, _>>()?;
        match self.args.suite {
            Suite::Contraction => {
                let c = contraction_comparison(&model, &graphs, sp.as_ref(), qp.as_ref())?;
                let mut csv = String::from("layer,directional,symmetric\n");
                for (l, (d, s)) in c
                    .directional
                    .series
                    .iter()
                    .zip(&c.symmetric.series)
                    .enumerate()
                {
                    writeln!(csv, "{},{d},{s}", l + 1).expect("string write");
                }
                Ok(report(&c, csv, None))
            }
            Suite::Oversmoothing => {
                let c = oversmoothing_comparison(&model, &graphs[0], sp.as_ref(), qp.as_ref())?;
                let mut csv = String::from("depth,with_bridge,without_bridge\n");
                for (l, (w, wo)) in c.with_bridge.iter().zip(&c.without_bridge).enumerate() {
                    writeln!(csv, "{l},{w},{wo}").expect("string write");
                }
                Ok(report(&c, csv, None))
            }
            _ => {
                let refs: Vec<&ProteinBackbone> = self.corpus.iter().collect();
                let inner = StubSequencePrior::standard(model.config().sequence_dim);
                let oracle = oracle_stage_sums(&model, &refs, &features, sp.as_ref(), &inner)?
                    .iter()
                    .map(|s| Ok(s.finish()?.cross_entropy))
                    .collect::<Result<Vec<_>, CliError>>()?;
                let plain = stage_losses(&model, &refs, &features, sp.as_ref(), qp.as_ref())?;
                let causal = stage_one_is_causal(
                    &model,
                    &graphs[0],
                    sp.as_ref(),
                    qp.as_ref(),
                    model.config().stages,
                )?;
                let out = RecyclingOut {
                    stage_one_causal: causal,
                    oracle: recycling_monotonicity_report(&oracle),
                    model_prior: recycling_monotonicity_report(&plain),
                };
                let mut csv =
                    String::from("stage,oracle_loss,oracle_ppl,model_prior_loss,model_prior_ppl\n");
                for t in 0..oracle.len() {
                    writeln!(
                        csv,
                        "{},{},{},{},{}",
                        t + 1,
                        oracle[t],
                        oracle[t].exp(),
                        plain[t],
                        plain[t].exp()
                    )
                    .expect("string write");
                }
                Ok(report(&out, csv, None))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_graphs() {
        assert_eq!(
            named_attention("star3").unwrap(),
            DirectedAttention::star(3)
        );
        assert_eq!(
            named_attention("two-cycle").unwrap(),
            DirectedAttention::two_cycle()
        );
        assert_eq!(
            return_mass(&named_attention("cycle5").unwrap())
                .unwrap()
                .mean,
            0.5
        );
        for bad in ["star0", "cycle2", "wheel4", "star"] {
            assert!(named_attention(bad).is_err(), "{bad}");
        }
    }
}
