use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{load_backbone, print_json, read_input, write_output, CliError, CommonArgs};
use crate::geometry::{build_knn_graph, parse_secondary_structure, write_features};
use crate::structure::write_backbone;

#[derive(Debug, Clone, Args)]
pub struct FeaturizeArgs {
    /// PDB file (or backbone container).
    pub pdb: PathBuf,
    /// Chain to read.
    #[arg(long)]
    pub chain: Option<String>,
    /// Per-residue secondary-structure codes, one letter per residue.
    #[arg(long, value_name = "FILE")]
    pub secondary: Option<PathBuf>,
    /// Neighbors per residue (capped at n - 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// Feature container to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the parsed backbone as a backbone container.
    #[arg(long, value_name = "FILE")]
    pub backbone_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Serialize)]
struct Summary {
    n: usize,
    k: usize,
    node_dim: usize,
    edge_dim: usize,
    out: PathBuf,
}

pub fn run(a: FeaturizeArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(k) = a.k {
        cfg.features.k = k;
    }
    let chain = a.chain.unwrap_or(cfg.chain);
    let backbone = load_backbone(&a.pdb, &chain)?;
    let secondary = match &a.secondary {
        Some(path) => {
            let text = String::from_utf8(read_input(path)?)
                .map_err(|_| CliError::Parse(format!("{} is not text", path.display())))?;
            Some(parse_secondary_structure(&text)?)
        }
        None => None,
    };
    let graph = build_knn_graph(&backbone, &cfg.features, secondary.as_deref())?;
    let mut bytes = Vec::new();
    write_features(&mut bytes, &graph, Some(&cfg.features))?;
    write_output(&a.out, &bytes)?;
    if let Some(path) = &a.backbone_out {
        let mut bytes = Vec::new();
        write_backbone(&mut bytes, &backbone)?;
        write_output(path, &bytes)?;
    }
    print_json(&Summary {
        n: graph.n,
        k: graph.k,
        node_dim: graph.node_dim,
        edge_dim: graph.edge_dim,
        out: a.out,
    });
    Ok(())
}
