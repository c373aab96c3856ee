//! Command-line front end. Every subcommand reads an optional JSON run
//! configuration, applies flag overrides on top, and reports JSON on
//! stdout. Exit codes: 1 usage or missing input, 2 unparsable input,
//! 3 numeric failure or a failed hard check.

mod eval;
mod featurize;
mod infer;
mod theory;
mod train;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, Precision, PriorSource, RunConfig};
use crate::container::ContainerError;
use crate::fusion::{
    FileSequencePrior, FileStructurePrior, FusionError, SequencePrior, StructurePrior,
    StubSequencePrior, StubStructurePrior,
};
use crate::geometry::GeometryError;
use crate::model::{InverseFoldingModel, ModelError};
use crate::numeric::{NumericError, Real};
use crate::structure::{
    parse_pdb, parse_sequence, read_backbone, AminoAcid, ProteinBackbone, StructureError,
    BACKBONE_MAGIC,
};
use crate::theory::TheoryError;
use crate::training::TrainError;

pub use eval::EvalArgs;
pub use featurize::FeaturizeArgs;
pub use infer::InferArgs;
pub use theory::{Suite, TheoryArgs};
pub use train::TrainArgs;

#[derive(Debug, Parser)]
#[command(
    name = "invfold",
    version,
    about = "Inverse folding on residue graphs with cascaded recycling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Featurize one chain of a PDB file into a feature container.
    Featurize(FeaturizeArgs),
    /// Train a model and write a checkpoint and a metrics CSV.
    Train(TrainArgs),
    /// Design a sequence for one backbone with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint on a directory of structures.
    Eval(EvalArgs),
    /// Run a theory check or diagnostic suite.
    Theory(TheoryArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON). Flags given here override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for everything random in the run.
    #[arg(long, env = "RIGA_SEED")]
    pub seed: Option<u64>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn from_container(e: ContainerError) -> CliError {
    match e {
        ContainerError::Io(e) => CliError::Usage(e.to_string()),
        other => CliError::Parse(other.to_string()),
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        from_container(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } | ConfigError::Invalid(_) => CliError::Usage(e.to_string()),
            ConfigError::Schema { .. } => CliError::Parse(e.to_string()),
        }
    }
}

impl From<StructureError> for CliError {
    fn from(e: StructureError) -> Self {
        match e {
            StructureError::Container(c) => from_container(c),
            StructureError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            StructureError::InvalidRotation { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Container(c) => from_container(c),
            GeometryError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            GeometryError::Annotation(_) => CliError::Parse(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<NumericError> for CliError {
    fn from(e: NumericError) -> Self {
        match e {
            NumericError::Container(c) => from_container(c),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numeric(n) => n.into(),
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Container(c) => from_container(c),
            FusionError::Model(m) => m.into(),
            FusionError::Numeric(n) => n.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Fusion(f) => f.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Numeric(n) => n.into(),
            TrainError::Geometry(g) => g.into(),
            TrainError::Structure(s) => s.into(),
            TrainError::Io(io) => CliError::Usage(io.to_string()),
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        match e {
            TheoryError::Model(m) => m.into(),
            TheoryError::Fusion(f) => f.into(),
            TheoryError::Numeric(n) => n.into(),
            TheoryError::Train(t) => t.into(),
            TheoryError::InvalidGraph(_) | TheoryError::InvalidAttention(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_from_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Featurize(a) => featurize::run(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Theory(a) => theory::run(a),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

/// A PDB file, or a backbone container recognized by its magic bytes.
pub fn load_backbone(path: &Path, chain: &str) -> Result<ProteinBackbone, CliError> {
    let bytes = read_input(path)?;
    if bytes.starts_with(BACKBONE_MAGIC) {
        return Ok(read_backbone(&bytes[..])?);
    }
    let text = String::from_utf8(bytes).map_err(|_| {
        CliError::Parse(format!(
            "{} is neither PDB text nor a backbone container",
            path.display()
        ))
    })?;
    parse_pdb(&text, chain).map_err(|e| match CliError::from(e) {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// PDB files (`.pdb`, `.ent`) and backbone containers (`.bkbn`) in a
/// directory, sorted by name.
pub fn structure_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|x| x.to_str()),
                Some("pdb" | "ent" | "bkbn")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Single-record FASTA.
pub fn parse_fasta(text: &str) -> Result<(String, Vec<AminoAcid>), String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let name = match lines.next() {
        Some(h) if h.starts_with('>') => h[1..].trim().to_string(),
        _ => return Err("FASTA must start with a '>' header".into()),
    };
    let mut seq = String::new();
    for line in lines {
        if line.starts_with('>') {
            return Err("expected a single FASTA record".into());
        }
        seq.push_str(line);
    }
    if seq.is_empty() {
        return Err("FASTA record has no residues".into());
    }
    let parsed = parse_sequence(&seq)
        .ok_or_else(|| "FASTA sequence has letters outside the amino-acid alphabet".to_string())?;
    Ok((name, parsed))
}

pub fn structure_prior(
    source: &PriorSource,
    dim: usize,
) -> Result<Box<dyn StructurePrior>, CliError> {
    Ok(match source {
        PriorSource::Stub(_) => Box::new(StubStructurePrior::standard(dim)),
        PriorSource::Files(paths) => Box::new(FileStructurePrior::open(paths)?),
    })
}

pub fn sequence_prior(
    source: &PriorSource,
    dim: usize,
) -> Result<Box<dyn SequencePrior>, CliError> {
    Ok(match source {
        PriorSource::Stub(_) => Box::new(StubSequencePrior::standard(dim)),
        PriorSource::Files(paths) => Box::new(FileSequencePrior::open(paths)?),
    })
}

/// Prior flags shared by commands that run the model.
#[derive(Debug, Clone, Args)]
pub struct PriorArgs {
    /// Structure prior: `stub` or embedding files (repeatable).
    #[arg(long = "struct-prior", value_name = "FILE|stub")]
    pub struct_prior: Vec<String>,
    /// Sequence prior: `stub` or embedding files (repeatable).
    #[arg(long = "seq-prior", value_name = "FILE|stub")]
    pub seq_prior: Vec<String>,
}

impl PriorArgs {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if !self.struct_prior.is_empty() {
            cfg.structure_prior =
                PriorSource::from_args(&self.struct_prior).map_err(CliError::Usage)?;
        }
        if !self.seq_prior.is_empty() {
            cfg.sequence_prior =
                PriorSource::from_args(&self.seq_prior).map_err(CliError::Usage)?;
        }
        Ok(())
    }
}

/// Runs `f` with the model in the requested precision.
pub trait PrecisionTask {
    type Output;
    fn run<T: Real>(self) -> Result<Self::Output, CliError>;
}

pub fn with_precision<P: PrecisionTask>(
    precision: Precision,
    task: P,
) -> Result<P::Output, CliError> {
    match precision {
        Precision::F32 => task.run::<f32>(),
        Precision::F64 => task.run::<f64>(),
    }
}

fn load_checkpoint<T: Real>(
    path: &Path,
) -> Result<(InverseFoldingModel<T>, crate::geometry::FeatureConfig), CliError> {
    let bytes = read_input(path)?;
    Ok(crate::training::load_model(&bytes[..])?)
}
