//! `provenance`: feature extraction, indexing, filtering, graph construction,
//! evaluation and synthetic data generation from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use provenance_core::config::{Builder, PipelineConfig};
use provenance_core::Error;

#[derive(Parser, Debug)]
#[command(name = "provenance", version, about = "Image provenance analysis pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Config file (`key = value` sections) or a run manifest to replay.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// surf2k, surf5k, dsurf or dsurf-if; overrides the config file's preset.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub rank_k: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Seed for index training, match sampling and synthesis.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract interest points and descriptors for every corpus image.
    Extract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Train an empty index from a sample of the extracted features.
    IndexTrain {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Add every feature file to a trained index.
    IndexAdd {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Rank the corpus for one query image.
    Query {
        /// Query image file (features are extracted on the fly).
        #[arg(long, conflicts_with = "id")]
        image: Option<PathBuf>,
        /// Id of an already extracted corpus image.
        #[arg(long)]
        id: Option<u64>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Rank CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a provenance graph from a rank or, with --oracle, a ground-truth case.
    Graph {
        #[arg(long, required_unless_present = "oracle")]
        rank: Option<PathBuf>,
        /// Query id of the rank.
        #[arg(long, required_unless_present = "oracle")]
        query: Option<u64>,
        /// Use the relevant set of --case instead of a rank.
        #[arg(long, requires = "case")]
        oracle: bool,
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long, value_parser = parse_builder)]
        builder: Option<Builder>,
        #[arg(long, value_name = "DIR")]
        dump_matrices: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Graph JSON to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write a Graphviz file.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Score the results of `end-to-end` against ground-truth cases.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic provenance dataset.
    Synth {
        /// Spec file; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank and graph every case query (or graph the oracle sets with --oracle).
    EndToEnd {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_parser = parse_builder)]
        builder: Option<Builder>,
        #[arg(long, value_name = "DIR")]
        dump_matrices: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_builder(s: &str) -> Result<Builder, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit codes, one per failure class.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const MISSING_INPUT: u8 = 3;
    pub const BAD_CONFIG: u8 = 4;
    pub const BAD_INDEX: u8 = 5;
    pub const BAD_IMAGE: u8 = 6;
    pub const FAILED: u8 = 1;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { source, .. } | Error::RawIo(source) if source.kind() == std::io::ErrorKind::NotFound => {
                    exit::MISSING_INPUT
                }
                Error::UnknownImage(_) => exit::MISSING_INPUT,
                Error::InvalidConfig(_) => exit::BAD_CONFIG,
                Error::BadMagic { .. } | Error::UnsupportedVersion { .. } | Error::Corrupt(_) => exit::BAD_INDEX,
                Error::Decode { .. } | Error::InvalidImage(_) => exit::BAD_IMAGE,
                _ => exit::FAILED,
            };
        }
        if let Some(e) = cause.downcast_ref::<commands::MissingInput>() {
            let _ = e;
            return exit::MISSING_INPUT;
        }
    }
    exit::FAILED
}

/// Config from file (or manifest), preset and flags, validated.
pub fn resolve_config(g: &GlobalOpts) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => manifest::load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(name) = &g.preset {
        let paths = cfg.paths.clone();
        let base = PipelineConfig::preset(name)?;
        cfg.preset = base.preset;
        cfg.detector = base.detector;
        cfg.filter.if_iterations = base.filter.if_iterations;
        cfg.paths = paths;
    }
    if let Some(k) = g.rank_k {
        cfg.filter.rank_k = k;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(s) = g.seed {
        cfg.index.seed = s;
        cfg.matching.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
