//! `afd`: command-line driver for featurization, training, decoding,
//! alignment, scoring, figures and gradient checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

mod commands;
pub mod manifest;
pub mod svg;
pub mod transcript;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Failure classes, one per non-zero exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<afd_core::Error> for Failure {
    fn from(e: afd_core::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "afd", version, about = "Attention-based phone recognition and articulatory feature detection")]
struct Cli {
    /// Worker threads for per-utterance stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Where utterances come from. Exactly one source is required.
#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Corpus directory with a `corpus.json` manifest (see `synth-corpus`).
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Read TIMIT from the directory named by AFD_TIMIT_ROOT.
    #[arg(long)]
    pub timit: bool,
    /// Individual SPHERE or RIFF files (no markup).
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub audio: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract acoustic features into AFP1 files (not normalized).
    Featurize {
        #[command(flatten)]
        source: Source,
        /// Experiment config (front end section is used).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Feature kind: mfcc or fbank.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        no_deltas: bool,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fit per-dimension mean and variance over AFP1 files.
    FitNorm {
        /// Directory of `.afp` files.
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        /// Restrict to the ids listed one per line.
        #[arg(long, value_name = "FILE")]
        ids: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Generate a synthetic corpus (RIFF audio, .PHN markup, JSON manifest).
    SynthCorpus {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        utterances: usize,
        #[arg(long, default_value_t = 8)]
        phones: usize,
    },
    /// Train a model; writes the checkpoint, statistics and reports.
    Train(commands::TrainArgs),
    /// Decode utterances: transcripts, ATT1 attention and IPG1 posteriorgrams.
    Decode(commands::DecodeArgs),
    /// Frame-level and segment-level projection of decoded outputs.
    Align(commands::AlignArgs),
    /// Score transcripts, or a model on a corpus split.
    Eval(commands::EvalArgs),
    /// Render an ATT1 or IPG1 file as SVG.
    Plot(commands::PlotArgs),
    /// Finite-difference gradient checks of every block and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long)]
        json: bool,
    },
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be positive".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Featurize {
            source,
            config,
            kind,
            no_deltas,
            out,
        } => commands::featurize(&source, config.as_deref(), kind.as_deref(), no_deltas, &out, argv),
        Command::FitNorm { features, ids, out } => commands::fit_norm(&features, ids.as_deref(), &out, argv),
        Command::SynthCorpus {
            out,
            seed,
            utterances,
            phones,
        } => commands::synth_corpus(&out, seed, utterances, phones, argv),
        Command::Train(a) => commands::train(&a, argv),
        Command::Decode(a) => commands::decode(&a, argv),
        Command::Align(a) => commands::align(&a, argv),
        Command::Eval(a) => commands::eval(&a, argv),
        Command::Plot(a) => commands::plot(&a, argv),
        Command::Gradcheck { seed, epsilon, json } => commands::gradcheck(seed, epsilon, json),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, &args) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("afd: {}", f.message());
            f.exit_code()
        }
    }
}
