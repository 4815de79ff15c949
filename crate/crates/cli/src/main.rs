mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssm_influence::influence::AdjacencyConvention;
use ssm_influence::io::ReportFormat;
use ssm_influence::ssm::InputScaling;

#[derive(Parser, Debug)]
#[command(name = "ssm-influence", version, about = "Token influence scores for selective state-space language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every token of a prompt (or of each manifest entry).
    Analyze(AnalyzeArgs),
    /// Sample a continuation.
    Generate(GenerateArgs),
    /// Run one experiment, or `all` of them, and write reports.
    Experiment(ExperimentArgs),
    /// Write a seeded synthetic checkpoint and the built-in prompt suites.
    Synth(SynthArgs),
    /// Run the randomized oracle suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BMode {
    Raw,
    Delta,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Convention {
    Paper,
    Standard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args, Debug)]
struct ScoringArgs {
    /// Input map fed to the score: raw B or Δ·B.
    #[arg(long, value_enum, default_value = "raw")]
    b_mode: BMode,
    /// Propagator indexing: `paper` leaves the product empty for the next token.
    #[arg(long, value_enum, default_value = "paper")]
    convention: Convention,
    /// Accumulate model reductions in 64-bit floats.
    #[arg(long)]
    f64: bool,
}

impl ScoringArgs {
    fn scaling(&self) -> InputScaling {
        match self.b_mode {
            BMode::Raw => InputScaling::Raw,
            BMode::Delta => InputScaling::DeltaScaled,
        }
    }

    fn convention(&self) -> AdjacencyConvention {
        match self.convention {
            Convention::Paper => AdjacencyConvention::Paper,
            Convention::Standard => AdjacencyConvention::Standard,
        }
    }
}

#[derive(Args, Debug, Default)]
struct SamplingArgs {
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    rep_penalty: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Argmax decoding.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args, Debug)]
struct PromptArgs {
    /// Comma-separated token ids.
    #[arg(long, conflicts_with_all = ["text", "manifest"])]
    ids: Option<String>,
    /// Prompt text; only for byte-level vocabularies.
    #[arg(long, conflicts_with = "manifest")]
    text: Option<String>,
    /// Prompt manifest; every entry is processed.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    prompt: PromptArgs,
    /// Layers to keep, e.g. `0..3` or `0,2,5`.
    #[arg(long)]
    layers: Option<String>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write `analysis.csv` / `analysis.json` here instead of printing tables.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    f64: bool,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// temperature, complexity, token_type, layers, position, perturbation or all.
    name: String,
    #[arg(long)]
    model: PathBuf,
    /// Manifest file, or a directory holding `<experiment>.json` files.
    /// Defaults to the built-in byte-level suite.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Base seed; run `r` uses `seed + r`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Runs per condition.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Worker threads (default: all cores). SSM_INFLUENCE_THREADS overrides.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    n_layers: usize,
    #[arg(long, default_value_t = 16)]
    d_state: usize,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Case count for every suite (defaults differ per suite).
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Perturb the oracles; every suite should then fail.
    #[arg(long)]
    inject_fault: bool,
    /// Restrict to the named suites.
    #[arg(long)]
    suite: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Generate(a) => commands::generate(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Synth(a) => commands::synth(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
