mod manifest;
mod pipeline;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use bhtsne_core::{Format, Precision, TsneConfig, TsneError};
use clap::{Args, Parser, Subcommand};

/// Barnes-Hut t-SNE: embed, profile, score and plot.
#[derive(Debug, Parser)]
#[command(name = "bhtsne", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a dataset into 2-D and write the embedding, manifest and timings.
    Embed(EmbedArgs),
    /// Embed while reporting time spent per pipeline stage.
    Profile(ProfileArgs),
    /// Recompute the KL divergence of a stored embedding.
    Kl(KlArgs),
    /// Render an embedding as an SVG scatter plot.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Dataset, CSV or raw binary (detected from the file header).
    #[arg(long)]
    input: Option<PathBuf>,
    /// The CSV input starts with a header row.
    #[arg(long)]
    has_header: bool,
}

#[derive(Debug, Args)]
struct TsneArgs {
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
    /// Early exaggeration factor.
    #[arg(long, default_value_t = 12.0)]
    exaggeration: f64,
    /// Iterations run with early exaggeration.
    #[arg(long, default_value_t = 250)]
    exaggeration_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// f32 or f64.
    #[arg(long, default_value = "f64")]
    precision: Precision,
    /// Record a Barnes-Hut KL estimate every this many iterations.
    #[arg(long)]
    kl_every: Option<usize>,
}

impl TsneArgs {
    fn config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            theta: self.theta,
            n_iter: self.iters,
            learning_rate: self.learning_rate,
            early_exaggeration: self.exaggeration,
            exaggeration_iters: self.exaggeration_iters,
            seed: self.seed,
            threads: self.threads,
            precision: self.precision,
            kl_every: self.kl_every,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tsne: TsneArgs,
    /// Embedding output path.
    #[arg(long)]
    out: PathBuf,
    /// Embedding format (csv or bin); defaults to the --out extension.
    #[arg(long)]
    format: Option<Format>,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Stage timings path [default: <out>.timings.json].
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Re-run the input and configuration recorded in a manifest.
    #[arg(long, conflicts_with = "input")]
    from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tsne: TsneArgs,
    /// Stage timings path.
    #[arg(long, default_value = "profile.json")]
    timings: PathBuf,
    /// Also write the embedding here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct KlArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Embedding to score, N rows by 2 columns.
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value = "f64")]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Embedding, N rows by 2 columns.
    #[arg(long)]
    input: PathBuf,
    /// One integer class label per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Side length of the square canvas in pixels.
    #[arg(long, default_value_t = plot::DEFAULT_SIZE)]
    size: u32,
}

/// Bad flags or configuration (exit 2) versus failures while running (exit 1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<TsneError> for CliError {
    fn from(e: TsneError) -> Self {
        CliError::Run(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn required_input(input: &InputArgs) -> CliResult<PathBuf> {
    input
        .input
        .clone()
        .ok_or_else(|| CliError::Usage("--input is required".into()))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Embed(a) => {
            let format = a.format.unwrap_or_else(|| Format::from_extension(&a.out));
            let request = match &a.from_manifest {
                Some(path) => pipeline::RunRequest::from_manifest(path)?,
                None => pipeline::RunRequest {
                    input: required_input(&a.input)?,
                    has_header: a.input.has_header,
                    config: a.tsne.config(),
                },
            };
            let manifest = a.manifest.unwrap_or_else(|| sibling(&a.out, "manifest.json"));
            let timings = a.timings.unwrap_or_else(|| sibling(&a.out, "timings.json"));
            pipeline::embed(&request, &a.out, format, &manifest, &timings)
        }
        Command::Profile(a) => {
            let request = pipeline::RunRequest {
                input: required_input(&a.input)?,
                has_header: a.input.has_header,
                config: a.tsne.config(),
            };
            let out = a
                .out
                .as_ref()
                .map(|p| (p.as_path(), a.format.unwrap_or_else(|| Format::from_extension(p))));
            pipeline::profile(&request, &a.timings, out)
        }
        Command::Kl(a) => {
            let input = required_input(&a.input)?;
            let kl = pipeline::kl(
                &input,
                a.input.has_header,
                &a.embedding,
                a.perplexity,
                a.precision,
                a.threads,
            )?;
            println!("{kl:.6}");
            Ok(())
        }
        Command::Plot(a) => plot::run(&a.input, a.labels.as_deref(), &a.out, a.size),
    }
}

/// `emb.csv` -> `emb.csv.<suffix>`.
fn sibling(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
