use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bhtsne_core::optimizer::{input_affinity, kl_divergence, KlMode, StepTimings};
use bhtsne_core::par::{current_num_threads, with_threads};
use bhtsne_core::tensor_io::load_csv;
use bhtsne_core::{
    load_matrix, run, save_matrix, Format, InputMatrix, Points, Precision, Real, Stage, TsneConfig, TsneOutput,
};

use crate::manifest::{sha256_file, write_json, InputRecord, OutputRecord, RunManifest};
use crate::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub input: PathBuf,
    pub has_header: bool,
    pub config: TsneConfig,
}

impl RunRequest {
    /// Input and configuration of an earlier run, after checking that the
    /// input file is unchanged.
    pub fn from_manifest(path: &Path) -> CliResult<Self> {
        let m = RunManifest::load(path)?;
        let actual = sha256_file(&m.input.path)?;
        if actual != m.input.sha256 {
            return Err(CliError::Run(anyhow::anyhow!(
                "{} changed since the manifest was written (sha256 {actual}, recorded {})",
                m.input.path.display(),
                m.input.sha256
            )));
        }
        Ok(RunRequest {
            input: m.input.path,
            has_header: m.input.has_header,
            config: m.config,
        })
    }
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::RawBinary => "bin",
    }
}

pub fn load_input<T: Real>(path: &Path, has_header: bool) -> anyhow::Result<InputMatrix<T>> {
    let m = match Format::sniff(path)? {
        Format::Csv => load_csv(path, has_header)?,
        Format::RawBinary => load_matrix(path, Format::RawBinary)?,
    };
    Ok(m)
}

fn validate(cfg: &TsneConfig) -> CliResult<()> {
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))
}

struct Completed<T> {
    output: TsneOutput<T>,
    n_dims: usize,
    threads: usize,
}

fn execute<T: Real>(req: &RunRequest) -> anyhow::Result<Completed<T>> {
    let x = load_input::<T>(&req.input, req.has_header)?;
    let output = run(&x, &req.config)?;
    let threads = with_threads(req.config.threads, current_num_threads)?;
    Ok(Completed {
        output,
        n_dims: x.n_dims(),
        threads,
    })
}

/// Writes the embedding and returns its manifest record.
fn write_embedding<T: Real>(y: &Points<T>, out: &Path, format: Format) -> anyhow::Result<OutputRecord> {
    save_matrix(&y.to_matrix()?, out, format)?;
    Ok(OutputRecord {
        path: out.to_path_buf(),
        format: format_name(format).into(),
        sha256: sha256_file(out)?,
    })
}

fn embed_typed<T: Real>(
    req: &RunRequest,
    out: &Path,
    format: Format,
    manifest: &Path,
    timings: &Path,
) -> anyhow::Result<()> {
    let done = execute::<T>(req)?;
    let TsneOutput {
        embedding,
        timings: t,
        kl,
        kl_history,
    } = &done.output;
    let record = write_embedding(&embedding.y, out, format)?;
    for (it, est) in kl_history {
        eprintln!("iteration {it}: KL ~ {est:.6}");
    }
    let m = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        input: InputRecord {
            path: req.input.clone(),
            has_header: req.has_header,
            sha256: sha256_file(&req.input)?,
            n_points: embedding.len(),
            n_dims: done.n_dims,
        },
        config: req.config.clone(),
        seed: req.config.seed,
        precision: req.config.precision,
        threads: done.threads,
        wall_s: t.wall_s,
        stage_s: RunManifest::stage_totals(t),
        kl: *kl,
        embedding: record,
    };
    m.save(manifest)?;
    write_json(timings, t)?;
    println!(
        "{} points -> {} in {:.2}s on {} thread(s), KL {kl:.6}",
        embedding.len(),
        out.display(),
        t.wall_s,
        done.threads
    );
    Ok(())
}

pub fn embed(req: &RunRequest, out: &Path, format: Format, manifest: &Path, timings: &Path) -> CliResult<()> {
    validate(&req.config)?;
    match req.config.precision {
        Precision::F64 => embed_typed::<f64>(req, out, format, manifest, timings)?,
        Precision::F32 => embed_typed::<f32>(req, out, format, manifest, timings)?,
    }
    Ok(())
}

/// Per-stage table: name, seconds, share of the summed stage time.
pub fn profile_table(t: &StepTimings) -> String {
    let sum = t.stage_sum();
    let mut s = format!("{:<12}{:>12}{:>9}{:>8}\n", "stage", "seconds", "%", "calls");
    for stage in Stage::ALL {
        let st = t.stage(stage);
        let pct = if sum > 0.0 { 100.0 * st.total() / sum } else { 0.0 };
        s += &format!(
            "{:<12}{:>12.4}{:>9.2}{:>8}\n",
            stage.name(),
            st.total(),
            pct,
            st.calls()
        );
    }
    s += &format!(
        "{:<12}{:>12.4}{:>9.2}\n",
        "stages",
        sum,
        if sum > 0.0 { 100.0 } else { 0.0 }
    );
    s += &format!("{:<12}{:>12.4}\n", "wall", t.wall_s);
    s
}

fn profile_typed<T: Real>(req: &RunRequest, timings: &Path, out: Option<(&Path, Format)>) -> anyhow::Result<()> {
    let done = execute::<T>(req)?;
    let t = &done.output.timings;
    if let Some((path, format)) = out {
        write_embedding(&done.output.embedding.y, path, format)?;
    }
    write_json(timings, t)?;
    println!(
        "{} points, {} iterations, {} thread(s), {} precision",
        done.output.embedding.len(),
        req.config.n_iter,
        done.threads,
        req.config.precision.name()
    );
    print!("{}", profile_table(t));
    Ok(())
}

pub fn profile(req: &RunRequest, timings: &Path, out: Option<(&Path, Format)>) -> CliResult<()> {
    validate(&req.config)?;
    match req.config.precision {
        Precision::F64 => profile_typed::<f64>(req, timings, out)?,
        Precision::F32 => profile_typed::<f32>(req, timings, out)?,
    }
    Ok(())
}

fn kl_typed<T: Real>(input: &Path, has_header: bool, embedding: &Path, cfg: &TsneConfig) -> anyhow::Result<f64> {
    let x = load_input::<T>(input, has_header)?;
    let y = load_matrix::<T>(embedding, Format::sniff(embedding)?)
        .with_context(|| format!("loading embedding {}", embedding.display()))?;
    if y.n_points() != x.n_points() {
        bail!(
            "embedding has {} points but the dataset has {}",
            y.n_points(),
            x.n_points()
        );
    }
    let y = Points::from_matrix(&y)?;
    with_threads(cfg.threads, || -> anyhow::Result<f64> {
        let p = input_affinity(&x, cfg, &mut StepTimings::default())?;
        Ok(kl_divergence(&p, &y, KlMode::Exact)?)
    })?
}

pub fn kl(
    input: &Path,
    has_header: bool,
    embedding: &Path,
    perplexity: f64,
    precision: Precision,
    threads: usize,
) -> CliResult<f64> {
    let cfg = TsneConfig {
        perplexity,
        precision,
        threads,
        ..Default::default()
    };
    validate(&cfg)?;
    let kl = match precision {
        Precision::F64 => kl_typed::<f64>(input, has_header, embedding, &cfg)?,
        Precision::F32 => kl_typed::<f32>(input, has_header, embedding, &cfg)?,
    };
    Ok(kl)
}
