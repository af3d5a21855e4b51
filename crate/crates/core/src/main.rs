use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sparse_encoders::encoder::{information_loss, EncoderMode, SparseEncoder};
use sparse_encoders::harness::{
    self, reports_json, reports_table, ErrorRecord, ExperimentConfig, InputKind, OutputFormat, Sparsity, SweepAxis,
    SweepSpec,
};
use sparse_encoders::metrics::{self, VarianceConversion};
use sparse_encoders::synth::{self, SynthKind, SynthParams};
use sparse_encoders::{io, linalg, Error, MatrixFormat, Result, StrategyKind};

#[derive(Parser)]
#[command(name = "spenc", version, about = "Sparse linear encoders from column subset selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one encoder and report its losses.
    Encode(EncodeArgs),
    /// Run a grid of (k, sparsity, seed) points.
    Sweep(SweepArgs),
    /// Write a synthetic matrix.
    Gen(GenArgs),
    /// Measure a given encoder on a data matrix.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct Common {
    /// Base seed; falls back to SPENC_SEED, then 0.
    #[arg(long, env = "SPENC_SEED", default_value_t = 0)]
    seed: u64,
    /// Best-of trials for randomized selection.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: String,
    /// Output file (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// csv or matrix-market; guessed from the extension when absent.
    #[arg(long)]
    input_format: Option<String>,
    /// The input is a covariance or correlation matrix `A`; use `X = A^{1/2}`.
    #[arg(long)]
    covariance: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(short, long)]
    k: usize,
    /// Same sparsity for every column.
    #[arg(short, long, group = "sparsity")]
    r: Option<usize>,
    /// Comma-separated per-column sparsities (iterative).
    #[arg(long, value_delimiter = ',', group = "sparsity")]
    schedule: Option<Vec<usize>>,
    /// Accuracy parameter of the adaptive schedule.
    #[arg(long, group = "sparsity")]
    eps: Option<f64>,
    /// batch, iterative or tpower-deflation.
    #[arg(long, default_value = "batch")]
    algorithm: String,
    /// greedy or randomized.
    #[arg(long, default_value = "randomized")]
    strategy: String,
    /// Include wall-clock timings (reports are then not reproducible).
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    k_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', group = "axis")]
    r_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', group = "axis")]
    eps_values: Option<Vec<f64>>,
    #[arg(long, default_value_t = harness::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value = "batch")]
    algorithm: String,
    #[arg(long, default_value = "randomized")]
    strategy: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GenArgs {
    /// power-law, spiked, flat or all-ones.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 1.0)]
    decay: f64,
    #[arg(long, default_value_t = 3)]
    spikes: usize,
    #[arg(long, default_value_t = 10.0)]
    spike: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, env = "SPENC_SEED", default_value_t = 0)]
    seed: u64,
    /// csv or matrix-market.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Encoder loadings, d rows by k columns.
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_input(a: &InputArgs) -> Result<(PathBuf, Option<MatrixFormat>)> {
    let fmt = a.input_format.as_deref().map(str::parse).transpose()?;
    Ok((a.input.clone(), fmt))
}

fn sparsity(r: Option<usize>, schedule: Option<Vec<usize>>, eps: Option<f64>) -> Result<Sparsity> {
    match (r, schedule, eps) {
        (Some(r), None, None) => Ok(Sparsity::Fixed(r)),
        (None, Some(s), None) => Ok(Sparsity::Schedule(s)),
        (None, None, Some(e)) => Ok(Sparsity::Eps(e)),
        _ => Err(Error::InvalidArgument("give exactly one of --r, --schedule, --eps".into())),
    }
}

fn base_config(
    input: &InputArgs,
    k: usize,
    sparsity: Sparsity,
    algorithm: &str,
    strategy: &str,
    common: &Common,
) -> Result<ExperimentConfig> {
    let (path, fmt) = parse_input(input)?;
    let mut cfg = ExperimentConfig::new(k, sparsity);
    cfg.input = Some(path);
    cfg.input_format = fmt;
    cfg.input_kind = if input.covariance { InputKind::Covariance } else { InputKind::Data };
    cfg.algorithm = algorithm.parse()?;
    cfg.strategy = strategy.parse::<StrategyKind>()?;
    cfg.trials = common.trials;
    cfg.seed = common.seed;
    cfg.output = common.output.clone();
    cfg.output_format = common.format.parse()?;
    cfg.validate()?;
    Ok(cfg)
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn encode(a: EncodeArgs) -> Result<()> {
    let sp = sparsity(a.r, a.schedule, a.eps)?;
    let mut cfg = base_config(&a.input, a.k, sp, &a.algorithm, &a.strategy, &a.common)?;
    cfg.timings = a.timings;
    let report = harness::run(&cfg)?;
    let text = match cfg.output_format {
        OutputFormat::Json => reports_json(std::slice::from_ref(&report))?,
        OutputFormat::Csv => reports_table(std::slice::from_ref(&report)).to_csv()?,
    };
    emit(cfg.output.as_deref(), &text)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let axis = match (a.r_values, a.eps_values) {
        (Some(r), None) => SweepAxis::R(r),
        (None, Some(e)) => SweepAxis::Eps(e),
        _ => return Err(Error::InvalidArgument("give exactly one of --r-values, --eps-values".into())),
    };
    let first = match &axis {
        SweepAxis::R(v) => Sparsity::Fixed(v.first().copied().unwrap_or(1)),
        SweepAxis::Eps(v) => Sparsity::Eps(v.first().copied().unwrap_or(1.0)),
    };
    let k0 = a.k_values.first().copied().unwrap_or(1);
    let base = base_config(&a.input, k0, first, &a.algorithm, &a.strategy, &a.common)?;
    let spec = SweepSpec {
        axis,
        k_values: a.k_values,
        reps: a.reps,
    };
    let x = harness::load_input(&base)?;
    let table = harness::sweep(&x, &spec, &base)?;
    let text = match base.output_format {
        OutputFormat::Json => table.to_json()?,
        OutputFormat::Csv => table.to_csv()?,
    };
    emit(base.output.as_deref(), &text)
}

fn generate(a: GenArgs) -> Result<()> {
    let kind: SynthKind = a.kind.parse()?;
    let params = SynthParams {
        decay: a.decay,
        spikes: a.spikes,
        spike: a.spike,
        noise: a.noise,
    };
    let x = synth::generate_synthetic(kind, a.rows, a.cols, &params, a.seed)?;
    let fmt: MatrixFormat = a.format.parse()?;
    let text = match fmt {
        MatrixFormat::Csv => io::to_csv(&x)?,
        MatrixFormat::MatrixMarket => io::to_matrix_market(&x),
    };
    emit(a.output.as_deref(), &text)
}

#[derive(Serialize)]
struct MetricsRecord {
    n: usize,
    d: usize,
    k: usize,
    info_loss: f64,
    info_loss_normalized: Option<f64>,
    sym_explained_variance: f64,
    pca_loss: f64,
    per_column_sparsity: Vec<usize>,
    combined_sparsity: usize,
    avg_column_sparsity: f64,
    /// Present when the encoder columns are orthonormal.
    variance_conversion: Option<VarianceConversion>,
}

fn measure(a: MetricsArgs) -> Result<()> {
    let (path, fmt) = parse_input(&a.input)?;
    let kind = if a.input.covariance { InputKind::Covariance } else { InputKind::Data };
    let x = harness::prepare_input(io::load_matrix(&path, fmt)?, kind)?;
    let h = SparseEncoder::from_dense(io::load_matrix(&a.encoder, None)?.into_inner(), EncoderMode::External)?;
    let k = h.k();
    let normalized = metrics::normalized_information_loss(&x, &h, k)?;
    let record = MetricsRecord {
        n: x.rows(),
        d: x.cols(),
        k,
        info_loss: information_loss(&x, &h)?,
        info_loss_normalized: normalized.is_finite().then_some(normalized),
        sym_explained_variance: metrics::symmetric_explained_variance(&x, &h, k)?,
        pca_loss: linalg::svd(&x)?.tail_energy(k),
        per_column_sparsity: (0..k).map(|j| h.column_nnz(j)).collect(),
        combined_sparsity: metrics::combined_sparsity(&h),
        avg_column_sparsity: metrics::avg_column_sparsity(&h),
        variance_conversion: metrics::variance_conversion_check(&x, &h, k).ok(),
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Io(e.to_string()))?;
    emit(a.output.as_deref(), &text)
}

fn fail(e: &Error, output: Option<&Path>) -> ExitCode {
    eprintln!("spenc: {e}");
    #[derive(Serialize)]
    struct Record<'a> {
        error: &'a ErrorRecord,
    }
    let rec = ErrorRecord::from(e);
    let text = serde_json::to_string_pretty(&Record { error: &rec }).unwrap_or_default();
    let _ = emit(output, &text);
    ExitCode::from(rec.exit_code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail(&Error::InvalidArgument(first.to_string()), None);
        }
    };
    let output = match &cli.command {
        Command::Encode(a) => a.common.output.clone(),
        Command::Sweep(a) => a.common.output.clone(),
        Command::Gen(a) => a.output.clone(),
        Command::Metrics(a) => a.output.clone(),
    };
    let result = match cli.command {
        Command::Encode(a) => encode(a),
        Command::Sweep(a) => sweep(a),
        Command::Gen(a) => generate(a),
        Command::Metrics(a) => measure(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e, output.as_deref()),
    }
}

