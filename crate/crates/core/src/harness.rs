//! Experiment configuration, single runs and parameter sweeps.
//!
//! A run is a pure function of the data matrix and its [`ExperimentConfig`],
//! so reports are byte-identical across replays as long as timings are left
//! out. Sweep rows come back in grid order no matter how they were scheduled.

use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{psd_root, sparse_components_deflation, SymmetricMatrix};
use crate::cssp::{SelectionStrategy, StrategyKind};
use crate::encoder::{adaptive_schedule, batch_encoder, iterative_encoder, optimal_decoder, EncoderRun};
use crate::error::{Error, Result};
use crate::io::MatrixFormat;
use crate::linalg::{self, DataMatrix};
use crate::metrics::{Algorithm, LossReport, ReportContext};
use crate::rng::step_seed;

/// Repetitions per grid point when none are given.
pub const DEFAULT_REPS: usize = 25;

/// How sparse each encoder column may be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sparsity {
    /// The same `r` for every column.
    Fixed(usize),
    /// One entry per column (iterative only).
    Schedule(Vec<usize>),
    /// `r_j = 5 + ⌈5j/eps⌉`; batch and baseline runs use `r_k`.
    Eps(f64),
}

/// What the input file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Rows are observations.
    #[default]
    Data,
    /// A PSD matrix `A`; runs use `X = A^{1/2}`, so that `XᵀX = A`.
    Covariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown output format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub input: Option<PathBuf>,
    pub input_format: Option<MatrixFormat>,
    #[serde(default)]
    pub input_kind: InputKind,
    pub k: usize,
    pub sparsity: Sparsity,
    pub algorithm: Algorithm,
    pub strategy: StrategyKind,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub output_format: OutputFormat,
    /// Include wall-clock timings in reports (breaks byte-identical replays).
    pub timings: bool,
}

impl ExperimentConfig {
    pub fn new(k: usize, sparsity: Sparsity) -> Self {
        ExperimentConfig {
            input: None,
            input_format: None,
            input_kind: InputKind::Data,
            k,
            sparsity,
            algorithm: Algorithm::Batch,
            strategy: StrategyKind::Randomized,
            trials: 1,
            seed: 0,
            output: None,
            output_format: OutputFormat::Json,
            timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        match &self.sparsity {
            Sparsity::Fixed(0) => Err(Error::InvalidArgument("sparsity r must be at least 1".into())),
            Sparsity::Schedule(s) if s.is_empty() => Err(Error::InvalidArgument("empty sparsity schedule".into())),
            Sparsity::Schedule(_) if self.algorithm != Algorithm::Iterative => Err(Error::InvalidArgument(
                "a per-column schedule needs the iterative algorithm".into(),
            )),
            Sparsity::Eps(e) => adaptive_schedule(self.k, *e).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn selection_strategy(&self) -> SelectionStrategy {
        let base = match self.strategy {
            StrategyKind::Greedy => SelectionStrategy::greedy(),
            StrategyKind::Randomized => SelectionStrategy::randomized(self.seed),
        };
        base.with_seed(self.seed).with_trials(self.trials)
    }

    /// The single sparsity used by batch and baseline runs.
    fn uniform_r(&self) -> Result<usize> {
        match &self.sparsity {
            Sparsity::Fixed(r) => Ok(*r),
            Sparsity::Eps(e) => Ok(*adaptive_schedule(self.k, *e)?.last().expect("k >= 1")),
            Sparsity::Schedule(_) => Err(Error::InvalidArgument(
                "a per-column schedule needs the iterative algorithm".into(),
            )),
        }
    }
}

/// Truncated power method with deflation on `XᵀX`, measured on `X`.
pub fn tpower_deflation_run(x: &DataMatrix, k: usize, r: usize, seed: u64) -> Result<EncoderRun> {
    if r == 0 || r > x.cols() {
        return Err(Error::InvalidArgument(format!("sparsity r = {r} must lie in 1..={}", x.cols())));
    }
    let encoder = sparse_components_deflation(&SymmetricMatrix::gram(x), k, r, seed)?;
    let decoder = optimal_decoder(x, &encoder)?;
    let ctx = ReportContext {
        algorithm: Algorithm::TpowerDeflation,
        strategy: None,
        seed,
        trials: 1,
        k_requested: k,
        schedule: vec![r],
        budgets: vec![r; k],
        reduced_cardinality: Vec::new(),
        flags: Vec::new(),
    };
    let report = LossReport::assemble(x, &linalg::svd(x)?, &encoder, ctx)?;
    Ok(EncoderRun {
        encoder,
        decoder,
        report,
    })
}

/// One run of `cfg` on `x`, keeping the encoder and decoder.
pub fn run_encoder(x: &DataMatrix, cfg: &ExperimentConfig) -> Result<EncoderRun> {
    cfg.validate()?;
    let d = x.cols();
    let capped = |r: usize, report: &mut LossReport| {
        report.schedule = vec![r];
        if r > d {
            report.flags.push(format!("sparsity {r} capped at d = {d}"));
        }
    };
    let mut run = match cfg.algorithm {
        Algorithm::Batch => {
            let r = cfg.uniform_r()?;
            let mut run = batch_encoder(x, cfg.k, r.min(d), &cfg.selection_strategy())?;
            capped(r, &mut run.report);
            run
        }
        Algorithm::TpowerDeflation => {
            let r = cfg.uniform_r()?;
            let mut run = tpower_deflation_run(x, cfg.k, r.min(d), cfg.seed)?;
            capped(r, &mut run.report);
            run
        }
        Algorithm::Iterative => {
            let schedule = match &cfg.sparsity {
                Sparsity::Fixed(r) => vec![*r; cfg.k],
                Sparsity::Schedule(s) => s.clone(),
                Sparsity::Eps(e) => adaptive_schedule(cfg.k, *e)?,
            };
            let mut run = iterative_encoder(x, cfg.k, &schedule, &cfg.selection_strategy())?;
            if let Sparsity::Eps(e) = cfg.sparsity {
                run.report.prefix_bounds = run.report.prefix_bounds(&linalg::svd(x)?, e);
            }
            run
        }
    };
    if !cfg.timings {
        run.report.timings = None;
    }
    Ok(run)
}

/// One run of `cfg` on `x`.
pub fn run_on(x: &DataMatrix, cfg: &ExperimentConfig) -> Result<LossReport> {
    Ok(run_encoder(x, cfg)?.report)
}

/// Loads `cfg.input` and runs it.
pub fn run(cfg: &ExperimentConfig) -> Result<LossReport> {
    let x = load_input(cfg)?;
    run_on(&x, cfg)
}

pub fn load_input(cfg: &ExperimentConfig) -> Result<DataMatrix> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no input matrix given".into()))?;
    prepare_input(crate::io::load_matrix(path, cfg.input_format)?, cfg.input_kind)
}

pub fn prepare_input(x: DataMatrix, kind: InputKind) -> Result<DataMatrix> {
    match kind {
        InputKind::Data => Ok(x),
        InputKind::Covariance => psd_root(&SymmetricMatrix::new(x.into_inner())?),
    }
}

/// Machine-readable form of an [`Error`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().to_string(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    R(Vec<usize>),
    Eps(Vec<f64>),
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            SweepAxis::R(v) => v.len(),
            SweepAxis::Eps(v) => v.len(),
        }
    }

    fn sparsity(&self, i: usize) -> Sparsity {
        match self {
            SweepAxis::R(v) => Sparsity::Fixed(v[i]),
            SweepAxis::Eps(v) => Sparsity::Eps(v[i]),
        }
    }
}

/// Grid over `k` and sparsity, with `reps` seeds per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub k_values: Vec<usize>,
    pub reps: usize,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, k_values: Vec<usize>) -> Self {
        SweepSpec {
            axis,
            k_values,
            reps: DEFAULT_REPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis.len() == 0 || self.k_values.is_empty() || self.reps == 0 {
            return Err(Error::InvalidArgument("sweep grids and repetitions must be non-empty".into()));
        }
        Ok(())
    }
}

/// One row of a sweep. Exactly one of `report` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub k: usize,
    pub r: Option<usize>,
    pub eps: Option<f64>,
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<LossReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorRecord>,
}

/// Means over the successful repetitions of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub k: usize,
    pub r: Option<usize>,
    pub eps: Option<f64>,
    pub runs: usize,
    pub failed: usize,
    /// `None` when no run succeeded or some value was infinite.
    pub info_loss_normalized_mean: Option<f64>,
    pub sym_explained_variance_mean: Option<f64>,
    pub avg_column_sparsity_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub runs: Vec<SweepRow>,
    pub means: Vec<PointSummary>,
}

/// Columns of the long-format sweep CSV, in order.
pub const SWEEP_CSV_COLUMNS: [&str; 17] = [
    "index",
    "k",
    "r",
    "eps",
    "rep",
    "seed",
    "algorithm",
    "strategy",
    "status",
    "k_returned",
    "avg_column_sparsity",
    "combined_sparsity",
    "info_loss",
    "info_loss_normalized",
    "sym_explained_variance",
    "pca_loss",
    "error",
];

/// Runs every `(k, sparsity, rep)` point of `spec` in parallel. Repetition
/// `t` uses seed `step_seed(base.seed, t)`. Failed points are recorded and
/// the sweep continues.
pub fn sweep(x: &DataMatrix, spec: &SweepSpec, base: &ExperimentConfig) -> Result<SweepTable> {
    spec.validate()?;
    let mut points = Vec::new();
    for &k in &spec.k_values {
        for p in 0..spec.axis.len() {
            for rep in 0..spec.reps {
                points.push((k, p, rep));
            }
        }
    }
    let runs: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(index, &(k, p, rep))| {
            let mut cfg = base.clone();
            cfg.k = k;
            cfg.sparsity = spec.axis.sparsity(p);
            cfg.seed = step_seed(base.seed, rep);
            let (r, eps) = match cfg.sparsity {
                Sparsity::Fixed(r) => (Some(r), None),
                Sparsity::Eps(e) => (None, Some(e)),
                Sparsity::Schedule(_) => (None, None),
            };
            let outcome = run_on(x, &cfg);
            SweepRow {
                index,
                k,
                r,
                eps,
                rep,
                seed: cfg.seed,
                status: if outcome.is_ok() { "ok" } else { "error" }.into(),
                error: outcome.as_ref().err().map(ErrorRecord::from),
                report: outcome.ok(),
            }
        })
        .collect();
    let means = runs
        .chunks(spec.reps)
        .map(summarize)
        .collect();
    Ok(SweepTable { runs, means })
}

fn summarize(rows: &[SweepRow]) -> PointSummary {
    let ok: Vec<&LossReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
    let mean = |f: &dyn Fn(&LossReport) -> f64| {
        if ok.is_empty() {
            return None;
        }
        let m = ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64;
        m.is_finite().then_some(m)
    };
    PointSummary {
        k: rows[0].k,
        r: rows[0].r,
        eps: rows[0].eps,
        runs: ok.len(),
        failed: rows.len() - ok.len(),
        info_loss_normalized_mean: mean(&|r| r.info_loss_normalized),
        sym_explained_variance_mean: mean(&|r| r.sym_explained_variance),
        avg_column_sparsity_mean: mean(&|r| r.avg_column_sparsity),
    }
}

impl SweepTable {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Long format, one row per run, columns [`SWEEP_CSV_COLUMNS`].
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(SWEEP_CSV_COLUMNS).map_err(io)?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for row in &self.runs {
            let rep = row.report.as_ref();
            let num = |f: &dyn Fn(&LossReport) -> f64| opt(rep.map(|r| f(r).to_string()));
            w.write_record([
                row.index.to_string(),
                row.k.to_string(),
                opt(row.r.map(|r| r.to_string())),
                opt(row.eps.map(|e| e.to_string())),
                row.rep.to_string(),
                row.seed.to_string(),
                opt(rep.map(|r| r.algorithm.as_str().to_string())),
                opt(rep.and_then(|r| r.strategy).map(|s| s.as_str().to_string())),
                row.status.clone(),
                opt(rep.map(|r| r.k.to_string())),
                num(&|r| r.avg_column_sparsity),
                opt(rep.map(|r| r.combined_sparsity.to_string())),
                num(&|r| r.info_loss),
                num(&|r| r.info_loss_normalized),
                num(&|r| r.sym_explained_variance),
                num(&|r| r.pca_loss),
                opt(row.error.as_ref().map(|e| e.message.clone())),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// `{"runs": [...]}` for single reports.
pub fn reports_json(reports: &[LossReport]) -> Result<String> {
    #[derive(Serialize)]
    struct Runs<'a> {
        runs: &'a [LossReport],
    }
    serde_json::to_string_pretty(&Runs { runs: reports }).map_err(|e| Error::Io(e.to_string()))
}

/// Wraps single reports as sweep rows so they share the CSV layout.
pub fn reports_table(reports: &[LossReport]) -> SweepTable {
    let runs = reports
        .iter()
        .enumerate()
        .map(|(index, r)| SweepRow {
            index,
            k: r.k_requested,
            r: (r.schedule.len() == 1).then(|| r.schedule[0]),
            eps: None,
            rep: 0,
            seed: r.seed,
            status: "ok".into(),
            report: Some(r.clone()),
            error: None,
        })
        .collect();
    SweepTable { runs, means: Vec::new() }
}
