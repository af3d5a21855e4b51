//! Sparse linear encoders built from column selections.
//!
//! The batch encoder turns `r` selected columns into an encoder whose `k`
//! columns share one support of size at most `r`. The iterative encoder adds
//! one sparse column at a time, each fitted to the residual left by the
//! previous ones, so every prefix of it is itself an encoder.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cssp::{self, ColumnSelection, SelectionStrategy};
use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_sq, DataMatrix, SvdFactors};
use crate::metrics::{self, Algorithm, LossReport, ReportContext, Timings};
use crate::rng::step_seed;

/// Entries with magnitude at or below this count as zero.
pub const NNZ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// All columns share one support; columns are orthonormal.
    Batch,
    /// Columns built one at a time; supports may differ.
    Iterative,
    /// Baseline components extracted by deflation.
    Deflation,
    /// Supplied from outside the library.
    External,
}

/// A `d x k` loadings matrix `H` with per-column sparsity budgets and
/// supports. Column `j` is nonzero only inside `supports[j]`, and
/// `|supports[j]| <= budgets[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEncoder {
    loadings: DMatrix<f64>,
    budgets: Vec<usize>,
    supports: Vec<Vec<usize>>,
    mode: EncoderMode,
}

impl SparseEncoder {
    pub fn new(
        loadings: DMatrix<f64>,
        budgets: Vec<usize>,
        supports: Vec<Vec<usize>>,
        mode: EncoderMode,
    ) -> Result<Self> {
        linalg::ensure_finite(&loadings)?;
        let k = loadings.ncols();
        if budgets.len() != k || supports.len() != k {
            return Err(Error::InvalidInput(format!(
                "encoder has {k} columns but {} budgets and {} supports",
                budgets.len(),
                supports.len()
            )));
        }
        let enc = SparseEncoder {
            loadings,
            budgets,
            supports: supports
                .into_iter()
                .map(|mut s| {
                    s.sort_unstable();
                    s.dedup();
                    s
                })
                .collect(),
            mode,
        };
        if let Some(msg) = enc.contract_violations().first() {
            return Err(Error::InvalidInput(msg.clone()));
        }
        Ok(enc)
    }

    /// Wraps a dense loadings matrix; supports are its nonzero patterns and
    /// budgets their sizes.
    pub fn from_dense(loadings: DMatrix<f64>, mode: EncoderMode) -> Result<Self> {
        let supports: Vec<Vec<usize>> = loadings
            .column_iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() > NNZ_TOL)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let budgets = supports.iter().map(Vec::len).collect();
        Self::new(loadings, budgets, supports, mode)
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn dim(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn budgets(&self) -> &[usize] {
        &self.budgets
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn mode(&self) -> EncoderMode {
        self.mode
    }

    /// Number of entries of column `j` above [`NNZ_TOL`].
    pub fn column_nnz(&self, j: usize) -> usize {
        self.loadings
            .column(j)
            .iter()
            .filter(|v| v.abs() > NNZ_TOL)
            .count()
    }

    /// Sorted indices of rows with any entry above [`NNZ_TOL`].
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.loadings.row(i).iter().any(|v| v.abs() > NNZ_TOL))
            .collect()
    }

    /// Human-readable list of sparsity-contract violations (empty when the
    /// encoder honors its budgets and supports).
    pub fn contract_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for j in 0..self.k() {
            let nnz = self.column_nnz(j);
            if nnz > self.budgets[j] {
                out.push(format!(
                    "column {j} has {nnz} nonzeros, budget {}",
                    self.budgets[j]
                ));
            }
            if self.supports[j].len() > self.budgets[j] {
                out.push(format!(
                    "column {j} support size {} exceeds budget {}",
                    self.supports[j].len(),
                    self.budgets[j]
                ));
            }
            for (i, v) in self.loadings.column(j).iter().enumerate() {
                if v.abs() > NNZ_TOL && self.supports[j].binary_search(&i).is_err() {
                    out.push(format!("column {j} is nonzero at row {i} outside its support"));
                }
            }
        }
        if self.mode == EncoderMode::Batch {
            if let Some(first) = self.supports.first() {
                if self.supports.iter().any(|s| s != first) {
                    out.push("batch encoder columns do not share one support".into());
                }
            }
        }
        out
    }
}

/// A `k x d` decoder `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder(DMatrix<f64>);

impl Decoder {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_finite(&g)?;
        Ok(Decoder(g))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Output of [`encoder_from_columns`].
#[derive(Debug, Clone)]
pub struct ColumnEncoding {
    pub encoder: SparseEncoder,
    /// `G = Σ_R V_Rᵀ`, which reproduces `X_{C,k}` exactly: `XHG = X_{C,k}`.
    pub decoder: Decoder,
    /// Columns actually used after dropping dependent ones.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Encoder from a column selection.
///
/// With `C = XΩ = QR`, takes the SVD `R⁻¹(QᵀX)_k = U_R Σ_R V_Rᵀ` and returns
/// `H = Ω U_R`, `G = Σ_R V_Rᵀ`. Dependent selected columns are removed
/// first; fewer than `k` columns come back when fewer than `k` independent
/// ones remain.
pub fn encoder_from_columns(
    x: &DataMatrix,
    sel: &ColumnSelection,
    k: usize,
) -> Result<ColumnEncoding> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > sel.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds selection size r = {}",
            sel.len()
        )));
    }
    let basis = cssp::reduce_selection(x, sel)?;
    let qr = basis.qr.as_ref().ok_or(Error::DegenerateSelection {
        independent: 0,
        required: k,
    })?;
    let k_eff = k.min(basis.rank());
    let m = qr.q.transpose() * x.as_matrix();
    let mk = linalg::truncate_rank(&linalg::svd(&m)?, k_eff)?;
    let t = qr
        .r
        .solve_upper_triangular(&mk)
        .ok_or_else(|| Error::Numerical("triangular solve with R failed".into()))?;
    let f = linalg::svd(&t)?;
    let cols = f.rank().min(k_eff);

    let mut h = DMatrix::zeros(x.cols(), cols);
    for (row, &i) in basis.kept.iter().enumerate() {
        for j in 0..cols {
            h[(i, j)] = f.u[(row, j)];
        }
    }
    let mut g = f.v.columns(0, cols).transpose();
    for (j, mut row) in g.row_iter_mut().enumerate() {
        row *= f.s[j];
    }
    let encoder = SparseEncoder::new(
        h,
        vec![sel.len(); cols],
        vec![basis.kept.clone(); cols],
        EncoderMode::Batch,
    )?;
    Ok(ColumnEncoding {
        encoder,
        decoder: Decoder::new(g)?,
        kept: basis.kept,
        dropped: basis.dropped,
    })
}

/// Orthonormal basis of `range(XH)`.
fn encoded_basis(x: &DMatrix<f64>, h: &SparseEncoder) -> Result<DMatrix<f64>> {
    linalg::range_basis(&(x * h.loadings()))
}

/// `ℓ(H, X) = ‖X − XH(XH)†X‖_F²`, the reconstruction error under the best
/// linear decoder. Equals `‖X‖_F²` when `XH = 0`.
pub fn information_loss(x: &DataMatrix, h: &SparseEncoder) -> Result<f64> {
    if h.k() == 0 {
        return Err(Error::InvalidArgument("encoder has no columns".into()));
    }
    check_dims(x, h)?;
    let u = encoded_basis(x, h)?;
    Ok(frobenius_sq(&linalg::project_out(&u, x)))
}

/// `G = (XH)†X`.
pub fn optimal_decoder(x: &DataMatrix, h: &SparseEncoder) -> Result<Decoder> {
    check_dims(x, h)?;
    let xh = x.as_matrix() * h.loadings();
    Decoder::new(linalg::pseudo_inverse(&xh)? * x.as_matrix())
}

/// Encoded features `Z = XH` (`n x k`).
pub fn encode(x: &DataMatrix, h: &SparseEncoder) -> Result<DMatrix<f64>> {
    check_dims(x, h)?;
    Ok(x.as_matrix() * h.loadings())
}

/// `X̂ = XH(XH)†X`.
pub fn reconstruct(x: &DataMatrix, h: &SparseEncoder) -> Result<DMatrix<f64>> {
    check_dims(x, h)?;
    let u = encoded_basis(x, h)?;
    Ok(&u * (u.transpose() * x.as_matrix()))
}

fn check_dims(x: &DataMatrix, h: &SparseEncoder) -> Result<()> {
    if x.cols() != h.dim() {
        return Err(Error::InvalidArgument(format!(
            "encoder has {} rows, data has {} columns",
            h.dim(),
            x.cols()
        )));
    }
    Ok(())
}

/// Encoder, decoder and report produced by one run.
#[derive(Debug, Clone)]
pub struct EncoderRun {
    pub encoder: SparseEncoder,
    pub decoder: Decoder,
    pub report: LossReport,
}

fn effective_k(x_svd: &SvdFactors, k: usize, flags: &mut Vec<String>) -> Result<usize> {
    let rank = x_svd.rank();
    if rank == 0 {
        return Err(Error::InvalidInput("data matrix is zero".into()));
    }
    if rank < k {
        flags.push(format!("rank(X) = {rank} < k = {k}; returning {rank} columns"));
    }
    Ok(k.min(rank))
}

/// Batch sparse encoder: select `r` columns with `strategy`, then build the
/// encoder from them. Every column of the result is supported on the same
/// at most `r` rows.
pub fn batch_encoder(
    x: &DataMatrix,
    k: usize,
    r: usize,
    strategy: &SelectionStrategy,
) -> Result<EncoderRun> {
    let start = Instant::now();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if r < k {
        return Err(Error::InvalidArgument(format!("sparsity r = {r} is below k = {k}")));
    }
    if r > x.cols() {
        return Err(Error::InvalidArgument(format!(
            "sparsity r = {r} exceeds d = {}",
            x.cols()
        )));
    }
    let x_svd = linalg::svd(x)?;
    let mut flags = Vec::new();
    let k_eff = effective_k(&x_svd, k, &mut flags)?;

    let sel = cssp::select_columns(x, k_eff, r, strategy)?;
    let select_ms = start.elapsed().as_secs_f64() * 1e3;
    let enc = encoder_from_columns(x, &sel, k_eff)?;
    if !enc.dropped.is_empty() {
        flags.push(format!(
            "dropped {} dependent columns; reduced cardinality {}",
            enc.dropped.len(),
            enc.kept.len()
        ));
    }
    if enc.encoder.k() < k_eff {
        flags.push(format!("returned {} of {k_eff} columns", enc.encoder.k()));
    }
    let ctx = ReportContext {
        algorithm: Algorithm::Batch,
        strategy: Some(strategy.kind),
        seed: strategy.seed,
        trials: strategy.trials.max(1),
        k_requested: k,
        schedule: vec![r],
        budgets: vec![r; enc.encoder.k()],
        reduced_cardinality: vec![enc.kept.len()],
        flags,
    };
    let mut report = LossReport::assemble(x, &x_svd, &enc.encoder, ctx)?;
    report.bound_factor = metrics::batch_bound_factor(k_eff, r);
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    report.timings = Some(Timings {
        select_ms,
        total_ms,
    });
    Ok(EncoderRun {
        encoder: enc.encoder,
        decoder: enc.decoder,
        report,
    })
}

/// Per-column sparsities `r_j = 5 + ⌈5j/eps⌉`, `j = 1..=k`.
pub fn adaptive_schedule(k: usize, eps: f64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must lie in (0, 1]")));
    }
    Ok((1..=k)
        .map(|j| {
            let raw = 5.0 * j as f64 / eps;
            // absorb representation error such as 25.000000000000004
            5 + (raw - 1e-9 * raw.max(1.0)).ceil() as usize
        })
        .collect())
}

/// Iterative sparse encoder.
///
/// Step `i` runs the batch encoder with `k = 1` and sparsity `schedule[i]`
/// (capped at `d`) on the residual `Δ = X − XH(XH)†X` of the columns built so
/// far, then appends the new column. Step `i` uses seed
/// `step_seed(strategy.seed, i)`. Stops early, with a flag, once the residual
/// vanishes.
pub fn iterative_encoder(
    x: &DataMatrix,
    k: usize,
    schedule: &[usize],
    strategy: &SelectionStrategy,
) -> Result<EncoderRun> {
    let start = Instant::now();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if schedule.len() < k {
        return Err(Error::InvalidArgument(format!(
            "schedule has {} entries, need k = {k}",
            schedule.len()
        )));
    }
    if let Some(&bad) = schedule.iter().take(k).find(|&&r| r < 2) {
        return Err(Error::InvalidArgument(format!(
            "every sparsity in the schedule must exceed 1, got {bad}"
        )));
    }
    let d = x.cols();
    let x_svd = linalg::svd(x)?;
    let mut flags = Vec::new();
    let k_eff = effective_k(&x_svd, k, &mut flags)?;
    let total = frobenius_sq(x);

    let mut h = DMatrix::<f64>::zeros(d, 0);
    let mut budgets = Vec::new();
    let mut supports = Vec::new();
    let mut reduced = Vec::new();
    let mut prefix_losses = Vec::new();
    let mut residual = x.clone();
    let mut select_ms = 0.0;

    for (i, &r_req) in schedule.iter().take(k_eff).enumerate() {
        if frobenius_sq(&residual) <= 1e-20 * total {
            flags.push(format!("residual vanished after {i} columns; stopped early"));
            break;
        }
        let r = r_req.min(d);
        if r < r_req {
            flags.push(format!("step {}: sparsity {r_req} capped at d = {d}", i + 1));
        }
        let step_strategy = strategy.with_seed(step_seed(strategy.seed, i));
        let t0 = Instant::now();
        let sel = cssp::select_columns(&residual, 1, r, &step_strategy)?;
        select_ms += t0.elapsed().as_secs_f64() * 1e3;
        let enc = match encoder_from_columns(&residual, &sel, 1) {
            Ok(e) if e.encoder.k() == 1 => e,
            Ok(_) | Err(Error::DegenerateSelection { .. }) => {
                flags.push(format!("step {}: selected columns carry no residual; stopped early", i + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        let col = enc.encoder.loadings().column(0).into_owned();
        let cols = h.ncols();
        h = h.insert_column(cols, 0.0);
        h.set_column(cols, &col);
        budgets.push(r);
        supports.push(enc.kept.clone());
        reduced.push(enc.kept.len());

        let partial = SparseEncoder::new(
            h.clone(),
            budgets.clone(),
            supports.clone(),
            EncoderMode::Iterative,
        )?;
        let next = linalg::project_out(&encoded_basis(x, &partial)?, x);
        prefix_losses.push(frobenius_sq(&next));
        residual = DataMatrix::new(next)?;
    }
    if h.ncols() == 0 {
        return Err(Error::Numerical("iterative encoder produced no columns".into()));
    }
    let encoder = SparseEncoder::new(h, budgets.clone(), supports, EncoderMode::Iterative)?;
    let decoder = optimal_decoder(x, &encoder)?;
    let ctx = ReportContext {
        algorithm: Algorithm::Iterative,
        strategy: Some(strategy.kind),
        seed: strategy.seed,
        trials: strategy.trials.max(1),
        k_requested: k,
        schedule: schedule[..k].to_vec(),
        budgets,
        reduced_cardinality: reduced,
        flags,
    };
    let mut report = LossReport::assemble(x, &x_svd, &encoder, ctx)?;
    report.step_delta = report.budgets.iter().map(|&r| metrics::single_column_delta(r)).collect();
    report.prefix_pca_losses = (1..=prefix_losses.len())
        .map(|l| x_svd.tail_energy(l))
        .collect();
    report.prefix_losses = prefix_losses;
    report.timings = Some(Timings {
        select_ms,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
    });
    Ok(EncoderRun {
        encoder,
        decoder,
        report,
    })
}

/// Gram–Schmidt on the columns of `H` (twice, for stability).
///
/// The span is unchanged and so is the information loss for any `X`;
/// nonzero rows can only shrink. Dependent columns are dropped and counted.
/// Column `j` of the result is supported on the union of the supports of
/// columns `0..=j` of the input.
pub fn orthonormalize(h: &SparseEncoder) -> Result<(SparseEncoder, usize)> {
    let scale = h
        .loadings()
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let tol = linalg::RANK_TOL * scale;
    let mut q = DMatrix::<f64>::zeros(h.dim(), 0);
    let mut supports = Vec::new();
    let mut union: Vec<usize> = Vec::new();
    let mut dropped = 0;
    for j in 0..h.k() {
        union.extend_from_slice(&h.supports()[j]);
        union.sort_unstable();
        union.dedup();
        let mut v = h.loadings().column(j).into_owned();
        for _ in 0..2 {
            if q.ncols() > 0 {
                let coef = q.transpose() * &v;
                v -= &q * coef;
            }
        }
        let norm = v.norm();
        if norm <= tol || norm == 0.0 {
            dropped += 1;
            continue;
        }
        v /= norm;
        // exact zeros outside the accumulated support
        for i in 0..v.len() {
            if union.binary_search(&i).is_err() {
                v[i] = 0.0;
            }
        }
        let cols = q.ncols();
        q = q.insert_column(cols, 0.0);
        q.set_column(cols, &v);
        supports.push(union.clone());
    }
    if q.ncols() == 0 {
        return Err(Error::InvalidInput("encoder has no nonzero columns".into()));
    }
    let budgets = supports.iter().map(Vec::len).collect();
    let out = SparseEncoder::new(q, budgets, supports, h.mode())?;
    Ok((out, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};
    use nalgebra::DVector;

    fn random(n: usize, d: usize, seed: u64) -> DataMatrix {
        DataMatrix::new(gaussian_matrix(n, d, &mut seeded(seed))).unwrap()
    }

    fn sel(ix: &[usize], d: usize) -> ColumnSelection {
        ColumnSelection::new(ix.to_vec(), d).unwrap()
    }

    #[test]
    fn identity_coordinates() {
        let x = DataMatrix::identity(4);
        let enc = encoder_from_columns(&x, &sel(&[0, 1], 4), 2).unwrap();
        assert_eq!(enc.encoder.supports()[0], vec![0, 1]);
        assert_eq!(enc.encoder.supports()[1], vec![0, 1]);
        let loss = information_loss(&x, &enc.encoder).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rank_matrix_zero_loss() {
        let a = random(8, 2, 1);
        let b = random(2, 6, 2);
        let x = DataMatrix::new(a.as_matrix() * b.as_matrix()).unwrap();
        let enc = encoder_from_columns(&x, &sel(&[1, 4], 6), 2).unwrap();
        assert!(information_loss(&x, &enc.encoder).unwrap() < 1e-20 * frobenius_sq(&x));
    }

    #[test]
    fn decoder_reproduces_span_approximation() {
        let x = random(6, 5, 3);
        let s = sel(&[0, 2, 3], 5);
        let enc = encoder_from_columns(&x, &s, 2).unwrap();
        let xck = cssp::best_rank_k_in_span(&x, &s, 2).unwrap();
        let xhg = x.as_matrix() * enc.encoder.loadings() * enc.decoder.matrix();
        assert!((&xhg - &xck).norm() <= 1e-10 * x.norm());
        let target = frobenius_sq(&(x.as_matrix() - xck));
        let loss = information_loss(&x, &enc.encoder).unwrap();
        assert!((loss - target).abs() <= 1e-8 * target);
        // batch columns are orthonormal
        let hth = enc.encoder.loadings().transpose() * enc.encoder.loadings();
        assert!((hth - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn dependent_columns_reduce_output() {
        let mut m = random(5, 4, 9).into_inner();
        let c0 = m.column(0).into_owned();
        m.set_column(2, &(c0 * -2.0));
        let x = DataMatrix::new(m).unwrap();
        let enc = encoder_from_columns(&x, &sel(&[0, 2], 4), 2).unwrap();
        assert_eq!(enc.encoder.k(), 1);
        assert_eq!(enc.dropped, vec![2]);
    }

    #[test]
    fn pca_loadings_give_pca_loss() {
        let x = random(7, 5, 4);
        let f = linalg::svd(&x).unwrap();
        let h = SparseEncoder::from_dense(f.right_vectors(2), EncoderMode::External).unwrap();
        let loss = information_loss(&x, &h).unwrap();
        assert!((loss - f.tail_energy(2)).abs() < 1e-10);
        let g = optimal_decoder(&x, &h).unwrap();
        let xhg = x.as_matrix() * h.loadings() * g.matrix();
        let xk = linalg::truncate_rank(&f, 2).unwrap();
        assert!((xhg - &xk).norm() < 1e-10);
        assert!((reconstruct(&x, &h).unwrap() - xk).norm() < 1e-10);
    }

    #[test]
    fn zero_encoding_loses_everything() {
        let x = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let h = SparseEncoder::from_dense(
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            EncoderMode::External,
        )
        .unwrap();
        assert!((information_loss(&x, &h).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn single_coordinate_regression() {
        let x = DataMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0]))).unwrap();
        let h = SparseEncoder::from_dense(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            EncoderMode::External,
        )
        .unwrap();
        let g = optimal_decoder(&x, &h).unwrap();
        let xhg = x.as_matrix() * h.loadings() * g.matrix();
        let expected = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.0]));
        assert!((xhg - expected).amax() < 1e-15);
    }

    #[test]
    fn decoder_satisfies_normal_equations() {
        let x = random(9, 6, 12);
        let h = SparseEncoder::from_dense(random(6, 2, 13).into_inner(), EncoderMode::External).unwrap();
        let g = optimal_decoder(&x, &h).unwrap();
        let xh = x.as_matrix() * h.loadings();
        let resid = x.as_matrix() - &xh * g.matrix();
        assert!((xh.transpose() * &resid).amax() < 1e-8);
        let loss = information_loss(&x, &h).unwrap();
        assert!((frobenius_sq(&resid) - loss).abs() <= 1e-10 * loss.max(1.0));
    }

    #[test]
    fn batch_identity_one_sparse() {
        let x = DataMatrix::identity(5);
        let run = batch_encoder(&x, 1, 1, &SelectionStrategy::greedy()).unwrap();
        assert!((run.report.info_loss - 4.0).abs() < 1e-12);
        assert_eq!(run.encoder.column_nnz(0), 1);
    }

    #[test]
    fn batch_rank_two_matrix() {
        let a = random(10, 2, 5);
        let b = random(2, 7, 6);
        let x = DataMatrix::new(a.as_matrix() * b.as_matrix()).unwrap();
        for strategy in [SelectionStrategy::greedy(), SelectionStrategy::randomized(4)] {
            let run = batch_encoder(&x, 2, 3, &strategy).unwrap();
            assert!(run.report.info_loss < 1e-18 * frobenius_sq(&x));
        }
    }

    #[test]
    fn batch_flags_rank_below_k() {
        let x = DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let run = batch_encoder(&x, 2, 3, &SelectionStrategy::greedy()).unwrap();
        assert_eq!(run.encoder.k(), 1);
        assert!(!run.report.flags.is_empty());
    }

    #[test]
    fn batch_argument_errors() {
        let x = random(4, 4, 0);
        let s = SelectionStrategy::greedy();
        assert!(matches!(batch_encoder(&x, 0, 2, &s), Err(Error::InvalidArgument(_))));
        assert!(matches!(batch_encoder(&x, 3, 2, &s), Err(Error::InvalidArgument(_))));
        assert!(matches!(batch_encoder(&x, 1, 5, &s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn schedule_arithmetic() {
        assert_eq!(adaptive_schedule(1, 1.0).unwrap(), vec![10]);
        assert_eq!(adaptive_schedule(3, 0.5).unwrap(), vec![15, 25, 35]);
        assert_eq!(adaptive_schedule(4, 0.5).unwrap(), vec![15, 25, 35, 45]);
        assert_eq!(adaptive_schedule(2, 0.3).unwrap(), vec![5 + 17, 5 + 34]);
        for k in 1..8 {
            for eps in [0.1, 0.25, 0.3, 0.7, 1.0] {
                let s = adaptive_schedule(k, eps).unwrap();
                assert!(s.windows(2).all(|w| w[0] <= w[1]));
                let last = 5.0 + 5.0 * k as f64 / eps;
                assert!((s[k - 1] as f64 - last).abs() < 1.0 + 1e-9);
            }
        }
        assert!(adaptive_schedule(2, 0.0).is_err());
        assert!(adaptive_schedule(2, -1.0).is_err());
        assert!(adaptive_schedule(0, 0.5).is_err());
    }

    #[test]
    fn iterative_k1_matches_batch() {
        let x = random(12, 9, 21);
        for strategy in [SelectionStrategy::greedy(), SelectionStrategy::randomized(8)] {
            let it = iterative_encoder(&x, 1, &[4], &strategy).unwrap();
            let b = batch_encoder(&x, 1, 4, &strategy).unwrap();
            assert_eq!(it.encoder.supports(), b.encoder.supports());
            assert!((it.encoder.loadings() - b.encoder.loadings()).amax() < 1e-12);
        }
    }

    #[test]
    fn iterative_identity() {
        let x = DataMatrix::identity(6);
        let run = iterative_encoder(&x, 3, &[2, 2, 2], &SelectionStrategy::greedy()).unwrap();
        assert!((run.report.info_loss - 3.0).abs() < 1e-10);
        assert_eq!(run.report.prefix_losses.len(), 3);
    }

    #[test]
    fn iterative_prefix_losses_do_not_increase() {
        let x = random(15, 10, 31);
        let run = iterative_encoder(&x, 4, &[3, 3, 4, 4], &SelectionStrategy::randomized(2)).unwrap();
        for w in run.report.prefix_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-8);
        }
        assert!(run.encoder.contract_violations().is_empty());
        let final_loss = information_loss(&x, &run.encoder).unwrap();
        assert!((final_loss - run.report.prefix_losses[3]).abs() < 1e-8);
    }

    #[test]
    fn iterative_stops_when_residual_vanishes() {
        let a = random(8, 1, 1);
        let b = random(1, 5, 2);
        let x = DataMatrix::new(a.as_matrix() * b.as_matrix()).unwrap();
        let run = iterative_encoder(&x, 1, &[2], &SelectionStrategy::greedy()).unwrap();
        assert!(run.report.info_loss < 1e-20);
        // rank 1 < k = 3: one column, flagged
        let run = iterative_encoder(&x, 3, &[2, 2, 2], &SelectionStrategy::greedy()).unwrap();
        assert_eq!(run.encoder.k(), 1);
        assert!(!run.report.flags.is_empty());
    }

    #[test]
    fn orthonormalize_preserves_span_and_support() {
        let h = SparseEncoder::from_dense(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]),
            EncoderMode::Iterative,
        )
        .unwrap();
        let (o, dropped) = orthonormalize(&h).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(o.nonzero_rows(), vec![0, 1]);
        let oto = o.loadings().transpose() * o.loadings();
        assert!((oto - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn orthonormalize_keeps_orthonormal_input() {
        let x = random(10, 8, 3);
        let run = batch_encoder(&x, 3, 5, &SelectionStrategy::greedy()).unwrap();
        let (o, dropped) = orthonormalize(&run.encoder).unwrap();
        assert_eq!(dropped, 0);
        assert!((o.loadings() - run.encoder.loadings()).amax() < 1e-10);
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let h = SparseEncoder::from_dense(
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]),
            EncoderMode::Iterative,
        )
        .unwrap();
        let (o, dropped) = orthonormalize(&h).unwrap();
        assert_eq!((o.k(), dropped), (1, 1));
    }

    #[test]
    fn contract_rejects_out_of_support_entries() {
        let bad = SparseEncoder::new(
            DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]),
            vec![1],
            vec![vec![0]],
            EncoderMode::Batch,
        );
        assert!(bad.is_err());
        let bad = SparseEncoder::new(
            DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            vec![1, 1],
            vec![vec![0], vec![1]],
            EncoderMode::Batch,
        );
        assert!(bad.is_err(), "batch supports must agree");
    }
}
