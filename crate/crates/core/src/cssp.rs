//! Column subset selection.
//!
//! Picks `r` columns `C = XΩ` of a data matrix and computes `X_{C,k}`, the
//! best rank-k approximation of `X` whose columns lie in `span(C)`. Two
//! selection strategies are provided: a deterministic Frobenius-greedy scan
//! and the randomized three-stage pipeline (approximate top right singular
//! space, leverage-score sampling, one round of adaptive sampling), which can
//! be boosted by keeping the best of several seeded trials.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_sq, qr_thin, DataMatrix, ThinQr, RANK_TOL};
use crate::rng::{self, derive_seed, seeded, step_seed};

/// Strictly increasing, 0-based column indices into a matrix with
/// `source_cols` columns. Stands for the sampling matrix
/// `Ω = [e_{i_1}, …, e_{i_r}]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnSelection {
    indices: Vec<usize>,
    source_cols: usize,
}

impl ColumnSelection {
    /// Sorts `indices`; rejects duplicates, out-of-range and empty input.
    pub fn new(mut indices: Vec<usize>, source_cols: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("column selection is empty".into()));
        }
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "duplicate column index {}",
                w[0]
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= source_cols {
                return Err(Error::InvalidArgument(format!(
                    "column index {last} out of range for {source_cols} columns"
                )));
            }
        }
        Ok(ColumnSelection {
            indices,
            source_cols,
        })
    }

    /// Every column of a `d`-column matrix.
    pub fn all(d: usize) -> Result<Self> {
        Self::new((0..d).collect(), d)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_cols(&self) -> usize {
        self.source_cols
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// `C = XΩ`.
    pub fn columns_of(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_columns(self.indices.iter())
    }

    fn check_against(&self, x: &DMatrix<f64>) -> Result<()> {
        if self.source_cols != x.ncols() {
            return Err(Error::InvalidArgument(format!(
                "selection built for {} columns, matrix has {}",
                self.source_cols,
                x.ncols()
            )));
        }
        Ok(())
    }
}

/// The explicit `d x r` sampling matrix: column `t` is `e_{i_t}`.
pub fn materialize_sampling(sel: &ColumnSelection) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(sel.source_cols, sel.len());
    for (t, &i) in sel.indices.iter().enumerate() {
        omega[(i, t)] = 1.0;
    }
    omega
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Greedy,
    Randomized,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Greedy => "greedy",
            StrategyKind::Randomized => "randomized",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(StrategyKind::Greedy),
            "randomized" | "randomized-leverage-adaptive" => Ok(StrategyKind::Randomized),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Gaussian sketch settings for [`approx_top_right_singular_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    /// Sketch width is `k + oversampling` (capped at `d`).
    pub oversampling: usize,
    /// Minimum number of power iterations.
    pub power_iters: usize,
}

impl Default for SketchParams {
    fn default() -> Self {
        SketchParams {
            oversampling: 10,
            power_iters: 4,
        }
    }
}

/// How columns are chosen. `seed` fully determines randomized output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    /// Best-of trials for the randomized pipeline; ignored by greedy.
    pub trials: usize,
    pub seed: u64,
    /// Target accuracy of the approximate singular subspace.
    pub sketch_eps: f64,
    pub sketch: SketchParams,
}

impl SelectionStrategy {
    pub fn greedy() -> Self {
        SelectionStrategy {
            kind: StrategyKind::Greedy,
            trials: 1,
            seed: 0,
            sketch_eps: 0.5,
            sketch: SketchParams::default(),
        }
    }

    pub fn randomized(seed: u64) -> Self {
        SelectionStrategy {
            kind: StrategyKind::Randomized,
            seed,
            ..Self::greedy()
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Linearly independent part of a selection together with its QR factors.
///
/// Columns are visited in index order; whenever the thin QR of the current
/// columns reports a diagonal of `R` below the rank tolerance, that column is
/// dropped and the factorization is retried.
#[derive(Debug, Clone)]
pub struct SpanBasis {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// QR of `X[:, kept]`; `None` when every selected column is zero.
    pub qr: Option<ThinQr>,
}

impl SpanBasis {
    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    pub fn q(&self, n: usize) -> DMatrix<f64> {
        self.qr
            .as_ref()
            .map_or_else(|| DMatrix::zeros(n, 0), |f| f.q.clone())
    }
}

pub fn reduce_selection(x: &DMatrix<f64>, sel: &ColumnSelection) -> Result<SpanBasis> {
    sel.check_against(x)?;
    let mut kept: Vec<usize> = sel.indices().to_vec();
    let mut dropped = Vec::new();
    loop {
        if kept.is_empty() {
            return Ok(SpanBasis {
                kept,
                dropped,
                qr: None,
            });
        }
        let c = x.select_columns(kept.iter());
        match qr_thin(&c) {
            Ok(f) => {
                dropped.sort_unstable();
                return Ok(SpanBasis {
                    kept,
                    dropped,
                    qr: Some(f),
                });
            }
            Err(Error::RankDeficient { index, .. }) => {
                dropped.push(kept.remove(index));
            }
            Err(e) => return Err(e),
        }
    }
}

/// `‖X − X_{C,k'}‖_F²` with `k' = min(k, rank C)`, split as
/// `‖X − QQᵀX‖_F² + ‖QᵀX − (QᵀX)_{k'}‖_F²` to avoid cancellation.
pub fn span_loss(x: &DMatrix<f64>, sel: &ColumnSelection, k: usize) -> Result<f64> {
    let basis = reduce_selection(x, sel)?;
    let q = basis.q(x.nrows());
    let m = q.transpose() * x;
    let outside = frobenius_sq(&(x - &q * &m));
    let inside = if basis.rank() == 0 {
        0.0
    } else {
        linalg::svd(&m)?.tail_energy(k.min(basis.rank()))
    };
    Ok(outside + inside)
}

/// `X_{C,k} = Q (QᵀX)_k`, the best rank-k approximation of `X` with columns
/// in `span(C)`. Dependent columns of `C` are dropped first.
pub fn best_rank_k_in_span(
    x: &DataMatrix,
    sel: &ColumnSelection,
    k: usize,
) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > sel.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds selection size r = {}",
            sel.len()
        )));
    }
    let basis = reduce_selection(x, sel)?;
    if basis.rank() < k {
        return Err(Error::DegenerateSelection {
            independent: basis.rank(),
            required: k,
        });
    }
    let q = basis.q(x.rows());
    let m = q.transpose() * x.as_matrix();
    let mk = linalg::truncate_rank(&linalg::svd(&m)?, k)?;
    Ok(q * mk)
}

fn check_k_r(k: usize, r: usize, d: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if r > d {
        return Err(Error::InvalidArgument(format!(
            "r = {r} exceeds the number of columns d = {d}"
        )));
    }
    if k > r {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds r = {r}")));
    }
    Ok(())
}

/// Deterministic Frobenius-greedy selection.
///
/// Adds one column per step, choosing the index `j` that minimizes
/// `‖X − X_{C∪{j}, min(k, |C|+1)}‖_F²`. Scores within `1e-12·‖X‖_F²` of each
/// other are ties and go to the smaller index.
pub fn select_columns_greedy(x: &DataMatrix, k: usize, r: usize) -> Result<ColumnSelection> {
    let (n, d) = x.shape();
    check_k_r(k, r, d)?;
    let xm = x.as_matrix();
    let total = frobenius_sq(xm);
    let tie = 1e-12 * total;
    let col_tol = RANK_TOL * linalg::spectral_norm(xm)?;

    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    let mut q = DMatrix::<f64>::zeros(n, 0);
    // m = QᵀX, resid = X − QQᵀX
    let mut m = DMatrix::<f64>::zeros(0, d);
    let mut resid = xm.clone();

    for step in 0..r {
        let kk = k.min(step + 1);
        let resid_sq = frobenius_sq(&resid);
        let scores: Vec<(usize, f64, Option<nalgebra::DVector<f64>>)> = (0..d)
            .into_par_iter()
            .filter(|j| !chosen.contains(j))
            .map(|j| {
                let dir = orthogonal_direction(&q, &xm.column(j).into_owned(), col_tol);
                let score = match &dir {
                    // dependent column: span unchanged
                    None => resid_sq + head_tail(&m, kk),
                    Some(u) => {
                        let row = u.transpose() * &resid;
                        let mut grown = m.clone().insert_row(m.nrows(), 0.0);
                        grown.set_row(m.nrows(), &row);
                        (resid_sq - row.norm_squared()).max(0.0) + head_tail(&grown, kk)
                    }
                };
                (j, score, dir)
            })
            .collect();

        let mut best = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            if s.1 < scores[best].1 - tie {
                best = i;
            }
        }
        let (j, _, dir) = scores.into_iter().nth(best).expect("candidate available");
        chosen.push(j);
        if let Some(u) = dir {
            let row = u.transpose() * &resid;
            resid -= &u * &row;
            let cols = q.ncols();
            q = q.insert_column(cols, 0.0);
            q.set_column(cols, &u);
            let rows = m.nrows();
            m = m.insert_row(rows, 0.0);
            m.set_row(rows, &row);
        }
    }
    ColumnSelection::new(chosen, d)
}

/// `‖M − M_k‖_F²` from singular values only.
fn head_tail(m: &DMatrix<f64>, k: usize) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.iter().skip(k).map(|s| s * s).sum()
}

/// Unit vector along the part of `c` orthogonal to the orthonormal `q`, or
/// `None` when that part is below `tol`. Orthogonalizes twice.
fn orthogonal_direction(
    q: &DMatrix<f64>,
    c: &nalgebra::DVector<f64>,
    tol: f64,
) -> Option<nalgebra::DVector<f64>> {
    let mut v = c.clone();
    if q.ncols() > 0 {
        for _ in 0..2 {
            let coef = q.transpose() * &v;
            v -= q * coef;
        }
    }
    let norm = v.norm();
    if norm <= tol || norm == 0.0 {
        None
    } else {
        Some(v / norm)
    }
}

/// Orthonormal basis of `range(Y)` via Householder QR; always has
/// `min(rows, cols)` orthonormal columns, even when `Y` is rank deficient.
fn orth(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Approximate top-k right singular vectors `V̂_k` (`d x k`, orthonormal)
/// from a Gaussian sketch with power iterations.
///
/// The number of power iterations is `max(params.power_iters,
/// ⌈ln(d) / (4·eps)⌉)`, capped at 200, so small `eps` buys accuracy.
pub fn approx_top_right_singular(
    x: &DataMatrix,
    k: usize,
    eps: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    approx_top_right_singular_with(x, k, eps, SketchParams::default(), seed)
}

pub fn approx_top_right_singular_with(
    x: &DataMatrix,
    k: usize,
    eps: f64,
    params: SketchParams,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let d = x.cols();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in [1, {d}]"
        )));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must lie in (0, 1]")));
    }
    let xm = x.as_matrix();
    let width = (k + params.oversampling).min(d);
    let extra = ((d as f64).ln().max(0.0) / (4.0 * eps)).ceil() as usize;
    let iters = params.power_iters.max(extra).min(200);

    let mut rng = seeded(seed);
    let omega = rng::gaussian_matrix(d, width, &mut rng);
    let mut q = orth(xm * omega);
    for _ in 0..iters {
        let z = orth(xm.transpose() * &q);
        q = orth(xm * z);
    }
    let b = q.transpose() * xm;
    let f = linalg::svd(&b)?;
    Ok(f.right_vectors(k))
}

/// Row leverage scores `‖V̂_k[j, :]‖²`.
fn leverage_scores(v: &DMatrix<f64>) -> Vec<f64> {
    v.row_iter().map(|row| row.norm_squared()).collect()
}

/// Draws `count` distinct indices with probabilities proportional to
/// `scores`. A draw that repeats an index is replaced by the unselected
/// index with the largest score (smallest index on ties).
fn sample_distinct_by_scores(scores: &[f64], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let mut taken = vec![false; scores.len()];
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count.min(scores.len()) {
        let draw = rng::weighted_index(scores, &mut rng);
        let idx = match draw {
            Some(i) if !taken[i] => i,
            _ => {
                let mut best: Option<usize> = None;
                for (j, &s) in scores.iter().enumerate() {
                    if taken[j] {
                        continue;
                    }
                    if best.is_none_or(|b| s > scores[b]) {
                        best = Some(j);
                    }
                }
                match best {
                    Some(b) => b,
                    None => break,
                }
            }
        };
        taken[idx] = true;
        picked.push(idx);
    }
    picked
}

/// One round of adaptive sampling.
///
/// With `E = X − CC†X`, draws up to `s` new column indices without
/// replacement with probability proportional to `‖E_j‖²`. Columns whose
/// squared residual is at most `1e-20·‖X‖_F²` carry no weight; if none is
/// left, the selection comes back unchanged.
pub fn adaptive_sample(
    x: &DataMatrix,
    sel: &ColumnSelection,
    s: usize,
    seed: u64,
) -> Result<ColumnSelection> {
    if s == 0 {
        return Err(Error::InvalidArgument("adaptive sample size must be >= 1".into()));
    }
    let xm = x.as_matrix();
    let basis = reduce_selection(xm, sel)?;
    let resid = linalg::project_out(&basis.q(x.rows()), xm);
    let floor = 1e-20 * frobenius_sq(xm);
    let mut weights: Vec<f64> = resid
        .column_iter()
        .enumerate()
        .map(|(j, col)| {
            let w = col.norm_squared();
            if sel.contains(j) || w <= floor {
                0.0
            } else {
                w
            }
        })
        .collect();

    let mut rng = seeded(seed);
    let mut indices = sel.indices().to_vec();
    for _ in 0..s {
        match rng::weighted_index(&weights, &mut rng) {
            Some(j) => {
                weights[j] = 0.0;
                indices.push(j);
            }
            None => break,
        }
    }
    ColumnSelection::new(indices, sel.source_cols())
}

/// Randomized selection: sketch `V̂_k`, draw `min(5k, r)` columns by
/// leverage score, then adaptively sample the remaining `r − 5k`.
pub fn select_columns_randomized(
    x: &DataMatrix,
    k: usize,
    r: usize,
    seed: u64,
) -> Result<ColumnSelection> {
    select_columns_randomized_with(x, k, r, 0.5, SketchParams::default(), seed)
}

pub fn select_columns_randomized_with(
    x: &DataMatrix,
    k: usize,
    r: usize,
    sketch_eps: f64,
    params: SketchParams,
    seed: u64,
) -> Result<ColumnSelection> {
    let d = x.cols();
    check_k_r(k, r, d)?;
    let v = approx_top_right_singular_with(x, k, sketch_eps, params, derive_seed(seed, 1))?;
    let scores = leverage_scores(&v);
    let initial = (5 * k).min(r);
    let picked = sample_distinct_by_scores(&scores, initial, derive_seed(seed, 2));
    let sel = ColumnSelection::new(picked, d)?;
    let remaining = r - sel.len();
    if remaining == 0 {
        return Ok(sel);
    }
    adaptive_sample(x, &sel, remaining, derive_seed(seed, 3))
}

/// Best of `trials` randomized selections, judged by `‖X − X_{C,k}‖_F²`.
/// Trial `t` uses seed `step_seed(seed, t)`, so trial 0 reproduces
/// [`select_columns_randomized`] with the same seed. Ties keep the earlier
/// trial.
pub fn boost_best_of(
    x: &DataMatrix,
    k: usize,
    r: usize,
    trials: usize,
    seed: u64,
) -> Result<ColumnSelection> {
    boost_best_of_with(x, k, r, trials, 0.5, SketchParams::default(), seed)
}

pub fn boost_best_of_with(
    x: &DataMatrix,
    k: usize,
    r: usize,
    trials: usize,
    sketch_eps: f64,
    params: SketchParams,
    seed: u64,
) -> Result<ColumnSelection> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let candidates: Vec<Result<(ColumnSelection, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let sel = select_columns_randomized_with(x, k, r, sketch_eps, params, step_seed(seed, t))?;
            let loss = span_loss(x, &sel, k)?;
            Ok((sel, loss))
        })
        .collect();
    let mut best: Option<(ColumnSelection, f64)> = None;
    for c in candidates {
        let (sel, loss) = c?;
        if best.as_ref().is_none_or(|(_, l)| loss < *l) {
            best = Some((sel, loss));
        }
    }
    Ok(best.expect("at least one trial").0)
}

/// Runs the selection described by `strategy`.
pub fn select_columns(
    x: &DataMatrix,
    k: usize,
    r: usize,
    strategy: &SelectionStrategy,
) -> Result<ColumnSelection> {
    match strategy.kind {
        StrategyKind::Greedy => select_columns_greedy(x, k, r),
        StrategyKind::Randomized => boost_best_of_with(
            x,
            k,
            r,
            strategy.trials.max(1),
            strategy.sketch_eps,
            strategy.sketch,
            strategy.seed,
        ),
    }
}
