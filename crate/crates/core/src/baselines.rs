//! Sparse PCA reference methods: the truncated power method and deflation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::encoder::{EncoderMode, SparseEncoder};
use crate::error::{Error, Result};
use crate::linalg::{self, DataMatrix};
use crate::rng::{gaussian_matrix, seeded, step_seed};

/// A symmetric matrix, symmetrized exactly on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts `a` when `|a_ij − a_ji| ≤ 1e-10·max|a|`.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "expected a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        linalg::ensure_finite(&a)?;
        let scale = a.amax().max(1.0);
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidInput(format!("matrix is not symmetric (max gap {asym:e})")));
        }
        Ok(SymmetricMatrix((&a + a.transpose()) * 0.5))
    }

    /// `XᵀX`.
    pub fn gram(x: &DataMatrix) -> Self {
        let g = x.transpose() * x.as_matrix();
        SymmetricMatrix((&g + g.transpose()) * 0.5)
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Symmetric square root `A^{1/2}` of a PSD matrix. Eigenvalues down to
/// `−1e-8·max|λ|` are treated as zero; more negative ones are an error.
pub fn psd_root(a: &SymmetricMatrix) -> Result<DataMatrix> {
    let eig = a.as_matrix().clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let lowest = eig.eigenvalues.min();
    if lowest < -1e-8 * scale {
        return Err(Error::InvalidInput(format!("matrix is not positive semidefinite (eigenvalue {lowest:e})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
    DataMatrix::new((&root + root.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TpowerParams {
    pub max_iters: usize,
    /// Stop once the support is fixed and the iterate moves less than this.
    pub tol: f64,
    /// Plain power steps applied to the random start before truncation.
    pub warm_start_iters: usize,
}

impl Default for TpowerParams {
    fn default() -> Self {
        TpowerParams {
            max_iters: 1000,
            tol: 1e-8,
            warm_start_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpowerResult {
    /// Unit vector with at most `r` nonzeros.
    pub vector: DVector<f64>,
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when `A` annihilated the iterate, e.g. `A = 0`.
    pub degenerate: bool,
}

/// Indices of the `r` largest-magnitude entries, smaller index first on ties,
/// returned sorted.
fn top_r(v: &DVector<f64>, r: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    order.truncate(r);
    order.sort_unstable();
    order
}

fn restrict(v: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for &i in support {
        out[i] = v[i];
    }
    out
}

fn unit_vector(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

pub fn tpower(a: &SymmetricMatrix, r: usize, seed: u64) -> Result<TpowerResult> {
    tpower_with(a, r, TpowerParams::default(), seed)
}

/// Truncated power method: `v ← normalize(top_r(Av))` from a seeded random
/// unit start.
///
/// The start is first refined by `warm_start_iters` plain power steps, so
/// runs begin near the leading eigenvector regardless of seed.
pub fn tpower_with(a: &SymmetricMatrix, r: usize, params: TpowerParams, seed: u64) -> Result<TpowerResult> {
    let n = a.order();
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("sparsity r = {r} must lie in 1..={n}")));
    }
    let m = a.as_matrix();
    let degenerate = |iterations| TpowerResult {
        vector: unit_vector(n, 0),
        support: vec![0],
        iterations,
        converged: false,
        degenerate: true,
    };
    if m.amax() == 0.0 {
        return Ok(degenerate(0));
    }

    let mut v: DVector<f64> = gaussian_matrix(n, 1, &mut seeded(seed)).column(0).into_owned();
    v /= v.norm();
    for _ in 0..params.warm_start_iters {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        let w = w / norm;
        let step = (&w - &v).norm();
        v = w;
        if step < 1e-10 {
            break;
        }
    }

    let mut support = top_r(&v, r);
    v = restrict(&v, &support);
    if v.norm() == 0.0 {
        // start lies in the null space; the largest diagonal is a nonzero direction
        let i = linalg::argmax_abs(m.diagonal().iter().copied());
        v = unit_vector(n, i);
        support = vec![i];
    }
    v /= v.norm();

    for it in 1..=params.max_iters {
        let w = m * &v;
        let next_support = top_r(&w, r);
        let mut next = restrict(&w, &next_support);
        let norm = next.norm();
        if norm == 0.0 {
            return Ok(degenerate(it));
        }
        next /= norm;
        let moved = (&next - &v).norm();
        let same = next_support == support;
        v = next;
        support = next_support;
        if same && moved < params.tol {
            return Ok(finish(v, r, it, true));
        }
    }
    Ok(finish(v, r, params.max_iters, false))
}

fn finish(v: DVector<f64>, r: usize, iterations: usize, converged: bool) -> TpowerResult {
    let support: Vec<usize> = top_r(&v, r)
        .into_iter()
        .filter(|&i| v[i] != 0.0)
        .collect();
    let mut v = restrict(&v, &support);
    // sign convention: largest-magnitude entry non-negative
    let i = linalg::argmax_abs(v.iter().copied());
    if v[i] < 0.0 {
        v = -v;
    }
    let norm = v.norm();
    TpowerResult {
        vector: v / norm,
        support,
        iterations,
        converged,
        degenerate: false,
    }
}

/// `(I − hhᵀ) A (I − hhᵀ)`.
pub fn deflate(a: &SymmetricMatrix, h: &DVector<f64>) -> Result<SymmetricMatrix> {
    let n = a.order();
    if h.len() != n {
        return Err(Error::InvalidArgument(format!(
            "vector has length {}, matrix has order {n}",
            h.len()
        )));
    }
    if (h.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument("deflation vector must have unit norm".into()));
    }
    let p = DMatrix::<f64>::identity(n, n) - h * h.transpose();
    let out = &p * a.as_matrix() * &p;
    Ok(SymmetricMatrix((&out + out.transpose()) * 0.5))
}

/// `k` components, each from [`tpower`] on `A` deflated by the previous
/// ones. Component `i` uses seed `step_seed(seed, i)`.
pub fn sparse_components_deflation(a: &SymmetricMatrix, k: usize, r: usize, seed: u64) -> Result<SparseEncoder> {
    sparse_components_deflation_with(a, k, r, TpowerParams::default(), seed)
}

pub fn sparse_components_deflation_with(
    a: &SymmetricMatrix,
    k: usize,
    r: usize,
    params: TpowerParams,
    seed: u64,
) -> Result<SparseEncoder> {
    let n = a.order();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    let mut h = DMatrix::zeros(n, k);
    let mut supports = Vec::with_capacity(k);
    let mut current = a.clone();
    for i in 0..k {
        let res = tpower_with(&current, r, params, step_seed(seed, i))?;
        h.set_column(i, &res.vector);
        current = deflate(&current, &res.vector)?;
        supports.push(res.support);
    }
    SparseEncoder::new(h, vec![r; k], supports, EncoderMode::Deflation)
}
