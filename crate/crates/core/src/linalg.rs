//! Dense matrix primitives: SVD, thin QR, pseudo-inverse, rank-k truncation
//! and norms.
//!
//! One global rank cutoff is used everywhere: a singular value (or a QR
//! diagonal) is treated as zero when it is at most [`RANK_TOL`] times the
//! largest singular value of the matrix it came from.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Relative rank tolerance: `σ_i <= RANK_TOL * σ_1` counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Dense real matrix with finite entries and at least one row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix must be at least 1x1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m)?;
        Ok(DataMatrix(m))
    }

    /// Builds an `n x d` matrix from row-major entries.
    pub fn from_row_slice(n: usize, d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {n}x{d} matrix, got {}",
                n * d,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, d, entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!(
                "ragged rows: row {i} has {} entries, expected {d}",
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(n, d, &flat)
    }

    pub fn identity(n: usize) -> Self {
        DataMatrix(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Rows as nested vectors (row-major).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.0 * c)
    }
}

impl Deref for DataMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<DMatrix<f64>> for DataMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (i, j) = (pos % m.nrows().max(1), pos / m.nrows().max(1));
        return Err(Error::InvalidInput(format!(
            "non-finite entry at ({i}, {j})"
        )));
    }
    Ok(())
}

/// Thin SVD truncated to the numerical rank.
///
/// `u` is `n x ρ`, `v` is `d x ρ`, `s` holds the `ρ` retained singular
/// values in non-increasing order. For each index the right singular vector
/// is signed so that its largest-magnitude entry (first one on ties) is
/// non-negative.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    /// Shape of the factored matrix.
    pub shape: (usize, usize),
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.s.get(i).copied().unwrap_or(0.0)
    }

    /// `Σ_{i >= k} σ_i²` (0-based), i.e. `‖A − A_k‖_F²`.
    pub fn tail_energy(&self, k: usize) -> f64 {
        self.s.iter().skip(k).map(|s| s * s).sum()
    }

    /// `Σ_{i < k} σ_i²`, i.e. `‖A_k‖_F²`.
    pub fn head_energy(&self, k: usize) -> f64 {
        self.s.iter().take(k).map(|s| s * s).sum()
    }

    /// First `k` right singular vectors as a `d x min(k, ρ)` matrix.
    pub fn right_vectors(&self, k: usize) -> DMatrix<f64> {
        self.v.columns(0, k.min(self.rank())).into_owned()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.partial_product(self.rank())
    }

    fn partial_product(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.rank());
        if k == 0 {
            return DMatrix::zeros(self.shape.0, self.shape.1);
        }
        let mut us = self.u.columns(0, k).into_owned();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.columns(0, k).transpose()
    }
}

/// Singular value decomposition with the global rank cutoff applied.
pub fn svd(a: &DMatrix<f64>) -> Result<SvdFactors> {
    ensure_finite(a)?;
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Ok(SvdFactors {
            u: DMatrix::zeros(n, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(d, 0),
            shape: (n, d),
        });
    }
    if n < d {
        // the pivoted QR below wants a tall matrix
        let t = svd(&a.transpose())?;
        let mut f = SvdFactors {
            u: t.v,
            s: t.s,
            v: t.u,
            shape: (n, d),
        };
        for j in 0..f.s.len() {
            let pivot = argmax_abs(f.v.column(j).iter().copied());
            if f.v[(pivot, j)] < 0.0 {
                f.v.column_mut(j).neg_mut();
                f.u.column_mut(j).neg_mut();
            }
        }
        return Ok(f);
    }
    // nalgebra's bidiagonal SVD can return a wrong factorization for exactly
    // rank-deficient input, so strip the null part with a pivoted QR first and
    // factor the full-rank triangle: A P = Q R, A ≈ Q_ρ (R_ρ Pᵀ).
    let (q, r, p) = a.clone().col_piv_qr().unpack();
    let r00 = r[(0, 0)].abs();
    let floor = (d as f64) * f64::EPSILON * r00;
    let rho = (0..d).take_while(|&i| r[(i, i)].abs() > floor).count();
    if rho == 0 {
        return Ok(SvdFactors {
            u: DMatrix::zeros(n, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(d, 0),
            shape: (n, d),
        });
    }
    let mut top_rows = r.rows(0, rho).into_owned();
    p.inv_permute_columns(&mut top_rows);
    let raw = SVD::try_new(top_rows.transpose(), true, true, f64::EPSILON, 10_000).ok_or_else(|| {
        Error::Numerical(format!(
            "SVD of {n}x{d} matrix did not converge (‖A‖_F = {:e})",
            a.norm()
        ))
    })?;
    let u_full = q.columns(0, rho) * raw.v_t.expect("requested Vᵀ").transpose();
    let vt_full = raw.u.expect("requested U").transpose();
    let sv = raw.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    // stable: equal values keep the factorization's order
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let top = order.first().map_or(0.0, |&i| sv[i]);
    let cutoff = RANK_TOL * top;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > cutoff && sv[i] > 0.0)
        .collect();

    let rho = kept.len();
    let mut u = DMatrix::zeros(n, rho);
    let mut v = DMatrix::zeros(d, rho);
    let mut s = DVector::zeros(rho);
    for (dst, &src) in kept.iter().enumerate() {
        s[dst] = sv[src];
        u.set_column(dst, &u_full.column(src));
        v.set_column(dst, &vt_full.row(src).transpose());
        let pivot = argmax_abs(v.column(dst).iter().copied());
        if v[(pivot, dst)] < 0.0 {
            v.column_mut(dst).neg_mut();
            u.column_mut(dst).neg_mut();
        }
    }
    Ok(SvdFactors {
        u,
        s,
        v,
        shape: (n, d),
    })
}

/// Index of the entry with the largest magnitude; first index wins ties.
pub(crate) fn argmax_abs(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v.abs() > best_val {
            best = i;
            best_val = v.abs();
        }
    }
    best
}

/// `U_k Σ_k V_kᵀ`; the full reconstruction when `k >= ρ`.
pub fn truncate_rank(f: &SvdFactors, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("rank k must be at least 1".into()));
    }
    Ok(f.partial_product(k))
}

/// Best rank-k approximation of `a` (Eckart–Young).
pub fn best_rank_k(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    truncate_rank(&svd(a)?, k)
}

/// Thin QR factorization `C = QR` of a full-column-rank `n x r` matrix.
///
/// Signs are fixed so that `diag(R) > 0`.
#[derive(Debug, Clone)]
pub struct ThinQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub fn qr_thin(c: &DMatrix<f64>) -> Result<ThinQr> {
    ensure_finite(c)?;
    let (n, r) = c.shape();
    if r == 0 {
        return Err(Error::InvalidArgument("QR of a matrix with no columns".into()));
    }
    let decomposition = c.clone().qr();
    let mut q = decomposition.q();
    let mut rr = decomposition.r();
    // Householder Q is n x min(n, r); R is min(n, r) x r.
    let scale = spectral_norm(&rr)?;
    let tol = RANK_TOL * scale;
    for i in 0..r {
        let magnitude = if i < n { rr[(i, i)].abs() } else { 0.0 };
        if magnitude <= tol || scale == 0.0 {
            return Err(Error::RankDeficient {
                index: i,
                magnitude,
                tolerance: tol,
            });
        }
    }
    for i in 0..r {
        if rr[(i, i)] < 0.0 {
            rr.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok(ThinQr { q, r: rr })
}

/// Moore–Penrose pseudo-inverse through the SVD, honoring [`RANK_TOL`].
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = svd(a)?;
    Ok(pinv_from(&f))
}

pub(crate) fn pinv_from(f: &SvdFactors) -> DMatrix<f64> {
    let (n, d) = f.shape;
    if f.rank() == 0 {
        return DMatrix::zeros(d, n);
    }
    let mut v_scaled = f.v.clone();
    for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
        col /= f.s[j];
    }
    v_scaled * f.u.transpose()
}

/// `‖A‖_F²`.
pub fn frobenius_sq(a: &DMatrix<f64>) -> f64 {
    a.norm_squared()
}

/// `‖A‖_2`, the largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let sv = a
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("singular values did not converge".into()))?
        .singular_values;
    Ok(sv.iter().copied().fold(0.0, f64::max))
}

/// Orthonormal basis of the column space of `a` (rank cutoff applied).
pub(crate) fn range_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(svd(a)?.u)
}

/// `A − Q Qᵀ A` for an orthonormal `Q`.
pub(crate) fn project_out(q: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    if q.ncols() == 0 {
        return a.clone();
    }
    a - q * (q.transpose() * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        gaussian_matrix(n, d, &mut seeded(seed))
    }

    #[test]
    fn svd_identity() {
        let f = svd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.rank(), 3);
        for s in f.s.iter() {
            assert!((s - 1.0).abs() < 1e-14);
        }
        let recon = f.reconstruct();
        assert!((recon - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn svd_diagonal_values() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-14);
        assert!((f.s[1] - 2.0).abs() < 1e-14);
        // sign convention: dominant entry of each right vector is positive
        assert!(f.v[(1, 0)] > 0.0);
        assert!(f.v[(0, 1)] > 0.0);
    }

    #[test]
    fn svd_reconstructs_random() {
        for (n, d) in [(6, 4), (4, 6), (1, 5), (7, 1)] {
            let a = random(n, d, 11);
            let f = svd(&a).unwrap();
            let resid = (&a - f.reconstruct()).norm();
            assert!(resid <= 1e-8 * a.norm().max(1.0), "{n}x{d}: {resid}");
            let iu = f.u.transpose() * &f.u;
            let iv = f.v.transpose() * &f.v;
            let id = DMatrix::<f64>::identity(f.rank(), f.rank());
            assert!((iu - &id).amax() < 1e-10);
            assert!((iv - &id).amax() < 1e-10);
            for w in f.s.as_slice().windows(2) {
                assert!(w[0] >= w[1] && w[1] > 0.0);
            }
        }
    }

    #[test]
    fn svd_drops_tiny_singular_values() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12, 0.5]));
        let f = svd(&a).unwrap();
        assert_eq!(f.rank(), 2);
        let zero = svd(&DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(zero.rank(), 0);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = DMatrix::<f64>::identity(2, 2);
        a[(1, 0)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn truncate_keeps_top_directions() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let t = truncate_rank(&svd(&a).unwrap(), 2).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 0.0]));
        assert!((t - expected).norm() < 1e-12);
        assert!(matches!(
            truncate_rank(&svd(&a).unwrap(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn truncate_at_full_rank_is_identity_map() {
        let a = random(5, 4, 3);
        let f = svd(&a).unwrap();
        let t = truncate_rank(&f, f.rank()).unwrap();
        assert!((t - &a).norm() <= 1e-8);
        let t = truncate_rank(&f, 99).unwrap();
        assert!((t - &a).norm() <= 1e-8);
    }

    #[test]
    fn truncation_error_is_tail_energy() {
        let a = random(5, 5, 7);
        let f = svd(&a).unwrap();
        let a2 = truncate_rank(&f, 2).unwrap();
        let err = frobenius_sq(&(&a - &a2));
        let tail = f.s[2].powi(2) + f.s[3].powi(2) + f.s[4].powi(2);
        assert!((err - tail).abs() <= 1e-8 * tail);
    }

    #[test]
    fn qr_of_orthonormal_columns() {
        let q0 = svd(&random(6, 3, 5)).unwrap().u;
        let f = qr_thin(&q0).unwrap();
        assert!((f.q.abs() - q0.abs()).amax() < 1e-10);
        assert!((f.r.abs() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn qr_single_column() {
        let c = DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0]);
        let f = qr_thin(&c).unwrap();
        assert!((f.r[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((f.q[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn qr_reconstructs_random() {
        let c = random(8, 3, 9);
        let f = qr_thin(&c).unwrap();
        assert!((&c - &f.q * &f.r).norm() <= 1e-8 * c.norm());
        let qtq = f.q.transpose() * &f.q;
        assert!((qtq - DMatrix::<f64>::identity(3, 3)).amax() <= 1e-10);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(f.r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn qr_reports_dependent_column() {
        let mut c = random(5, 3, 2);
        let dup = c.column(0) * 2.0 - c.column(1);
        c.set_column(2, &dup);
        match qr_thin(&c) {
            Err(Error::RankDeficient { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        // more columns than rows
        assert!(matches!(
            qr_thin(&random(2, 3, 1)),
            Err(Error::RankDeficient { index: 2, .. })
        ));
    }

    #[test]
    fn pinv_diagonal_and_zero() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let p = pseudo_inverse(&a).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25]));
        assert!((p - expected).amax() < 1e-15);
        let z = pseudo_inverse(&DMatrix::zeros(2, 3)).unwrap();
        assert_eq!(z.shape(), (3, 2));
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn pinv_moore_penrose_identities() {
        let a = random(4, 6, 21);
        let p = pseudo_inverse(&a).unwrap();
        assert!((&a * &p * &a - &a).norm() <= 1e-8);
        assert!((&p * &a * &p - &p).norm() <= 1e-8);
        let ap = &a * &p;
        assert!((&ap - ap.transpose()).norm() <= 1e-8);
        assert!((&ap * &ap - &ap).norm() <= 1e-8);
    }

    #[test]
    fn data_matrix_validation() {
        assert!(DataMatrix::from_row_slice(0, 2, &[]).is_err());
        assert!(DataMatrix::from_row_slice(1, 2, &[1.0, f64::INFINITY]).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let m = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(m.to_rows(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn svd_exact_low_rank_products() {
        // exact low-rank products used to come back mis-factored
        for seed in 0..300u64 {
            let n = 2 + (seed % 11) as usize;
            let d = 2 + (seed * 7 % 43) as usize;
            let k = 1 + (seed % 3) as usize;
            let k = k.min(n).min(d);
            let a = &random(n, k, seed) * &random(k, d, seed + 1000);
            let f = svd(&a).unwrap();
            assert_eq!(f.rank(), k, "seed {seed}");
            assert!((f.reconstruct() - &a).norm() <= 1e-12 * a.norm(), "seed {seed}");
            let eye = DMatrix::<f64>::identity(k, k);
            assert!((f.u.transpose() * &f.u - &eye).norm() <= 1e-12);
            assert!((f.v.transpose() * &f.v - &eye).norm() <= 1e-12);
        }
    }
}
