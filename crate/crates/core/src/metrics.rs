//! Normalized losses, variance accounting, sparsity counts and the
//! [`LossReport`] record emitted for every run.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cssp::StrategyKind;
use crate::encoder::{self, SparseEncoder, NNZ_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_sq, DataMatrix, SvdFactors};
use crate::rng::{gaussian_matrix, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Batch,
    Iterative,
    TpowerDeflation,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Batch => "batch",
            Algorithm::Iterative => "iterative",
            Algorithm::TpowerDeflation => "tpower-deflation",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Algorithm::Batch),
            "iterative" => Ok(Algorithm::Iterative),
            "tpower-deflation" | "tpower" => Ok(Algorithm::TpowerDeflation),
            other => Err(Error::InvalidArgument(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Wall-clock timings in milliseconds. Not deterministic, so they are only
/// written when explicitly requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub select_ms: f64,
    pub total_ms: f64,
}

/// Everything measured about one encoder on one data matrix.
///
/// Field order is the serialization order and is kept stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub algorithm: Algorithm,
    pub strategy: Option<StrategyKind>,
    pub seed: u64,
    pub trials: usize,
    pub n: usize,
    pub d: usize,
    pub k_requested: usize,
    /// Columns actually returned.
    pub k: usize,
    /// Sparsities as requested, before capping at `d`.
    pub schedule: Vec<usize>,
    /// Sparsities actually used.
    pub budgets: Vec<usize>,
    pub info_loss: f64,
    /// `info_loss / pca_loss`; `+inf` (written as `null`) when the PCA loss
    /// is zero but the encoder loses information.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub info_loss_normalized: f64,
    pub sym_explained_variance: f64,
    /// `‖X − XHH†‖_F²`, the loss of the symmetric (transpose) decoder.
    pub sym_loss: f64,
    /// `‖X − X_k‖_F²`.
    pub pca_loss: f64,
    /// `1 + 5k/(r − 5k)` for batch runs with `r > 5k`.
    pub bound_factor: Option<f64>,
    /// Per-step `5/(r_j − 5)` for iterative runs, `None` when `r_j ≤ 5`.
    pub step_delta: Vec<Option<f64>>,
    /// `ℓ(H_ℓ, X)` for each prefix of an iterative encoder.
    pub prefix_losses: Vec<f64>,
    /// `‖X − X_ℓ‖_F²` for each prefix.
    pub prefix_pca_losses: Vec<f64>,
    /// Guaranteed expected loss for each prefix, when an `eps` is known.
    pub prefix_bounds: Vec<f64>,
    pub per_column_sparsity: Vec<usize>,
    pub combined_sparsity: usize,
    pub avg_column_sparsity: f64,
    pub supports: Vec<Vec<usize>>,
    /// Independent columns used at each selection step.
    pub reduced_cardinality: Vec<usize>,
    pub flags: Vec<String>,
    /// Numbers computed by tools outside this library, keyed by name.
    pub external_baselines: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Run metadata needed to assemble a report.
#[derive(Debug, Clone)]
pub struct ReportContext {
    pub algorithm: Algorithm,
    pub strategy: Option<StrategyKind>,
    pub seed: u64,
    pub trials: usize,
    pub k_requested: usize,
    pub schedule: Vec<usize>,
    pub budgets: Vec<usize>,
    pub reduced_cardinality: Vec<usize>,
    pub flags: Vec<String>,
}

impl LossReport {
    /// Measures `h` on `x`. `x_svd` must be the exact SVD of `x`.
    pub fn assemble(
        x: &DataMatrix,
        x_svd: &SvdFactors,
        h: &SparseEncoder,
        ctx: ReportContext,
    ) -> Result<Self> {
        let k = h.k();
        let info_loss = encoder::information_loss(x, h)?;
        let pca_loss = x_svd.tail_energy(k);
        let sym_kept = projected_energy(x, h)?;
        let per_column_sparsity = (0..k).map(|j| h.column_nnz(j)).collect();
        Ok(LossReport {
            algorithm: ctx.algorithm,
            strategy: ctx.strategy,
            seed: ctx.seed,
            trials: ctx.trials,
            n: x.rows(),
            d: x.cols(),
            k_requested: ctx.k_requested,
            k,
            schedule: ctx.schedule,
            budgets: ctx.budgets,
            info_loss,
            info_loss_normalized: normalize_loss(info_loss, pca_loss, frobenius_sq(x)),
            sym_explained_variance: sym_kept / x_svd.head_energy(k),
            sym_loss: (frobenius_sq(x) - sym_kept).max(0.0),
            pca_loss,
            bound_factor: None,
            step_delta: Vec::new(),
            prefix_losses: Vec::new(),
            prefix_pca_losses: Vec::new(),
            prefix_bounds: Vec::new(),
            per_column_sparsity,
            combined_sparsity: combined_sparsity(h),
            avg_column_sparsity: avg_column_sparsity(h),
            supports: h.supports().to_vec(),
            reduced_cardinality: ctx.reduced_cardinality,
            flags: ctx.flags,
            external_baselines: BTreeMap::new(),
            timings: None,
        })
    }

    /// Bounds `(eℓ)^eps ‖X − X_ℓ‖_F² + eps ℓ^{1+eps} ‖X_ℓ − X_1‖_F²` for each
    /// recorded prefix.
    pub fn prefix_bounds(&self, x_svd: &SvdFactors, eps: f64) -> Vec<f64> {
        (1..=self.prefix_losses.len())
            .map(|l| iterative_bound(x_svd, l, eps))
            .collect()
    }
}

fn normalize_loss(loss: f64, pca: f64, total: f64) -> f64 {
    if pca > 1e-12 * total {
        loss / pca
    } else if loss <= 1e-12 * total {
        1.0
    } else {
        f64::INFINITY
    }
}

/// `‖XHH†‖_F²`, i.e. the energy of `X` projected on `span(H)`.
fn projected_energy(x: &DataMatrix, h: &SparseEncoder) -> Result<f64> {
    let q = linalg::range_basis(h.loadings())?;
    Ok(frobenius_sq(&(x.as_matrix() * q)))
}

fn check_k(h: &SparseEncoder, k: usize) -> Result<()> {
    if k != h.k() || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must equal the encoder's column count {}",
            h.k()
        )));
    }
    Ok(())
}

/// `ℓ(H, X) / ‖X − X_k‖_F²`. When the PCA loss vanishes this is 1 if the
/// encoder is also lossless and `+inf` otherwise.
pub fn normalized_information_loss(x: &DataMatrix, h: &SparseEncoder, k: usize) -> Result<f64> {
    check_k(h, k)?;
    let f = linalg::svd(x)?;
    let loss = encoder::information_loss(x, h)?;
    Ok(normalize_loss(loss, f.tail_energy(k), frobenius_sq(x)))
}

/// `‖XHH†‖_F² / ‖X_k‖_F²`.
pub fn symmetric_explained_variance(x: &DataMatrix, h: &SparseEncoder, k: usize) -> Result<f64> {
    check_k(h, k)?;
    if h.loadings().iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("encoder is zero".into()));
    }
    let f = linalg::svd(x)?;
    Ok(projected_energy(x, h)? / f.head_energy(k))
}

/// Both sides of the loss-to-variance conversion for an orthonormal `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceConversion {
    /// `ε` with `‖X − XHH†‖_F² = (1 + ε)‖X − X_k‖_F²`; `None` when the PCA
    /// loss is zero.
    pub eps: Option<f64>,
    /// `‖XHH†‖_F²`.
    pub explained: f64,
    /// `‖X_k‖_F² − ε‖X − X_k‖_F²`.
    pub bound: f64,
    /// `(1 − (ρ − k)ε/k)‖X_k‖_F²`, with `ρ = rank(X)`.
    pub weak_bound: f64,
    /// `‖X − XHH†‖_F²`.
    pub residual: f64,
    /// `‖X‖_F²`.
    pub total: f64,
    pub holds: bool,
    pub holds_weak: bool,
    /// `|‖X‖_F² − ‖X − XHH†‖_F² − ‖XHH†‖_F²|`.
    pub pythagoras_gap: f64,
}

/// Checks `‖XHH†‖_F² ≥ ‖X_k‖_F² − ε‖X − X_k‖_F²` and its weaker form, with
/// slack `1e-8·‖X‖_F²`.
pub fn variance_conversion_check(x: &DataMatrix, h: &SparseEncoder, k: usize) -> Result<VarianceConversion> {
    check_k(h, k)?;
    let hh = h.loadings();
    let gram = hh.transpose() * hh;
    if (gram - DMatrix::<f64>::identity(k, k)).amax() > 1e-8 {
        return Err(Error::InvalidArgument("encoder columns are not orthonormal".into()));
    }
    let f = linalg::svd(x)?;
    let total = frobenius_sq(x);
    let proj = x.as_matrix() * hh * hh.transpose();
    let explained = frobenius_sq(&proj);
    let residual = frobenius_sq(&(x.as_matrix() - &proj));
    let head = f.head_energy(k);
    let tail = f.tail_energy(k);
    let slack = 1e-8 * total.max(f64::MIN_POSITIVE);
    let eps = (tail > 1e-12 * total).then(|| residual / tail - 1.0);
    // ε‖X − X_k‖_F² = ‖X − XHH†‖_F² − ‖X − X_k‖_F², defined even when the tail vanishes
    let bound = head - (residual - tail);
    let rho = f.rank() as f64;
    let weak_bound = match eps {
        Some(e) => (1.0 - (rho - k as f64) * e / k as f64) * head,
        None => bound,
    };
    Ok(VarianceConversion {
        eps,
        explained,
        bound,
        weak_bound,
        residual,
        total,
        holds: explained >= bound - slack,
        holds_weak: explained >= weak_bound - slack,
        pythagoras_gap: (total - residual - explained).abs(),
    })
}

/// Number of rows of `H` with an entry above the zero threshold.
pub fn combined_sparsity(h: &SparseEncoder) -> usize {
    h.nonzero_rows().len()
}

/// Mean number of nonzeros per column.
pub fn avg_column_sparsity(h: &SparseEncoder) -> f64 {
    if h.k() == 0 {
        return 0.0;
    }
    (0..h.k()).map(|j| h.column_nnz(j)).sum::<usize>() as f64 / h.k() as f64
}

/// `1 + 5k/(r − 5k)` when `r > 5k`.
pub fn batch_bound_factor(k: usize, r: usize) -> Option<f64> {
    (r > 5 * k).then(|| 1.0 + 5.0 * k as f64 / (r - 5 * k) as f64)
}

/// `5/(r − 5)` when `r > 5`.
pub fn single_column_delta(r: usize) -> Option<f64> {
    (r > 5).then(|| 5.0 / (r - 5) as f64)
}

/// `(eℓ)^eps ‖X − X_ℓ‖_F² + eps ℓ^{1+eps} ‖X_ℓ − X_1‖_F²`.
pub fn iterative_bound(x_svd: &SvdFactors, l: usize, eps: f64) -> f64 {
    let lf = l as f64;
    let spread = x_svd.head_energy(l) - x_svd.head_energy(1);
    (std::f64::consts::E * lf).powf(eps) * x_svd.tail_energy(l) + eps * lf.powf(1.0 + eps) * spread.max(0.0)
}

/// Result of probing the all-ones matrix with sparse unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllOnesCheck {
    /// `r/d`, attained by equal weights on any support of size `r`.
    pub expected: f64,
    pub equal_weight_ratio: f64,
    /// Largest `‖Av‖²/‖A‖₂²` over all probes, equal weights included.
    pub max_ratio: f64,
    pub samples: usize,
}

pub const ALLONES_SAMPLES: usize = 1000;
const ALLONES_SEED: u64 = 0x5eed_a110;

/// Measures `vᵀAᵀAv / ‖A‖₂²` for the all-ones `n x d` matrix `A` over
/// equal-weight and random `r`-sparse unit vectors `v`.
pub fn allones_sanity(n: usize, d: usize, r: usize) -> Result<AllOnesCheck> {
    if n == 0 || d == 0 || r == 0 || r > d {
        return Err(Error::InvalidArgument(format!(
            "need n, d >= 1 and 1 <= r <= d, got n = {n}, d = {d}, r = {r}"
        )));
    }
    let a = DMatrix::from_element(n, d, 1.0);
    let norm_sq = linalg::spectral_norm(&a)?.powi(2);
    let ratio = |v: &DVector<f64>| (&a * v).norm_squared() / norm_sq;

    let mut eq = DVector::zeros(d);
    for i in 0..r {
        eq[i] = 1.0 / (r as f64).sqrt();
    }
    let equal_weight_ratio = ratio(&eq);
    let mut max_ratio = equal_weight_ratio;
    let mut rng = seeded(ALLONES_SEED);
    for _ in 0..ALLONES_SAMPLES {
        let support = sample(&mut rng, d, r);
        let w = gaussian_matrix(r, 1, &mut rng);
        let mut v = DVector::zeros(d);
        for (t, i) in support.iter().enumerate() {
            v[i] = w[(t, 0)];
        }
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        v /= norm;
        max_ratio = max_ratio.max(ratio(&v));
    }
    Ok(AllOnesCheck {
        expected: r as f64 / d as f64,
        equal_weight_ratio,
        max_ratio,
        samples: ALLONES_SAMPLES,
    })
}

/// Number of loadings entries above the zero threshold.
pub fn nnz(h: &DMatrix<f64>) -> usize {
    h.iter().filter(|v| v.abs() > NNZ_TOL).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cssp::SelectionStrategy;
    use crate::encoder::{batch_encoder, EncoderMode};
    use proptest::prelude::*;

    fn random(n: usize, d: usize, seed: u64) -> DataMatrix {
        DataMatrix::new(gaussian_matrix(n, d, &mut seeded(seed))).unwrap()
    }

    fn dense(h: DMatrix<f64>) -> SparseEncoder {
        SparseEncoder::from_dense(h, EncoderMode::External).unwrap()
    }

    fn unit(d: usize, ix: &[usize]) -> SparseEncoder {
        let mut h = DMatrix::zeros(d, ix.len());
        for (j, &i) in ix.iter().enumerate() {
            h[(i, j)] = 1.0;
        }
        dense(h)
    }

    #[test]
    fn pca_loadings_are_reference_point() {
        let x = random(9, 6, 1);
        let f = linalg::svd(&x).unwrap();
        let h = dense(f.right_vectors(3));
        assert!((normalized_information_loss(&x, &h, 3).unwrap() - 1.0).abs() < 1e-10);
        assert!((symmetric_explained_variance(&x, &h, 3).unwrap() - 1.0).abs() < 1e-10);
        let vc = variance_conversion_check(&x, &h, 3).unwrap();
        assert!(vc.eps.unwrap().abs() < 1e-10);
        assert!((vc.explained - f.head_energy(3)).abs() < 1e-10);
    }

    #[test]
    fn identity_examples() {
        let x = DataMatrix::identity(4);
        let h = unit(4, &[0, 1]);
        assert!((normalized_information_loss(&x, &h, 2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(combined_sparsity(&h), 2);
        assert_eq!(avg_column_sparsity(&h), 1.0);
        let x = DataMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = symmetric_explained_variance(&x, &unit(2, &[0]), 1).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_conversion_on_identity() {
        // every direction carries the same energy, so e_1 is a top PC and ε = 0
        let x = DataMatrix::identity(3);
        let vc = variance_conversion_check(&x, &unit(3, &[0]), 1).unwrap();
        assert!(vc.eps.unwrap().abs() < 1e-12);
        assert!((vc.explained - 1.0).abs() < 1e-12);
        assert!((vc.bound - 1.0).abs() < 1e-12);
        assert!(vc.holds && vc.holds_weak);
    }

    #[test]
    fn variance_conversion_rejects_non_orthonormal() {
        let x = random(4, 3, 2);
        let h = dense(DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0]));
        assert!(variance_conversion_check(&x, &h, 1).is_err());
    }

    #[test]
    fn degenerate_normalization() {
        let x = DataMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let good = dense(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(normalized_information_loss(&x, &good, 1).unwrap(), 1.0);
        let x = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let bad = dense(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(normalized_information_loss(&x, &bad, 1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn k_must_match_columns() {
        let x = random(4, 4, 3);
        assert!(normalized_information_loss(&x, &unit(4, &[0, 1]), 1).is_err());
    }

    #[test]
    fn allones_examples() {
        let c = allones_sanity(4, 4, 2).unwrap();
        assert!((c.max_ratio - 0.5).abs() < 1e-12);
        let c = allones_sanity(3, 6, 6).unwrap();
        assert!((c.max_ratio - 1.0).abs() < 1e-12);
        let c = allones_sanity(5, 10, 3).unwrap();
        assert!((c.equal_weight_ratio - 0.3).abs() < 1e-12);
        assert!(c.max_ratio <= 0.3 + 1e-9);
        assert!(allones_sanity(2, 3, 4).is_err());
    }

    #[test]
    fn bound_factors() {
        assert_eq!(batch_bound_factor(3, 30), Some(2.0));
        assert_eq!(batch_bound_factor(3, 15), None);
        assert_eq!(single_column_delta(10), Some(1.0));
        assert_eq!(single_column_delta(5), None);
    }

    #[test]
    fn iterative_bound_first_prefix() {
        let x = DataMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, 2.0, 1.0]))).unwrap();
        let f = linalg::svd(&x).unwrap();
        // ℓ = 1: (e)^eps · (4 + 1), spread term vanishes
        let b = iterative_bound(&f, 1, 0.5);
        assert!((b - std::f64::consts::E.sqrt() * 5.0).abs() < 1e-12);
        let b = iterative_bound(&f, 2, 0.5);
        let expect = (2.0 * std::f64::consts::E).sqrt() * 1.0 + 0.5 * 2f64.powf(1.5) * 4.0;
        assert!((b - expect).abs() < 1e-12);
    }

    #[test]
    fn batch_report_fields() {
        let x = random(20, 12, 5);
        let run = batch_encoder(&x, 2, 6, &SelectionStrategy::greedy()).unwrap();
        let r = &run.report;
        assert_eq!(r.combined_sparsity, run.encoder.nonzero_rows().len());
        assert!(r.combined_sparsity <= 6);
        assert!(r.info_loss_normalized >= 1.0 - 1e-8);
        assert!(r.sym_explained_variance <= 1.0 + 1e-8);
        assert!(r.info_loss <= r.sym_loss + 1e-8);
        assert_eq!(r.bound_factor, None);
    }

    #[test]
    fn report_round_trip_with_infinity() {
        let x = random(10, 6, 7);
        let mut rep = batch_encoder(&x, 1, 3, &SelectionStrategy::randomized(3)).unwrap().report;
        rep.timings = None;
        rep.info_loss_normalized = f64::INFINITY;
        let s = serde_json::to_string(&rep).unwrap();
        assert!(s.contains("\"info_loss_normalized\":null"));
        let back: LossReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rep);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn report_round_trips_bitwise(seed in any::<u64>(), k in 1usize..3, extra in 0usize..4) {
            let x = random(8, 7, seed);
            let mut rep = batch_encoder(&x, k, k + extra, &SelectionStrategy::randomized(seed)).unwrap().report;
            rep.external_baselines.insert("scaled".into(), rep.info_loss * 1.0e-7 / 3.0);
            let s = serde_json::to_string(&rep).unwrap();
            let back: LossReport = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.info_loss.to_bits(), rep.info_loss.to_bits());
            prop_assert_eq!(back.sym_explained_variance.to_bits(), rep.sym_explained_variance.to_bits());
            prop_assert_eq!(back.pca_loss.to_bits(), rep.pca_loss.to_bits());
            prop_assert_eq!(&back, &rep);
        }

        #[test]
        fn pythagoras_and_conversion(seed in any::<u64>(), n in 2usize..9, d in 2usize..8, k in 1usize..3) {
            let k = k.min(d);
            let x = random(n, d, seed);
            let q = linalg::range_basis(&gaussian_matrix(d, k, &mut seeded(seed ^ 1))).unwrap();
            prop_assume!(q.ncols() == k);
            let h = dense(q);
            let vc = variance_conversion_check(&x, &h, k).unwrap();
            prop_assert!(vc.pythagoras_gap <= 1e-8 * vc.total);
            prop_assert!(vc.holds);
            let loss = encoder::information_loss(&x, &h).unwrap();
            prop_assert!(loss <= vc.residual + 1e-8 * vc.total);
        }
    }
}
