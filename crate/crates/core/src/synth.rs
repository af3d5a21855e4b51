//! Seeded synthetic matrices with prescribed spectra, and the manifest of
//! the real datasets used for comparisons.

use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DataMatrix;
use crate::rng::{gaussian_matrix, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// `σ_i = i^{-decay}`.
    PowerLaw,
    /// `σ_i = spike / i` for `i ≤ spikes`, then `noise`.
    Spiked,
    /// All singular values equal to 1.
    Flat,
    /// Every entry 1.
    AllOnes,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power-law" => Ok(SynthKind::PowerLaw),
            "spiked" => Ok(SynthKind::Spiked),
            "flat" => Ok(SynthKind::Flat),
            "all-ones" => Ok(SynthKind::AllOnes),
            other => Err(Error::InvalidArgument(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub decay: f64,
    pub spikes: usize,
    pub spike: f64,
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            decay: 1.0,
            spikes: 3,
            spike: 10.0,
            noise: 0.1,
        }
    }
}

/// Singular values used by `kind` for a matrix with `m = min(n, d)` of them.
pub fn spectrum(kind: SynthKind, m: usize, params: &SynthParams) -> Vec<f64> {
    (1..=m)
        .map(|i| match kind {
            SynthKind::PowerLaw => (i as f64).powf(-params.decay),
            SynthKind::Spiked if i <= params.spikes => params.spike / i as f64,
            SynthKind::Spiked => params.noise,
            SynthKind::Flat => 1.0,
            SynthKind::AllOnes => if i == 1 { 1.0 } else { 0.0 },
        })
        .collect()
}

/// `U diag(σ) Vᵀ` with `U`, `V` orthonormal factors of seeded Gaussian
/// matrices, or the all-ones matrix.
pub fn generate_synthetic(kind: SynthKind, n: usize, d: usize, params: &SynthParams, seed: u64) -> Result<DataMatrix> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("dimensions must be positive, got {n}x{d}")));
    }
    if kind == SynthKind::AllOnes {
        return DataMatrix::new(DMatrix::from_element(n, d, 1.0));
    }
    if !(params.decay.is_finite() && params.spike.is_finite() && params.noise.is_finite()) {
        return Err(Error::InvalidArgument("generator parameters must be finite".into()));
    }
    let m = n.min(d);
    let mut rng = seeded(seed);
    let u = gaussian_matrix(n, m, &mut rng).qr().q();
    let v = gaussian_matrix(d, m, &mut rng).qr().q();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum(kind, m, params)));
    DataMatrix::new(u * s * v.transpose())
}

/// A real dataset the harness knows the shape of but does not ship.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub description: &'static str,
}

pub const DATASETS: [DatasetSpec; 3] = [
    DatasetSpec {
        name: "pitprops",
        rows: 13,
        cols: 13,
        description: "PitProps correlation matrix",
    },
    DatasetSpec {
        name: "colon",
        rows: 500,
        cols: 500,
        description: "Colon gene-expression covariance, top 500 genes",
    },
    DatasetSpec {
        name: "lymphoma",
        rows: 500,
        cols: 500,
        description: "Lymphoma gene-expression covariance, top 500 genes",
    },
];

pub fn dataset(name: &str) -> Result<&'static DatasetSpec> {
    DATASETS
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset '{name}'")))
}

/// Checks a user-supplied file against the manifest.
pub fn validate_dataset(name: &str, x: &DataMatrix) -> Result<()> {
    let spec = dataset(name)?;
    if (x.rows(), x.cols()) != (spec.rows, spec.cols) {
        return Err(Error::InvalidInput(format!(
            "{name} should be {}x{}, got {}x{}",
            spec.rows,
            spec.cols,
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Where a supplied dataset is looked for: `SPENC_<NAME>` (a file path), then
/// `<name>.csv` or `<name>.mtx` inside `SPENC_DATA_DIR`.
pub fn locate_dataset(name: &str) -> Option<PathBuf> {
    if let Some(p) = std::env::var_os(format!("SPENC_{}", name.to_uppercase())) {
        let p = PathBuf::from(p);
        return p.is_file().then_some(p);
    }
    let dir = PathBuf::from(std::env::var_os("SPENC_DATA_DIR")?);
    ["csv", "mtx"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spectral_norm, svd};

    #[test]
    fn all_ones() {
        let x = generate_synthetic(SynthKind::AllOnes, 3, 3, &SynthParams::default(), 0).unwrap();
        let f = svd(&x).unwrap();
        assert_eq!(f.rank(), 1);
        assert!((spectral_norm(&x).unwrap().powi(2) - 9.0).abs() < 1e-10);
    }

    #[test]
    fn flat_spectrum() {
        let x = generate_synthetic(SynthKind::Flat, 8, 5, &SynthParams::default(), 4).unwrap();
        let f = svd(&x).unwrap();
        assert_eq!(f.rank(), 5);
        assert!(f.s.iter().all(|s| (s - 1.0).abs() < 1e-10));
    }

    #[test]
    fn power_law_ratios() {
        let x = generate_synthetic(SynthKind::PowerLaw, 12, 10, &SynthParams::default(), 9).unwrap();
        let f = svd(&x).unwrap();
        assert!((f.sigma(2) / f.sigma(0) - 1.0 / 3.0).abs() < 1e-10);
        for i in 0..10 {
            assert!((f.sigma(i) - 1.0 / (i + 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn spiked_values() {
        let p = SynthParams::default();
        let x = generate_synthetic(SynthKind::Spiked, 6, 9, &p, 2).unwrap();
        let f = svd(&x).unwrap();
        assert!((f.sigma(0) - 10.0).abs() < 1e-9);
        assert!((f.sigma(2) - 10.0 / 3.0).abs() < 1e-9);
        assert!((f.sigma(5) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn seeded_and_validated() {
        let p = SynthParams::default();
        let a = generate_synthetic(SynthKind::PowerLaw, 5, 4, &p, 1).unwrap();
        let b = generate_synthetic(SynthKind::PowerLaw, 5, 4, &p, 1).unwrap();
        let c = generate_synthetic(SynthKind::PowerLaw, 5, 4, &p, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(generate_synthetic(SynthKind::Flat, 0, 4, &p, 1).is_err());
        assert!("noise".parse::<SynthKind>().is_err());
    }

    #[test]
    fn manifest() {
        assert_eq!((dataset("pitprops").unwrap().rows, dataset("colon").unwrap().cols), (13, 500));
        let x = DataMatrix::identity(13);
        assert!(validate_dataset("pitprops", &x).is_ok());
        assert!(validate_dataset("lymphoma", &x).is_err());
        assert!(dataset("iris").is_err());
    }
}
