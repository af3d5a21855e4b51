//! Sparse linear auto-encoders built on column subset selection.
//!
//! An encoder `H` (`d x k`) maps a data row `x` to `Hᵀx`; its quality is the
//! information loss `‖X − XH(XH)†X‖_F²`, the reconstruction error under the
//! best linear decoder. Encoders here are sparse: each column of `H` touches
//! only a few of the `d` input features.

pub mod baselines;
pub mod cssp;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod synth;

pub use baselines::{deflate, psd_root, sparse_components_deflation, tpower, SymmetricMatrix, TpowerParams, TpowerResult};
pub use cssp::{select_columns, ColumnSelection, SelectionStrategy, StrategyKind};
pub use encoder::{
    adaptive_schedule, batch_encoder, encode, encoder_from_columns, information_loss, iterative_encoder,
    optimal_decoder, orthonormalize, reconstruct, Decoder, EncoderMode, EncoderRun, SparseEncoder,
};
pub use error::{Error, Result};
pub use linalg::DataMatrix;
pub use metrics::{Algorithm, LossReport};
pub use harness::{run, run_encoder, run_on, sweep, ExperimentConfig, Sparsity, SweepAxis, SweepSpec, SweepTable};
pub use io::{load_matrix, save_matrix, MatrixFormat};
pub use synth::{generate_synthetic, SynthKind, SynthParams};
