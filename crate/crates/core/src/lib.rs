//! Weighted-residual energy trees on finite-dimensional Hilbert spaces.
//!
//! A positive matrix `R0` and contractions `C_1..C_m` generate an `m`-ary
//! tree of residuals `R_{wj} = R_w^{1/2}(I - C_j*C_j)R_w^{1/2}`. Edge
//! dissipations, biased by a vector or by the trace, define a Markov chain
//! on words with an absorbing symbol `0`. The modules cover:
//!
//! * [`psd`]: square roots, Loewner order, one-step splittings, Douglas recovery.
//! * [`tree`]: the memoized tree, transition rows, leakage and compatibility scans.
//! * [`paths`]: cylinder measures, enumeration, seeded sampling, pathwise processes.
//! * [`extinction`]: conditional dissipation and geometric extinction bounds.
//! * [`measure`]: likelihood-ratio martingales and the operator-valued measure.
//! * [`boundary`]: empirical law of the terminal residual and its disintegration.

pub mod boundary;
pub mod error;
pub mod extinction;
pub mod fixtures;
pub mod measure;
pub mod paths;
pub mod psd;
pub mod tree;

pub use error::{Result, WrError};
pub use psd::{
    douglas_recover, iterate_splitting, loewner_leq, psd_sqrt, split, trace_of, CMatrix,
    ContractionMatrix, CVector, HermitianMatrix, PsdMatrix, SplitPair, Tolerances, C64,
};
pub use tree::{Bias, EnergyTree, ExtendedWord, Symbol, TransitionRow, TreeSpec};
