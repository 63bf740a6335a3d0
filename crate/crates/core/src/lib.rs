//! Almost-linear-time approximate attention with rotary position weights.
//!
//! The attention matrix `A_ij = exp(Q_i W_{i-j} K_j^T / sqrt(d))` is never
//! formed. Instead `exp` is replaced by a polynomial, the polynomial of the
//! score matrix is expanded into a sum of rescaled Toeplitz matrices, and each
//! is applied to vectors with FFTs. An exact quadratic oracle is provided for
//! verification.
//!
//! Modules, bottom up:
//! - [`dft`]: radix-2 FFT and real-signal helpers.
//! - [`structured`]: Toeplitz, circulant and rescaled Toeplitz operators.
//! - [`polyexp`]: Taylor approximation of `exp` and monomial expansion.
//! - [`rope`]: weight sequences, RoPE weights, instances and components.
//! - [`engine`]: fast and oracle evaluation.
//! - [`io`]: CSV matrices and weight manifests.

// `!(x <= bound)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dft;
pub mod engine;
pub mod error;
pub mod io;
pub mod matrix;
pub mod polyexp;
pub mod rope;
pub mod structured;

pub use engine::{
    arattc_fast, arattc_oracle, exp_attention_matvec, linear_attention, linear_attention_oracle,
    linf_error, AttentionOutput, EngineConfig, RunStats,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rope::{rope_weights, validate_instance, AttentionInstance, SupportSet, WeightSequence};
