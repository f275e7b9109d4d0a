//! Lossless conversion of relaxed `Z:L` structured sparsity into hardware
//! `M:N`-compliant form.
//!
//! A `Z:L` row is split into overlapping windows of the hardware width; each
//! window keeps at most `M` nonzeros, and the activation operand is lifted
//! (elements duplicated by window coverage) so the inner product is unchanged.
//!
//! The crate is organised bottom-up:
//!
//! - [`pattern`]: pattern geometry, window plans, expansion factor and
//!   speedup bounds in exact rational arithmetic.
//! - [`packer`]: the greedy residual-allocation weight packer, its inverse,
//!   compliance checking and magnitude pruning.
//! - [`activation`]: activation lifting, per-token symmetric quantization and
//!   the fused quantize-lift-pack transform.
//! - [`sparse`]: compressed `M:N` storage, the structured sparse GEMM, the
//!   dense GEMM oracle and end-to-end equivalence checking.
//! - [`analyzer`]: case tables, efficiency metric and the I/O cost model.
//! - [`container`]: the self-describing binary file format.

pub mod activation;
pub mod analyzer;
pub mod container;
mod element;
mod error;
pub mod packer;
pub mod pattern;
pub mod random;
pub mod sparse;

pub use activation::{
    fused_quant_slide, lift_row, quantize_row, QuantFormat, QuantizedLiftedActivation,
};
pub use element::{Accumulate, DType, Element, Matrix};
pub use error::{Error, Result};
pub use packer::{magnitude_prune, pack_matrix, pack_row, verify_compliance, SlidedMatrix};
pub use pattern::{plan_decomposition, Ratio, SparsityPattern, WindowPlan};
pub use sparse::{check_equivalence, compress, decompress, dense_gemm, sparse_gemm, CompressedSparseMatrix};
