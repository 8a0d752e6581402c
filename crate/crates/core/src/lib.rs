//! Dense-tensor CP decomposition kernels.
//!
//! The crate provides column-major dense tensors, Kruskal tensors, and five
//! ways to compute the mode-k MTTKRP `G = Y_(k) (A_d ⊙ … ⊙ A_1) diag(λ)`:
//!
//! * [`mttkrp::mttkrp_reference`]: serial element-wise loop, the ground truth.
//! * [`mttkrp::mttkrp_full_krp`]: explicit Khatri-Rao matrix times the unfolding.
//! * [`mttkrp::mttkrp_gemm`]: partial Khatri-Rao products and two GEMMs over reshapes.
//! * [`mttkrp::mttkrp_elem`], [`mttkrp::mttkrp_slice`], [`mttkrp::mttkrp_tile`]:
//!   matrix-free parallel kernels whose memory grows like `R·ΣI_n`.
//!
//! [`perfmodel`] holds the flop/byte/time models used to judge the kernels,
//! [`cpals`] is an alternating least squares driver over any variant and
//! [`cli`] is the benchmark harness behind the `dense-mttkrp` binary.

pub mod cli;
pub mod cpals;
pub mod error;
pub mod kruskal;
pub mod mttkrp;
pub mod perfmodel;
pub mod tensor;

pub use error::{Error, Result};
pub use kruskal::{FactorMatrix, KruskalTensor};
pub use mttkrp::{MttkrpOutput, MttkrpPlan, Variant};
pub use perfmodel::{MachineSpec, PerfReport};
pub use tensor::{DenseTensor, Matrix, MultiIndex, Shape, TileGeometry};
