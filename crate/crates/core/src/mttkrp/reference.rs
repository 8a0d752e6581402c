use super::gemm::dgemm;
use super::{check_inputs, MttkrpOutput, MttkrpStats};
use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::tensor::{khatri_rao_chain, DenseTensor, Matrix};

/// Largest explicit Khatri-Rao matrix [`mttkrp_full_krp`] will build: 2 GiB.
pub const DEFAULT_KRP_BYTE_CAP: u64 = 2 << 30;

/// Serial element-wise MTTKRP, the ground truth every other variant is
/// checked against. Visits elements in storage order and accumulates
/// `λ_j·y·∏_{m≠k} A_m(i_m, j)` (multiplied in that order, m ascending)
/// directly into `G(i_k, j)`.
pub fn mttkrp_reference(y: &DenseTensor, m: &KruskalTensor, mode: usize) -> Result<MttkrpOutput> {
    check_inputs(y, m, mode)?;
    let shape = y.shape();
    let rank = m.rank();
    let lambda = m.lambda();
    let mut g = Matrix::zeros(shape.dim(mode), rank);
    let mut coords = vec![0usize; shape.ndims()];
    for &x in y.data() {
        let row = g.row_mut(coords[mode]);
        for j in 0..rank {
            let mut p = lambda[j] * x;
            for (n, f) in m.factors().iter().enumerate() {
                if n != mode {
                    p *= f.get(coords[n], j);
                }
            }
            row[j] += p;
        }
        for (c, &n) in coords.iter_mut().zip(shape.dims()) {
            *c += 1;
            if *c < n {
                break;
            }
            *c = 0;
        }
    }
    let stats = MttkrpStats {
        element_visits: shape.volume() as u64,
        footprint_bytes: 8 * (shape.volume() as u128 + rank as u128 * shape.dims_sum() as u128),
        workers: 1,
        ..MttkrpStats::default()
    };
    Ok(MttkrpOutput { g, stats })
}

/// MTTKRP through the explicit Khatri-Rao matrix
/// `Z = A_d ⊙ … ⊙ A_{k+1} ⊙ A_{k−1} ⊙ … ⊙ A_1`: `G = Y_(k) · Z · diag(λ)`.
/// Refuses with a resource error when Z would exceed [`DEFAULT_KRP_BYTE_CAP`].
pub fn mttkrp_full_krp(y: &DenseTensor, m: &KruskalTensor, mode: usize) -> Result<MttkrpOutput> {
    mttkrp_full_krp_with_cap(y, m, mode, DEFAULT_KRP_BYTE_CAP)
}

pub fn mttkrp_full_krp_with_cap(
    y: &DenseTensor,
    m: &KruskalTensor,
    mode: usize,
    byte_cap: u64,
) -> Result<MttkrpOutput> {
    check_inputs(y, m, mode)?;
    let shape = y.shape();
    let rank = m.rank();
    let z_rows = shape.slice_volume(mode);
    let z_bytes = 8u128 * z_rows as u128 * rank as u128;
    if z_bytes > byte_cap as u128 {
        return Err(Error::Resource(format!(
            "explicit Khatri-Rao matrix needs {z_bytes} bytes, cap is {byte_cap}; use a matrix-free variant"
        )));
    }
    let chain: Vec<&Matrix> = m.factors().iter().enumerate().rev().filter(|&(n, _)| n != mode).map(|(_, f)| f).collect();
    let z = khatri_rao_chain(&chain, rank)?;
    debug_assert_eq!(z.rows(), z_rows);
    let unfolded = y.matricize(mode)?;
    let rows = shape.dim(mode);
    let mut g = Matrix::zeros(rows, rank);
    dgemm(rows, z_rows, rank, unfolded.data(), z_rows, 1, z.data(), rank, 1, g.data_mut(), rank, 1);
    g.scale_columns(m.lambda());
    let stats = MttkrpStats {
        element_visits: shape.volume() as u64,
        footprint_bytes: 8 * (2 * shape.volume() as u128 + (z_rows + rows) as u128 * rank as u128),
        workers: 1,
        ..MttkrpStats::default()
    };
    Ok(MttkrpOutput { g, stats })
}
