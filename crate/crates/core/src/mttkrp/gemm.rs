use super::{check_inputs, MttkrpOutput, MttkrpStats};
use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::perfmodel::mem_gemm;
use crate::tensor::{DenseTensor, Matrix, Shape};

/// `C = A·B` for an `m×k` A and `k×n` B given by element strides
/// (row stride, column stride), overwriting C.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, n, rsc, csc) < c.len(), "output operand out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] = 0.0;
            }
        }
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len(), "left operand out of bounds");
    assert!(last(k, n, rsb, csb) < b.len(), "right operand out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Scratch elements [`mttkrp_gemm`] needs: `R·(I_L + I_R) + I_L·I_k·R`.
pub fn gemm_scratch_len(shape: &Shape, rank: usize, mode: usize) -> usize {
    let (left, right) = (shape.left_volume(mode), shape.right_volume(mode));
    rank.saturating_mul(left.saturating_add(right))
        .saturating_add(left.saturating_mul(shape.dim(mode)).saturating_mul(rank))
}

/// Bytes held by the tensor, both partial Khatri-Rao products and the output,
/// `8·(N + R·(I_L + I_R + I_k))`. The transient `I_L·I_k × R` product of the
/// middle-mode path is not included.
pub fn gemm_footprint_bytes(shape: &Shape, rank: usize, mode: usize) -> u128 {
    mem_gemm(shape, rank, mode, 8)
}

/// Writes `diag(w)·(M_1 ⊙ … ⊙ M_p)` row-major into `out` (first factor
/// slowest). Each entry is `w_j·M_1(·,j)·…·M_p(·,j)`, multiplied left to right.
fn fill_khatri_rao(out: &mut [f64], chain: &[&Matrix], weights: &[f64]) {
    let rank = weights.len();
    let mut idx = vec![0usize; chain.len()];
    for row in out.chunks_exact_mut(rank) {
        row.copy_from_slice(weights);
        for (f, &i) in chain.iter().zip(&idx) {
            row.iter_mut().zip(f.row(i)).for_each(|(z, a)| *z *= a);
        }
        for (c, f) in idx.iter_mut().zip(chain).rev() {
            *c += 1;
            if *c < f.rows() {
                break;
            }
            *c = 0;
        }
    }
}

/// MTTKRP through partial Khatri-Rao products and GEMMs on reshapes of Y,
/// never permuting the tensor:
///
/// * mode 0: `G = reshape(Y, [I_1, I_R]) · Z_R`,
/// * last mode: `G = reshape(Y, [I_L, I_d])ᵀ · Z_L`,
/// * otherwise `C = reshape(Y, [I_L·I_k, I_R]) · Z_R`, viewed as
///   `I_L × I_k × R`, then `G(ℓ, j) = Σ_q C(q, ℓ, j)·Z_L(q, j)`,
///
/// with `Z_R = (A_d ⊙ … ⊙ A_{k+1})·diag(λ)` and `Z_L = A_{k−1} ⊙ … ⊙ A_1`.
/// λ is applied once: inside Z_R, or inside Z_L for the last mode.
pub fn mttkrp_gemm(y: &DenseTensor, m: &KruskalTensor, mode: usize, scratch: &mut [f64]) -> Result<MttkrpOutput> {
    check_inputs(y, m, mode)?;
    let shape = y.shape();
    let rank = m.rank();
    let need = gemm_scratch_len(shape, rank, mode);
    if scratch.len() < need {
        return Err(Error::Resource(format!(
            "GEMM MTTKRP needs {need} scratch elements, got {}",
            scratch.len()
        )));
    }
    let d = shape.ndims();
    let (left, right, ik) = (shape.left_volume(mode), shape.right_volume(mode), shape.dim(mode));
    let ones = vec![1.0; rank];
    let (z_r, rest) = scratch.split_at_mut(right * rank);
    let (z_l, rest) = rest.split_at_mut(left * rank);
    let c = &mut rest[..left * ik * rank];

    let right_chain: Vec<&Matrix> = m.factors()[mode + 1..].iter().rev().collect();
    let left_chain: Vec<&Matrix> = m.factors()[..mode].iter().rev().collect();
    let last = mode + 1 == d && d > 1;
    fill_khatri_rao(z_r, &right_chain, if last { &ones } else { m.lambda() });
    fill_khatri_rao(z_l, &left_chain, if last { m.lambda() } else { &ones });

    let data = y.data();
    let mut g = Matrix::zeros(ik, rank);
    if mode == 0 {
        dgemm(ik, right, rank, data, 1, ik, z_r, rank, 1, g.data_mut(), rank, 1);
    } else if last {
        dgemm(ik, left, rank, data, left, 1, z_l, rank, 1, g.data_mut(), rank, 1);
    } else {
        let rows = left * ik;
        dgemm(rows, right, rank, data, 1, rows, z_r, rank, 1, c, 1, rows);
        for j in 0..rank {
            let block = &c[j * rows..(j + 1) * rows];
            for l in 0..ik {
                let col = &block[l * left..(l + 1) * left];
                let mut acc = 0.0;
                for q in 0..left {
                    acc += col[q] * z_l[q * rank + j];
                }
                g.set(l, j, acc);
            }
        }
    }
    let stats = MttkrpStats {
        element_visits: shape.volume() as u64,
        footprint_bytes: gemm_footprint_bytes(shape, rank, mode),
        workers: 1,
        ..MttkrpStats::default()
    };
    Ok(MttkrpOutput { g, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mttkrp::{mttkrp_full_krp, mttkrp_reference};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(y: &DenseTensor, m: &KruskalTensor, k: usize) -> Matrix {
        let mut scratch = vec![0.0; gemm_scratch_len(y.shape(), m.rank(), k)];
        mttkrp_gemm(y, m, k, &mut scratch).unwrap().g
    }

    #[test]
    fn matches_reference_on_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for dims in [vec![4, 3, 5], vec![2, 3, 4, 5], vec![3, 2, 1, 4, 2], vec![6]] {
            let y = DenseTensor::random_uniform(Shape::new(dims.clone()).unwrap(), &mut rng);
            let f = KruskalTensor::random(&dims, 3, &mut rng).unwrap().into_parts().1;
            let m = KruskalTensor::new(vec![0.5, 1.0, 3.0], f).unwrap();
            for k in 0..dims.len() {
                let g = run(&y, &m, k);
                let r = mttkrp_reference(&y, &m, k).unwrap().g;
                assert!(g.distance(&r).unwrap() <= 1e-13 * r.frobenius_norm(), "{dims:?} mode {k}");
            }
        }
    }

    #[test]
    fn two_way_first_mode_bit_equals_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = DenseTensor::random_uniform(Shape::new(vec![9, 13]).unwrap(), &mut rng);
        let m = KruskalTensor::random(&[9, 13], 5, &mut rng).unwrap();
        assert_eq!(run(&y, &m, 0), mttkrp_full_krp(&y, &m, 0).unwrap().g);
    }

    #[test]
    fn short_scratch_is_a_resource_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y = DenseTensor::random_uniform(Shape::new(vec![3, 4, 5]).unwrap(), &mut rng);
        let m = KruskalTensor::random(&[3, 4, 5], 2, &mut rng).unwrap();
        let need = gemm_scratch_len(y.shape(), 2, 1);
        assert_eq!(need, 2 * (3 + 5) + 3 * 4 * 2);
        let mut scratch = vec![0.0; need - 1];
        assert!(matches!(mttkrp_gemm(&y, &m, 1, &mut scratch), Err(Error::Resource(_))));
    }

    #[test]
    fn footprint_matches_memory_model() {
        let island = Shape::new(vec![129, 129, 129, 12, 39]).unwrap();
        assert_eq!(gemm_footprint_bytes(&island, 2000, 4), 420_202_131_616);
    }
}
