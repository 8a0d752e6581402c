//! ELEM, SLICE and TILE on a scoped worker pool.
//!
//! Work items are handed out in chunks from a shared counter, so any worker
//! may process any item; the output lives in a buffer of atomic `f64` cells.
//! Every variant evaluates an element's contribution the same way,
//! `φ_j = (y·λ_j)·A_{m_1}(i_{m_1}, j)·A_{m_2}(i_{m_2}, j)·…` over the modes
//! `m ≠ k` in ascending order, so results differ between variants and worker
//! counts only in how the `φ` are summed.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use super::{check_inputs, MttkrpOutput, MttkrpPlan, MttkrpStats};
use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::perfmodel::mem_infty;
use crate::tensor::{DenseTensor, Matrix, SliceCursor, Tile, TileGeometry};

/// Column-block widths `F·b_y` with a compiled kernel.
pub const SUPPORTED_UNROLL: [usize; 5] = [1, 2, 4, 8, 16];

const ELEM_CHUNK: usize = 1024;
const TILE_CHUNK_ELEMENTS: usize = 4096;

/// Output matrix of `f64` bit patterns supporting lock-free accumulation.
struct AtomicBuffer(Vec<AtomicU64>);

impl AtomicBuffer {
    fn zeros(len: usize) -> Self {
        AtomicBuffer((0..len).map(|_| AtomicU64::new(0.0f64.to_bits())).collect())
    }

    #[inline]
    fn add(&self, i: usize, v: f64) {
        let cell = &self.0[i];
        let mut current = cell.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(current) + v).to_bits();
            match cell.compare_exchange_weak(current, next, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => return,
                Err(seen) => current = seen,
            }
        }
    }

    #[inline]
    fn store(&self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed);
    }

    fn into_matrix(self, rows: usize, cols: usize) -> Matrix {
        let data = self.0.into_iter().map(|c| f64::from_bits(c.into_inner())).collect();
        Matrix::new(rows, cols, data).expect("buffer sized rows × cols")
    }
}

/// Runs `body` over `0..items` in chunks on up to `workers` threads. Each
/// thread builds its own state with `init`. Returns the thread count used.
fn for_each_chunk<S>(
    workers: usize,
    items: usize,
    chunk: usize,
    init: impl Fn() -> S + Sync,
    body: impl Fn(&mut S, Range<usize>) + Sync,
) -> usize {
    let chunk = chunk.max(1);
    let threads = workers.clamp(1, items.div_ceil(chunk).max(1));
    if threads == 1 {
        let mut state = init();
        let mut start = 0;
        while start < items {
            body(&mut state, start..(start + chunk).min(items));
            start += chunk;
        }
        return 1;
    }
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                let mut state = init();
                loop {
                    let start = next.fetch_add(chunk, Ordering::Relaxed);
                    if start >= items {
                        break;
                    }
                    body(&mut state, start..(start + chunk).min(items));
                }
            });
        }
    });
    threads
}

/// Read-only operands shared by all workers.
struct Operands<'a> {
    data: &'a [f64],
    lambda: &'a [f64],
    /// `(mode, row-major factor data)` for every mode except k, ascending.
    factors: Vec<(usize, &'a [f64])>,
    rank: usize,
    mode: usize,
}

impl<'a> Operands<'a> {
    fn new(y: &'a DenseTensor, m: &'a KruskalTensor, mode: usize) -> Self {
        Operands {
            data: y.data(),
            lambda: m.lambda(),
            factors: m
                .factors()
                .iter()
                .enumerate()
                .filter(|&(n, _)| n != mode)
                .map(|(n, f)| (n, f.data()))
                .collect(),
            rank: m.rank(),
            mode,
        }
    }

    /// Adds the contribution of element `x` at `coords` to columns
    /// `j0..j0+F` of `pi`.
    #[inline(always)]
    fn accumulate<const F: usize>(&self, coords: &[usize], x: f64, j0: usize, pi: &mut [f64; F]) {
        let lambda: &[f64; F] = self.lambda[j0..j0 + F].try_into().unwrap();
        let mut phi = [0.0; F];
        for f in 0..F {
            phi[f] = x * lambda[f];
        }
        for &(m, a) in &self.factors {
            let start = coords[m] * self.rank + j0;
            let row: &[f64; F] = a[start..start + F].try_into().unwrap();
            for f in 0..F {
                phi[f] *= row[f];
            }
        }
        for f in 0..F {
            pi[f] += phi[f];
        }
    }

    /// Column blocks of width F followed by width-1 blocks for the remainder.
    fn blocks<const F: usize>(&self) -> (Range<usize>, Range<usize>) {
        let full = self.rank / F * F;
        (0..full, full..self.rank)
    }

    fn block_count<const F: usize>(&self) -> u64 {
        (self.rank / F + self.rank % F) as u64
    }
}

#[inline(always)]
fn emit<const F: usize>(out: &AtomicBuffer, offset: usize, pi: &[f64; F], atomic: bool) {
    for (f, &v) in pi.iter().enumerate() {
        if atomic {
            out.add(offset + f, v);
        } else {
            out.store(offset + f, v);
        }
    }
}

fn elem_range<const F: usize>(op: &Operands, shape: &crate::tensor::Shape, coords: &mut [usize], range: Range<usize>, out: &AtomicBuffer) {
    let (full, tail) = op.blocks::<F>();
    for i in range {
        shape.coords_of(i, coords);
        let x = op.data[i];
        let base = coords[op.mode] * op.rank;
        for j0 in full.clone().step_by(F) {
            let mut pi = [0.0; F];
            op.accumulate::<F>(coords, x, j0, &mut pi);
            emit::<F>(out, base + j0, &pi, true);
        }
        for j0 in tail.clone() {
            let mut pi = [0.0; 1];
            op.accumulate::<1>(coords, x, j0, &mut pi);
            emit::<1>(out, base + j0, &pi, true);
        }
    }
}

/// Hadamard product of one tile for columns `j0..j0+F`, elements in slice order.
#[inline(always)]
fn tile_product<const F: usize>(op: &Operands, cursor: &mut SliceCursor, tile: Tile, j0: usize) -> [f64; F] {
    let mut pi = [0.0; F];
    cursor.seek(tile.slice, tile.start);
    for e in 0..tile.len {
        if e > 0 {
            cursor.advance();
        }
        op.accumulate::<F>(cursor.coords(), op.data[cursor.linear()], j0, &mut pi);
    }
    pi
}

fn tile_range<const F: usize>(op: &Operands, geom: &TileGeometry, cursor: &mut SliceCursor, range: Range<usize>, out: &AtomicBuffer, atomic: bool) {
    let (full, tail) = op.blocks::<F>();
    for t in range {
        let tile = geom.tile(t);
        let base = tile.slice * op.rank;
        for j0 in full.clone().step_by(F) {
            let pi = tile_product::<F>(op, cursor, tile, j0);
            emit::<F>(out, base + j0, &pi, atomic);
        }
        for j0 in tail.clone() {
            let pi = tile_product::<1>(op, cursor, tile, j0);
            emit::<1>(out, base + j0, &pi, atomic);
        }
    }
}

fn run_elem<const F: usize>(y: &DenseTensor, op: &Operands, workers: usize, out: &AtomicBuffer) -> (usize, u64) {
    let shape = y.shape();
    let used = for_each_chunk(
        workers,
        shape.volume(),
        ELEM_CHUNK,
        || vec![0usize; shape.ndims()],
        |coords, range| elem_range::<F>(op, shape, coords, range, out),
    );
    (used, shape.volume() as u64)
}

fn run_tiles<const F: usize>(geom: &TileGeometry, op: &Operands, workers: usize, chunk: usize, out: &AtomicBuffer, atomic: bool) -> (usize, u64) {
    let used = for_each_chunk(
        workers,
        geom.tile_count(),
        chunk,
        || geom.cursor(),
        |cursor, range| tile_range::<F>(op, geom, cursor, range, out, atomic),
    );
    (used, geom.shape().volume() as u64 * op.block_count::<F>())
}

macro_rules! dispatch_block {
    ($block:expr, $func:ident($($arg:expr),*)) => {
        match $block {
            1 => $func::<1>($($arg),*),
            2 => $func::<2>($($arg),*),
            4 => $func::<4>($($arg),*),
            8 => $func::<8>($($arg),*),
            16 => $func::<16>($($arg),*),
            other => unreachable!("unsupported column block {other}"),
        }
    };
}

fn finish(y: &DenseTensor, m: &KruskalTensor, mode: usize, out: AtomicBuffer, workers: usize, visits: u64, atomic_updates: u64, tile_volume: Option<usize>) -> MttkrpOutput {
    let shape = y.shape();
    MttkrpOutput {
        g: out.into_matrix(shape.dim(mode), m.rank()),
        stats: MttkrpStats {
            element_visits: visits,
            atomic_updates,
            tile_volume,
            footprint_bytes: mem_infty(shape, m.rank(), 8),
            workers,
            ..MttkrpStats::default()
        },
    }
}

/// One work item per tensor element: recover the multi-index by division,
/// then atomically add `φ` into `G(i_k, ·)` column block by column block.
/// `N·R` logical atomic updates. `plan.variant` is not consulted.
pub fn mttkrp_elem(y: &DenseTensor, m: &KruskalTensor, plan: &MttkrpPlan) -> Result<MttkrpOutput> {
    check_inputs(y, m, plan.mode)?;
    plan.validate()?;
    let op = Operands::new(y, m, plan.mode);
    let out = AtomicBuffer::zeros(y.shape().dim(plan.mode) * m.rank());
    let workers = plan.resolved_workers();
    let (used, visits) = dispatch_block!(plan.unroll * plan.vector_width, run_elem(y, &op, workers, &out));
    let updates = y.shape().volume() as u64 * m.rank() as u64;
    Ok(finish(y, m, plan.mode, out, used, visits, updates, None))
}

/// One work item per mode-k slice: the owner accumulates the slice's
/// Hadamard product over all `N_S` elements and writes row `i_k` of G
/// without atomics. Bit-reproducible for any worker count.
pub fn mttkrp_slice(y: &DenseTensor, m: &KruskalTensor, plan: &MttkrpPlan) -> Result<MttkrpOutput> {
    check_inputs(y, m, plan.mode)?;
    plan.validate()?;
    let shape = y.shape();
    let n_s = shape.slice_volume(plan.mode);
    let geom = TileGeometry::with_indexing(shape, plan.mode, n_s, plan.slice_indexing)?;
    let op = Operands::new(y, m, plan.mode);
    let out = AtomicBuffer::zeros(shape.dim(plan.mode) * m.rank());
    let workers = plan.resolved_workers();
    let (used, visits) = dispatch_block!(plan.unroll * plan.vector_width, run_tiles(&geom, &op, workers, 1, &out, false));
    Ok(finish(y, m, plan.mode, out, used, visits, 0, Some(n_s)))
}

/// One work item per tile of `N_T` consecutive slice elements (the last tile
/// of a slice may be short): accumulate the tile product, then one atomic add
/// per column into `G(n, ·)`. `I_k·⌈N_S/N_T⌉·R` logical atomic updates.
///
/// `plan.tile_volume` defaults to `N_S`. With `plan.atomics == false` the adds
/// become stores, which requires `N_T = N_S`.
pub fn mttkrp_tile(y: &DenseTensor, m: &KruskalTensor, plan: &MttkrpPlan) -> Result<MttkrpOutput> {
    check_inputs(y, m, plan.mode)?;
    plan.validate()?;
    let shape = y.shape();
    let n_s = shape.slice_volume(plan.mode);
    let n_t = plan.tile_volume.unwrap_or(n_s);
    let geom = TileGeometry::with_indexing(shape, plan.mode, n_t, plan.slice_indexing)?;
    if !plan.atomics && geom.tiles_per_slice() != 1 {
        return Err(Error::Parameter(format!(
            "plain stores need one tile per slice, but N_T = {n_t} < N_S = {n_s}"
        )));
    }
    let op = Operands::new(y, m, plan.mode);
    let out = AtomicBuffer::zeros(shape.dim(plan.mode) * m.rank());
    let workers = plan.resolved_workers();
    let chunk = (TILE_CHUNK_ELEMENTS / n_t).max(1);
    let (used, visits) =
        dispatch_block!(plan.unroll * plan.vector_width, run_tiles(&geom, &op, workers, chunk, &out, plan.atomics));
    let updates = if plan.atomics { geom.tile_count() as u64 * m.rank() as u64 } else { 0 };
    Ok(finish(y, m, plan.mode, out, used, visits, updates, Some(n_t)))
}
