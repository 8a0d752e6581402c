//! Mode-k MTTKRP: `G(n, j) = λ_j Σ_{i: i_k = n} Y(i) ∏_{m≠k} A_m(i_m, j)`.
//!
//! Two oracles ([`mttkrp_reference`], [`mttkrp_full_krp`]), the matrix-based
//! [`mttkrp_gemm`] baseline and three matrix-free parallel kernels:
//!
//! * [`mttkrp_elem`]: one work item per tensor element, `N·R` atomic adds.
//! * [`mttkrp_slice`]: one work item per mode-k slice, conflict-free row writes.
//! * [`mttkrp_tile`]: one work item per tile of `N_T` slice elements, one
//!   atomic add per tile and column.
//!
//! Atomic adds are hardware compare-and-swap loops on the `f64` bit pattern,
//! so multi-worker results differ from the serial order only by reassociation.

mod gemm;
mod heuristic;
mod kernels;
mod reference;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use gemm::{gemm_footprint_bytes, gemm_scratch_len, mttkrp_gemm};
pub use heuristic::{tile_heuristic, tile_volume_for_width, TileChoice};
pub use kernels::{mttkrp_elem, mttkrp_slice, mttkrp_tile, SUPPORTED_UNROLL};
pub use reference::{mttkrp_full_krp, mttkrp_full_krp_with_cap, mttkrp_reference, DEFAULT_KRP_BYTE_CAP};

use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::tensor::{DenseTensor, Matrix, SliceIndexing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Reference,
    FullKrp,
    Gemm,
    Elem,
    Slice,
    Tile,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Reference, Variant::FullKrp, Variant::Gemm, Variant::Elem, Variant::Slice, Variant::Tile];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Reference => "reference",
            Variant::FullKrp => "full-krp",
            Variant::Gemm => "gemm",
            Variant::Elem => "elem",
            Variant::Slice => "slice",
            Variant::Tile => "tile",
        }
    }

    /// Whether the variant runs on the worker pool.
    pub fn is_parallel(self) -> bool {
        matches!(self, Variant::Elem | Variant::Slice | Variant::Tile)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown MTTKRP variant {s:?}")))
    }
}

/// Everything needed to run one MTTKRP.
///
/// `team_width` (b_x) and `vector_width` (b_y) describe the league/team/vector
/// hierarchy; on the CPU pool each work item is one team of one thread and
/// the vector level is the unrolled loop over `unroll` (F) columns, so both
/// default to 1 and a column block spans `unroll · vector_width` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MttkrpPlan {
    pub variant: Variant,
    /// 0-based mode k.
    pub mode: usize,
    pub unroll: usize,
    pub team_width: usize,
    pub vector_width: usize,
    /// TILE only; `None` means the whole slice.
    pub tile_volume: Option<usize>,
    /// Worker threads; 0 picks the machine's available parallelism.
    pub workers: usize,
    /// TILE only; `false` replaces atomic adds by plain stores, which is only
    /// valid with one tile per slice.
    pub atomics: bool,
    pub slice_indexing: SliceIndexing,
}

impl MttkrpPlan {
    pub fn new(variant: Variant, mode: usize) -> Self {
        MttkrpPlan {
            variant,
            mode,
            unroll: 4,
            team_width: 1,
            vector_width: 1,
            tile_volume: None,
            workers: 0,
            atomics: true,
            slice_indexing: SliceIndexing::Auto,
        }
    }

    pub fn with_tile_volume(mut self, tile_volume: usize) -> Self {
        self.tile_volume = Some(tile_volume);
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_unroll(mut self, unroll: usize) -> Self {
        self.unroll = unroll;
        self
    }

    pub fn without_atomics(mut self) -> Self {
        self.atomics = false;
        self
    }

    pub fn with_slice_indexing(mut self, indexing: SliceIndexing) -> Self {
        self.slice_indexing = indexing;
        self
    }

    /// Worker count after resolving 0 to the available parallelism.
    pub fn resolved_workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.team_width == 0 || self.vector_width == 0 {
            return Err(Error::Parameter("team and vector widths must be positive".into()));
        }
        let block = self.unroll * self.vector_width;
        if !SUPPORTED_UNROLL.contains(&block) {
            return Err(Error::Parameter(format!(
                "column block F·b_y = {block} is not one of {SUPPORTED_UNROLL:?}"
            )));
        }
        Ok(())
    }
}

/// Counters gathered while a kernel runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MttkrpStats {
    /// Tensor element reads, counting re-reads across column blocks.
    pub element_visits: u64,
    /// Logical atomic updates to the output matrix.
    pub atomic_updates: u64,
    /// Tile volume actually used (SLICE reports the slice volume).
    pub tile_volume: Option<usize>,
    /// Bytes the algorithm holds: tensor, factors or Khatri-Rao blocks, output.
    pub footprint_bytes: u128,
    pub workers: usize,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

mod duration_secs {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
}

/// The `I_k × R` row-major result and run statistics.
#[derive(Clone, Debug)]
pub struct MttkrpOutput {
    pub g: Matrix,
    pub stats: MttkrpStats,
}

pub(crate) fn check_inputs(y: &DenseTensor, m: &KruskalTensor, mode: usize) -> Result<()> {
    y.shape().check_mode(mode)?;
    m.check_shape(y.shape())
}

/// Runs the variant selected by `plan`, timing the whole call.
pub fn mttkrp(y: &DenseTensor, m: &KruskalTensor, plan: &MttkrpPlan) -> Result<MttkrpOutput> {
    let start = Instant::now();
    let mut out = match plan.variant {
        Variant::Reference => mttkrp_reference(y, m, plan.mode)?,
        Variant::FullKrp => mttkrp_full_krp(y, m, plan.mode)?,
        Variant::Gemm => {
            check_inputs(y, m, plan.mode)?;
            let mut scratch = vec![0.0; gemm_scratch_len(y.shape(), m.rank(), plan.mode)];
            mttkrp_gemm(y, m, plan.mode, &mut scratch)?
        }
        Variant::Elem => mttkrp_elem(y, m, plan)?,
        Variant::Slice => mttkrp_slice(y, m, plan)?,
        Variant::Tile => mttkrp_tile(y, m, plan)?,
    };
    out.stats.elapsed = start.elapsed();
    Ok(out)
}
