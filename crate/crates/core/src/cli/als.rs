use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{emit_json, TensorSource};
use crate::cpals::{cp_als, AlsConfig, AlsTiming};
use crate::error::Result;
use crate::mttkrp::Variant;

#[derive(Debug, Clone, Args)]
pub struct CpalsArgs {
    #[command(flatten)]
    pub source: TensorSource,
    #[arg(long)]
    pub rank: usize,
    /// Absolute fit-change tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value = "tile")]
    pub variant: Variant,
    /// TILE edge length; N_T = width^(d-1) per mode, clamped to the slice volume.
    #[arg(long)]
    pub tile_width: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub unroll: usize,
    /// Worker threads; 0 uses every available core.
    #[arg(long, env = "MTTKRP_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Seed of the initial factors (and of preset tensors).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON trace path; stdout when omitted.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Fitted Kruskal tensor in KTEN text format.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Serialize)]
struct Breakdown {
    /// Seconds in MTTKRP calls.
    mttkrp: f64,
    /// Seconds in everything else: Gram products, solves, normalization, fit.
    other_operations: f64,
    mttkrp_fraction: f64,
    phases: AlsTiming,
}

#[derive(Serialize)]
struct CpalsReport {
    dims: Vec<usize>,
    rank: usize,
    variant: Variant,
    tol: f64,
    max_iters: usize,
    seed: u64,
    iterations: usize,
    converged: bool,
    final_fit: f64,
    fits: Vec<f64>,
    mttkrp_seconds: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    timing: Breakdown,
}

pub(super) fn run(args: &CpalsArgs) -> Result<()> {
    let y = args.source.load(args.seed)?;
    let mut cfg = AlsConfig::new(args.rank)
        .with_variant(args.variant)
        .with_tol(args.tol)
        .with_max_iters(args.max_iters)
        .with_seed(args.seed)
        .with_workers(args.workers);
    cfg.plan.unroll = args.unroll;
    cfg.tile_width = args.tile_width;
    let (model, trace) = cp_als(&y, &cfg)?;
    if let Some(path) = &args.model {
        model.save_text(path)?;
    }
    let t = &trace.timing;
    let report = CpalsReport {
        dims: y.shape().dims().to_vec(),
        rank: args.rank,
        variant: args.variant,
        tol: args.tol,
        max_iters: args.max_iters,
        seed: args.seed,
        iterations: trace.iterations(),
        converged: trace.converged,
        final_fit: trace.final_fit().unwrap_or(f64::NAN),
        timing: Breakdown {
            mttkrp: t.mttkrp,
            other_operations: t.total - t.mttkrp,
            mttkrp_fraction: if t.total > 0.0 { t.mttkrp / t.total } else { 0.0 },
            phases: t.clone(),
        },
        fits: trace.fits,
        mttkrp_seconds: trace.mttkrp_seconds,
        lambda: trace.lambda,
    };
    emit_json(&report, args.trace.as_deref())
}
