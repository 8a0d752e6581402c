use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use super::{emit_json, fmt_f64, load_machine, random_factors, resolve_modes, TensorSource};
use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::mttkrp::{mttkrp, mttkrp_reference, tile_heuristic, tile_volume_for_width, MttkrpOutput, MttkrpPlan, TileChoice, Variant};
use crate::perfmodel::{throughput, MachineSpec, PerfReport};
use crate::tensor::{DenseTensor, Matrix, Shape};

/// Relative Frobenius error above which `--verify` fails.
pub const VERIFY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Column block width F of the unrolled inner loop (1, 2, 4, 8 or 16).
    #[arg(long, default_value_t = 4)]
    pub unroll: usize,
    /// Worker threads; 0 uses every available core.
    #[arg(long, env = "MTTKRP_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Builtin machine name (intel-8480p, nvidia-h100) or machine JSON path.
    #[arg(long, default_value = "intel-8480p")]
    pub machine: String,
    /// Timed repetitions.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Untimed runs before the timed ones.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Seed for preset tensors (stream 0) and factor matrices (stream 1).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct MttkrpArgs {
    #[command(flatten)]
    pub source: TensorSource,
    #[arg(long, default_value = "tile")]
    pub variant: Variant,
    /// 1-based mode.
    #[arg(long, default_value_t = 1)]
    pub mode: usize,
    #[arg(long, default_value_t = 32)]
    pub rank: usize,
    /// TILE edge length; N_T = width^(d-1) clamped to the slice volume.
    /// Omitted: chosen from the machine's cache size.
    #[arg(long)]
    pub tile_width: Option<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Compare every repetition against the serial reference.
    #[arg(long)]
    pub verify: bool,
    /// Perturb the result before verification (self-test of --verify).
    #[arg(long, hide = true)]
    pub corrupt: bool,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: TensorSource,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_value = "tile")]
    pub variants: Vec<Variant>,
    /// Comma-separated 1-based modes; all modes when omitted.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub ranks: Vec<usize>,
    /// TILE edge lengths; the machine heuristic when omitted. Other variants ignore them.
    #[arg(long, value_delimiter = ',')]
    pub tile_widths: Vec<usize>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Raw CSV, one row per repetition.
    #[arg(long)]
    pub out: PathBuf,
    /// Mode-averaged CSV; `<stem of --out>-aggregate.csv` next to it when omitted.
    #[arg(long)]
    pub aggregate: Option<PathBuf>,
}

/// Tile settings resolved for one (variant, mode).
struct TileSetting {
    width: Option<usize>,
    heuristic: Option<TileChoice>,
    /// Tile volume handed to the kernel (TILE only).
    plan_volume: Option<usize>,
    /// Tile volume the traffic model is evaluated at.
    model_volume: usize,
}

fn tile_setting(shape: &Shape, mode: usize, variant: Variant, width: Option<usize>, machine: &MachineSpec) -> Result<TileSetting> {
    let n_s = shape.slice_volume(mode);
    match variant {
        Variant::Tile => {
            let (width, heuristic, volume) = match width {
                Some(w) => (w, None, tile_volume_for_width(shape, mode, w)?),
                None if shape.ndims() >= 2 => {
                    let choice = tile_heuristic(shape.dims(), machine)?;
                    (choice.width, Some(choice), choice.tile_volume.clamp(1, n_s))
                }
                None => (1, None, 1),
            };
            Ok(TileSetting { width: Some(width), heuristic, plan_volume: Some(volume), model_volume: volume })
        }
        Variant::Elem => Ok(TileSetting { width: None, heuristic: None, plan_volume: None, model_volume: 1 }),
        _ => Ok(TileSetting { width: None, heuristic: None, plan_volume: None, model_volume: n_s }),
    }
}

fn relative_error(g: &Matrix, reference: &Matrix) -> f64 {
    let dist = g.distance(reference).expect("same shape");
    let norm = reference.frobenius_norm();
    if norm > 0.0 {
        dist / norm
    } else {
        dist
    }
}

fn corrupt(g: &mut Matrix) {
    let bump = 1e-9 * g.frobenius_norm() + 1e-300;
    if let Some(x) = g.data_mut().first_mut() {
        *x += bump;
    }
}

/// Timed repetitions of one configuration.
struct Timed {
    seconds: Vec<f64>,
    last: MttkrpOutput,
    max_rel_err: Option<f64>,
}

fn time_runs(
    y: &DenseTensor,
    m: &KruskalTensor,
    plan: &MttkrpPlan,
    warmup: usize,
    reps: usize,
    reference: Option<&Matrix>,
    corrupted: bool,
) -> Result<Timed> {
    for _ in 0..warmup {
        mttkrp(y, m, plan)?;
    }
    let mut seconds = Vec::with_capacity(reps);
    let mut max_rel_err: Option<f64> = None;
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let mut out = mttkrp(y, m, plan)?;
        seconds.push(start.elapsed().as_secs_f64());
        if corrupted {
            corrupt(&mut out.g);
        }
        if let Some(r) = reference {
            let err = relative_error(&out.g, r);
            max_rel_err = Some(max_rel_err.map_or(err, |e: f64| e.max(err)));
        }
        last = Some(out);
    }
    Ok(Timed { seconds, last: last.expect("at least one repetition"), max_rel_err })
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::Parameter("--reps must be at least 1".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct MttkrpReport {
    variant: Variant,
    dims: Vec<usize>,
    mode: usize,
    rank: usize,
    unroll: usize,
    workers: usize,
    machine: String,
    tile_width: Option<usize>,
    tile_volume: Option<usize>,
    heuristic: Option<TileChoice>,
    warmup: usize,
    repetitions: usize,
    times: Vec<f64>,
    time_min: f64,
    time_mean: f64,
    /// From the mean time.
    gflops: f64,
    /// From the minimum time.
    gflops_best: f64,
    mops0: f64,
    mops_inf: f64,
    model: PerfReport,
    atomic_updates: u64,
    element_visits: u64,
    footprint_bytes: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_max_rel_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verified: Option<bool>,
}

pub(super) fn run_mttkrp(args: &MttkrpArgs) -> Result<bool> {
    let k = &args.kernel;
    check_reps(k.reps)?;
    let machine = load_machine(&k.machine)?;
    let y = args.source.load(k.seed)?;
    let shape = y.shape().clone();
    let mode = resolve_modes(&[args.mode], shape.ndims())?[0];
    let m = random_factors(shape.dims(), args.rank, k.seed)?;
    let tile = tile_setting(&shape, mode, args.variant, args.tile_width, &machine)?;
    let mut plan = MttkrpPlan::new(args.variant, mode).with_unroll(k.unroll).with_workers(k.workers);
    plan.tile_volume = tile.plan_volume;

    let reference = if args.verify { Some(mttkrp_reference(&y, &m, mode)?.g) } else { None };
    let timed = time_runs(&y, &m, &plan, k.warmup, k.reps, reference.as_ref(), args.corrupt)?;
    let time_min = timed.seconds.iter().copied().fold(f64::INFINITY, f64::min);
    let time_mean = timed.seconds.iter().sum::<f64>() / timed.seconds.len() as f64;
    let model = PerfReport::model(&shape, args.rank, mode, tile.model_volume, &machine).with_measured(time_mean);
    let best = throughput(model.f, model.m0, model.m_inf, time_min);
    let verified = timed.max_rel_err.map(|e| e <= VERIFY_TOLERANCE);
    let stats = &timed.last.stats;
    let report = MttkrpReport {
        variant: args.variant,
        dims: shape.dims().to_vec(),
        mode: mode + 1,
        rank: args.rank,
        unroll: k.unroll,
        workers: stats.workers,
        machine: machine.name.clone(),
        tile_width: tile.width,
        tile_volume: tile.plan_volume,
        heuristic: tile.heuristic,
        warmup: k.warmup,
        repetitions: k.reps,
        time_min,
        time_mean,
        gflops: model.gflops.expect("measured"),
        gflops_best: best.gflops,
        mops0: model.mops0.expect("measured"),
        mops_inf: model.mops_inf.expect("measured"),
        atomic_updates: stats.atomic_updates,
        element_visits: stats.element_visits,
        footprint_bytes: stats.footprint_bytes,
        model,
        times: timed.seconds,
        oracle_max_rel_err: timed.max_rel_err,
        verified,
    };
    emit_json(&report, args.output.as_deref())?;
    if verified == Some(false) {
        eprintln!(
            "verification failed: relative error {:e} exceeds {VERIFY_TOLERANCE:e}",
            report.oracle_max_rel_err.unwrap_or(f64::NAN)
        );
        return Ok(false);
    }
    Ok(true)
}

pub const SWEEP_COLUMNS: [&str; 13] = [
    "variant",
    "mode",
    "rank",
    "tile_width",
    "N_T",
    "time_s",
    "gflops",
    "mops0",
    "mopsInf",
    "T0",
    "T0LM",
    "TInf",
    "atomic_updates",
];

pub const AGGREGATE_COLUMNS: [&str; 5] = ["variant", "rank", "tile_width", "gflops", "best"];

fn default_aggregate_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    out.with_file_name(format!("{stem}-aggregate.csv"))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

#[derive(Serialize)]
struct SweepSummary {
    rows: usize,
    aggregate_rows: usize,
    out: PathBuf,
    aggregate: PathBuf,
}

pub(super) fn run_sweep(args: &SweepArgs) -> Result<()> {
    let k = &args.kernel;
    check_reps(k.reps)?;
    if args.variants.is_empty() || args.ranks.is_empty() {
        return Err(Error::Parameter("need at least one variant and one rank".into()));
    }
    let machine = load_machine(&k.machine)?;
    let y = args.source.load(k.seed)?;
    let shape = y.shape().clone();
    let modes = resolve_modes(&args.modes, shape.ndims())?;
    let aggregate_path = args.aggregate.clone().unwrap_or_else(|| default_aggregate_path(&args.out));

    let mut raw = csv::Writer::from_path(&args.out).map_err(csv_error)?;
    raw.write_record(SWEEP_COLUMNS).map_err(csv_error)?;
    let mut rows = 0;
    // (variant, rank, width) → per-mode mean gflops, in sweep order.
    let mut per_mode: Vec<((Variant, usize, Option<usize>), Vec<f64>)> = Vec::new();

    for &variant in &args.variants {
        for &rank in &args.ranks {
            let m = random_factors(shape.dims(), rank, k.seed)?;
            let widths: Vec<Option<usize>> = if variant == Variant::Tile && !args.tile_widths.is_empty() {
                args.tile_widths.iter().map(|&w| Some(w)).collect()
            } else {
                vec![None]
            };
            for width in widths {
                let mut mode_gflops = Vec::with_capacity(modes.len());
                let mut label = width;
                for &mode in &modes {
                    let tile = tile_setting(&shape, mode, variant, width, &machine)?;
                    label = tile.width;
                    let mut plan = MttkrpPlan::new(variant, mode).with_unroll(k.unroll).with_workers(k.workers);
                    plan.tile_volume = tile.plan_volume;
                    let timed = time_runs(&y, &m, &plan, k.warmup, k.reps, None, false)?;
                    let model = PerfReport::model(&shape, rank, mode, tile.model_volume, &machine);
                    let mut sum = 0.0;
                    for &t in &timed.seconds {
                        let rate = throughput(model.f, model.m0, model.m_inf, t);
                        sum += rate.gflops;
                        raw.write_record([
                            variant.name().to_string(),
                            (mode + 1).to_string(),
                            rank.to_string(),
                            tile.width.filter(|_| variant == Variant::Tile).map_or(String::new(), |w| w.to_string()),
                            tile.plan_volume.map_or(String::new(), |v| v.to_string()),
                            fmt_f64(t),
                            fmt_f64(rate.gflops),
                            fmt_f64(rate.mops0),
                            fmt_f64(rate.mops_inf),
                            fmt_f64(model.t0),
                            fmt_f64(model.t0_lm),
                            fmt_f64(model.t_inf),
                            timed.last.stats.atomic_updates.to_string(),
                        ])
                        .map_err(csv_error)?;
                        rows += 1;
                    }
                    mode_gflops.push(sum / timed.seconds.len() as f64);
                }
                per_mode.push(((variant, rank, label.filter(|_| variant == Variant::Tile)), mode_gflops));
            }
        }
    }
    raw.flush()?;

    let aggregated: Vec<_> = per_mode
        .iter()
        .map(|(key, g)| (*key, g.iter().sum::<f64>() / g.len() as f64))
        .collect();
    let mut best: BTreeMap<(String, usize), (usize, f64)> = BTreeMap::new();
    for (i, ((variant, rank, _), g)) in aggregated.iter().enumerate() {
        let entry = best.entry((variant.name().to_string(), *rank)).or_insert((i, *g));
        if *g > entry.1 {
            *entry = (i, *g);
        }
    }
    let mut agg = csv::Writer::from_path(&aggregate_path).map_err(csv_error)?;
    agg.write_record(AGGREGATE_COLUMNS).map_err(csv_error)?;
    for (i, ((variant, rank, width), g)) in aggregated.iter().enumerate() {
        let is_best = best[&(variant.name().to_string(), *rank)].0 == i;
        agg.write_record([
            variant.name().to_string(),
            rank.to_string(),
            width.map_or(String::new(), |w| w.to_string()),
            fmt_f64(*g),
            u8::from(is_best).to_string(),
        ])
        .map_err(csv_error)?;
    }
    agg.flush()?;

    emit_json(
        &SweepSummary { rows, aggregate_rows: aggregated.len(), out: args.out.clone(), aggregate: aggregate_path },
        None,
    )
}
