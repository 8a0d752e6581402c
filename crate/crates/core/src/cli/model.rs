use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use super::{emit_json, load_machine, preset, resolve_modes};
use crate::error::{Error, Result};
use crate::mttkrp::{tile_heuristic, tile_volume_for_width};
use crate::perfmodel::{
    device_count, flops, mem_gemm, mem_gemm_worst, mem_infty, mem_zero, mem_zero_lm, predict_times, MachineSpec,
    PredictedTimes,
};
use crate::tensor::{io as dten, Shape};

const GIB: f64 = (1u64 << 30) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Comma-separated extents.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["preset", "input"])]
    pub shape: Vec<usize>,
    /// Named shape (no tensor is allocated, so full-size presets are fine).
    #[arg(long, conflicts_with = "input")]
    pub preset: Option<String>,
    /// Take the shape from a DTEN header.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub ranks: Vec<usize>,
    /// Comma-separated 1-based modes; all modes when omitted.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<usize>,
    /// TILE edge length for the TILE predictions; the machine heuristic when omitted.
    #[arg(long)]
    pub tile_width: Option<usize>,
    /// Builtin machine name (intel-8480p, nvidia-h100) or machine JSON path.
    #[arg(long, default_value = "intel-8480p")]
    pub machine: String,
    #[arg(long, value_enum, default_value_t = ModelFormat::Table)]
    pub format: ModelFormat,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Traffic-model predictions for the three matrix-free variants: ELEM is
/// the `N_T = 1` limit, SLICE the `N_T = N_S` limit.
#[derive(Debug, Clone, Serialize)]
pub struct ModePrediction {
    pub mode: usize,
    pub tile_volume: usize,
    pub flops: u128,
    pub gemm_bytes: u128,
    pub elem: PredictedTimes,
    pub slice: PredictedTimes,
    pub tile: PredictedTimes,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankModel {
    pub rank: usize,
    pub matrix_free_bytes: u128,
    pub gemm_worst_bytes: u128,
    /// 1-based.
    pub gemm_worst_mode: usize,
    pub matrix_free_to_gemm: f64,
    pub matrix_free_devices: u128,
    pub gemm_devices: u128,
    pub modes: Vec<ModePrediction>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub dims: Vec<usize>,
    pub machine: String,
    pub tensor_bytes: u128,
    pub ranks: Vec<RankModel>,
}

fn times(shape: &Shape, rank: usize, mode: usize, tile_volume: usize, machine: &MachineSpec) -> PredictedTimes {
    let s_f = machine.s_f_bytes;
    let f = flops(shape, rank);
    predict_times(
        f,
        mem_zero(shape, rank, mode, tile_volume, s_f),
        mem_infty(shape, rank, s_f),
        mem_zero_lm(shape, rank, mode, tile_volume, machine.l, s_f),
        machine,
    )
}

pub fn model_report(shape: &Shape, ranks: &[usize], modes: &[usize], tile_width: Option<usize>, machine: &MachineSpec) -> Result<ModelReport> {
    let s_f = machine.s_f_bytes;
    let heuristic = if tile_width.is_none() && shape.ndims() >= 2 { Some(tile_heuristic(shape.dims(), machine)?) } else { None };
    let mut out = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let matrix_free = mem_infty(shape, rank, s_f);
        let (worst_mode, worst) = mem_gemm_worst(shape, rank, s_f);
        let mut predictions = Vec::with_capacity(modes.len());
        for &mode in modes {
            let n_s = shape.slice_volume(mode);
            let tile_volume = match (tile_width, heuristic) {
                (Some(w), _) => tile_volume_for_width(shape, mode, w)?,
                (None, Some(h)) => h.tile_volume.clamp(1, n_s),
                (None, None) => 1,
            };
            predictions.push(ModePrediction {
                mode: mode + 1,
                tile_volume,
                flops: flops(shape, rank),
                gemm_bytes: mem_gemm(shape, rank, mode, s_f),
                elem: times(shape, rank, mode, 1, machine),
                slice: times(shape, rank, mode, n_s, machine),
                tile: times(shape, rank, mode, tile_volume, machine),
            });
        }
        out.push(RankModel {
            rank,
            matrix_free_bytes: matrix_free,
            gemm_worst_bytes: worst,
            gemm_worst_mode: worst_mode + 1,
            matrix_free_to_gemm: matrix_free as f64 / worst as f64,
            matrix_free_devices: device_count(matrix_free, machine),
            gemm_devices: device_count(worst, machine),
            modes: predictions,
        });
    }
    Ok(ModelReport {
        dims: shape.dims().to_vec(),
        machine: machine.name.clone(),
        tensor_bytes: s_f as u128 * shape.volume() as u128,
        ranks: out,
    })
}

pub fn render_table(report: &ModelReport, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "shape {:?} on {}: tensor {:.2} GiB", report.dims, report.machine, report.tensor_bytes as f64 / GIB)?;
    for r in &report.ranks {
        writeln!(w)?;
        writeln!(
            w,
            "R = {}: matrix-free {:.2} GiB ({} devices), GEMM worst {:.2} GiB at mode {} ({} devices), ratio {:.2}%",
            r.rank,
            r.matrix_free_bytes as f64 / GIB,
            r.matrix_free_devices,
            r.gemm_worst_bytes as f64 / GIB,
            r.gemm_worst_mode,
            r.gemm_devices,
            100.0 * r.matrix_free_to_gemm
        )?;
        writeln!(
            w,
            "{:>5} {:>10} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11}",
            "mode", "N_T", "GEMM GiB", "TInf s", "ELEM T0", "SLICE T0", "SLICE T0LM", "TILE T0", "TILE T0LM"
        )?;
        for m in &r.modes {
            writeln!(
                w,
                "{:>5} {:>10} {:>11.2} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e}",
                m.mode,
                m.tile_volume,
                m.gemm_bytes as f64 / GIB,
                m.tile.t_inf,
                m.elem.t0,
                m.slice.t0,
                m.slice.t0_lm,
                m.tile.t0,
                m.tile.t0_lm
            )?;
        }
    }
    Ok(())
}

pub(super) fn run(args: &ModelArgs) -> Result<()> {
    let shape = match (&args.input, &args.preset) {
        (Some(path), _) => dten::read_header(&mut BufReader::new(File::open(path)?))?,
        (None, Some(name)) => Shape::new(preset(name)?.dims)?,
        (None, None) if !args.shape.is_empty() => Shape::new(args.shape.clone())?,
        _ => return Err(Error::Parameter("give --shape, --preset or --input".into())),
    };
    let machine = load_machine(&args.machine)?;
    let modes = resolve_modes(&args.modes, shape.ndims())?;
    let report = model_report(&shape, &args.ranks, &modes, args.tile_width, &machine)?;
    match args.format {
        ModelFormat::Json => emit_json(&report, args.output.as_deref()),
        ModelFormat::Table => {
            match &args.output {
                Some(p) => render_table(&report, io::BufWriter::new(File::create(p)?))?,
                None => render_table(&report, io::stdout().lock())?,
            }
            Ok(())
        }
    }
}
