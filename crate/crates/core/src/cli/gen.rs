use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::Rng;
use serde::Serialize;

use super::{checked_preset, emit_json, factor_rng, tensor_rng};
use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::tensor::{io as dten, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorKind {
    /// i.i.d. uniform on [0, 1), streamed to disk without materializing.
    RandomUniform,
    /// A random rank-R Kruskal tensor plus uniform noise at the given SNR.
    KruskalPlusNoise,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Comma-separated extents, e.g. 40,30,20.
    #[arg(long, value_delimiter = ',', required_unless_present = "preset", conflicts_with = "preset")]
    pub shape: Vec<usize>,
    /// Named shape: tearing, island, tearing-small, island-small.
    #[arg(long)]
    pub preset: Option<String>,
    /// Permit the full-size presets.
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long, value_enum, default_value_t = TensorKind::RandomUniform)]
    pub kind: TensorKind,
    /// Rank of the Kruskal part (kruskal-plus-noise).
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Signal-to-noise ratio in dB (kruskal-plus-noise); `inf` adds no noise.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output DTEN file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the noise-free Kruskal tensor here (kruskal-plus-noise).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Serialize)]
struct GenSummary {
    path: PathBuf,
    kind: TensorKind,
    dims: Vec<usize>,
    data_bytes: u64,
    file_bytes: u64,
    seed: u64,
}

pub(super) fn run(args: &GenArgs) -> Result<()> {
    let dims = match &args.preset {
        Some(name) => checked_preset(name, args.allow_large)?.dims.to_vec(),
        None => args.shape.clone(),
    };
    let shape = Shape::new(dims)?;
    match args.kind {
        TensorKind::RandomUniform => {
            let mut rng = tensor_rng(args.seed);
            let w = BufWriter::new(File::create(&args.out)?);
            dten::write_streaming(w, &shape, |buf| buf.iter_mut().for_each(|x| *x = rng.random::<f64>()))?;
        }
        TensorKind::KruskalPlusNoise => {
            if args.rank == 0 {
                return Err(Error::Parameter("--rank must be at least 1".into()));
            }
            if args.snr.is_nan() {
                return Err(Error::Parameter("--snr must be a number or inf".into()));
            }
            let truth = KruskalTensor::random(shape.dims(), args.rank, &mut factor_rng(args.seed))?;
            let mut y = truth.full()?;
            if args.snr.is_finite() {
                let mut rng = tensor_rng(args.seed);
                let noise: Vec<f64> = (0..shape.volume()).map(|_| rng.random::<f64>() - 0.5).collect();
                let noise_norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
                let scale = y.norm() * 10f64.powf(-args.snr / 20.0) / noise_norm;
                y.data_mut().iter_mut().zip(&noise).for_each(|(x, e)| *x += scale * e);
            }
            dten::save(&args.out, &y)?;
            if let Some(path) = &args.truth {
                truth.save_text(path)?;
            }
        }
    }
    let summary = GenSummary {
        path: args.out.clone(),
        kind: args.kind,
        dims: shape.dims().to_vec(),
        data_bytes: dten::payload_len(&shape),
        file_bytes: std::fs::metadata(&args.out)?.len(),
        seed: args.seed,
    };
    emit_json(&summary, None)
}
