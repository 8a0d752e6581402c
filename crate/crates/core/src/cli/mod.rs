//! The `dense-mttkrp` command-line harness: tensor generation, kernel runs,
//! parameter sweeps, model tables and CP-ALS.
//!
//! Modes are 1-based on the command line and 0-based in the library.

mod als;
mod bench;
mod gen;
mod model;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kruskal::KruskalTensor;
use crate::perfmodel::MachineSpec;
use crate::tensor::{io as dten, DenseTensor, Shape};

pub use als::CpalsArgs;
pub use bench::{MttkrpArgs, SweepArgs};
pub use gen::GenArgs;
pub use model::ModelArgs;

/// Named tensor shapes. The full-size ones need `--allow-large`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub dims: &'static [usize],
    pub large: bool,
}

pub const PRESETS: [Preset; 4] = [
    Preset { name: "tearing", dims: &[401, 201, 12, 501], large: true },
    Preset { name: "island", dims: &[129, 129, 129, 12, 39], large: true },
    Preset { name: "tearing-small", dims: &[51, 26, 12, 51], large: false },
    Preset { name: "island-small", dims: &[17, 17, 17, 12, 9], large: false },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        Error::Parameter(format!("unknown preset {name:?}; choose one of {names:?}"))
    })
}

#[derive(Debug, Parser)]
#[command(name = "dense-mttkrp", version, about = "Matrix-free dense MTTKRP kernels, models and CP-ALS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic tensor in DTEN format.
    Gen(GenArgs),
    /// Time one MTTKRP variant and report measured and modelled performance as JSON.
    Mttkrp(MttkrpArgs),
    /// Sweep variants, modes, ranks and tile widths into CSV.
    Sweep(SweepArgs),
    /// Print memory footprints, device counts and predicted times.
    Model(ModelArgs),
    /// Run CP-ALS and write the fit trace and the fitted Kruskal tensor.
    Cpals(CpalsArgs),
}

/// Where the input tensor comes from: a DTEN file or a generated preset.
#[derive(Debug, Clone, Args)]
pub struct TensorSource {
    /// DTEN tensor file.
    #[arg(long, conflicts_with = "preset")]
    pub input: Option<PathBuf>,
    /// Generate a random-uniform tensor of a named shape instead of reading a file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Permit the full-size presets (several GiB in memory).
    #[arg(long)]
    pub allow_large: bool,
}

impl TensorSource {
    /// Loads the file, or generates the preset from stream 0 of `seed`.
    pub fn load(&self, seed: u64) -> Result<DenseTensor> {
        match (&self.input, &self.preset) {
            (Some(path), _) => dten::load(path),
            (None, Some(name)) => {
                let p = checked_preset(name, self.allow_large)?;
                Ok(DenseTensor::random_uniform(Shape::new(p.dims)?, &mut tensor_rng(seed)))
            }
            (None, None) => Err(Error::Parameter("give --input <file> or --preset <name>".into())),
        }
    }
}

pub(crate) fn checked_preset(name: &str, allow_large: bool) -> Result<Preset> {
    let p = preset(name)?;
    if p.large && !allow_large {
        return Err(Error::Parameter(format!(
            "preset {name:?} is full size; pass --allow-large to use it"
        )));
    }
    Ok(p)
}

/// Random stream for tensor values.
pub fn tensor_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stream for factor matrices, independent of the tensor stream.
pub fn factor_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub(crate) fn random_factors(dims: &[usize], rank: usize, seed: u64) -> Result<KruskalTensor> {
    KruskalTensor::random(dims, rank, &mut factor_rng(seed))
}

/// A builtin machine name (`intel-8480p`, `nvidia-h100`) or a JSON file path.
pub fn load_machine(spec: &str) -> Result<MachineSpec> {
    match MachineSpec::builtin(spec) {
        Some(m) => Ok(m),
        None => MachineSpec::load(spec),
    }
}

/// Converts 1-based command-line modes to 0-based, defaulting to all modes.
pub(crate) fn resolve_modes(modes: &[usize], ndims: usize) -> Result<Vec<usize>> {
    if modes.is_empty() {
        return Ok((0..ndims).collect());
    }
    modes
        .iter()
        .map(|&m| {
            if m >= 1 && m <= ndims {
                Ok(m - 1)
            } else {
                Err(Error::Mode { mode: m, ndims })
            }
        })
        .collect()
}

/// Writes pretty JSON to `path`, or to stdout when `path` is `None`.
pub(crate) fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

/// Float formatted with 17 significant digits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Runs one parsed command line. `Ok(false)` means the command completed
/// but a requested check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(a) => gen::run(&a).map(|_| true),
        Command::Mttkrp(a) => bench::run_mttkrp(&a),
        Command::Sweep(a) => bench::run_sweep(&a).map(|_| true),
        Command::Model(a) => model::run(&a).map(|_| true),
        Command::Cpals(a) => als::run(&a).map(|_| true),
    }
}

/// Parses `args` (including the program name) and runs them, returning the
/// process exit code: 0 success, 1 failed verification, 2 validation
/// error, 3 resource error, 4 I/O or format error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(preset("tearing").unwrap().dims, &[401, 201, 12, 501]);
        assert!(checked_preset("island", false).is_err());
        assert!(checked_preset("island", true).is_ok());
        assert!(checked_preset("island-small", false).is_ok());
        assert!(preset("cube").is_err());
    }

    #[test]
    fn modes_are_one_based() {
        assert_eq!(resolve_modes(&[], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(resolve_modes(&[3, 1], 3).unwrap(), vec![2, 0]);
        assert!(resolve_modes(&[0], 3).is_err());
        assert!(resolve_modes(&[4], 3).is_err());
    }

    #[test]
    fn streams_are_independent() {
        use rand::Rng;
        let a: f64 = tensor_rng(1).random();
        let b: f64 = factor_rng(1).random();
        assert_ne!(a, b);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(1.0 / 3.0), "3.3333333333333331e-1");
    }
}
