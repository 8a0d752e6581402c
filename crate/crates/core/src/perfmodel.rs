//! Analytic flop, memory-traffic and time models for an ideal machine with a
//! multi-level cache.
//!
//! Byte counts are exact integers (`u128`); the only fractional model is the
//! 0,LM-cache traffic, which divides the factor-matrix reads by the cache to
//! memory bandwidth ratio `l`. When the tile volume does not divide the slice
//! volume, `⌈N_S/N_T⌉` tiles per slice are charged.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Peak rates and cache parameters of one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub name: String,
    /// Peak flops per second.
    pub tau_f: f64,
    /// Peak memory bandwidth in bytes per second.
    pub tau_m: f64,
    /// Mid-level cache bandwidth over memory bandwidth.
    pub l: f64,
    /// Mid-level cache bytes per cache unit (SM or core).
    pub s_lm_bytes: u64,
    /// Maximum tiles resident per cache unit.
    pub c_tiles: u64,
    pub s_f_bytes: u64,
    pub device_capacity_bytes: u64,
}

const INTEL_8480P: &str = include_str!("../machines/intel-8480p.json");
const NVIDIA_H100: &str = include_str!("../machines/nvidia-h100.json");

impl MachineSpec {
    pub fn from_json(text: &str) -> Result<MachineSpec> {
        let spec: MachineSpec =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("machine spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MachineSpec> {
        MachineSpec::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.tau_f, self.tau_m, self.l].iter().all(|x| x.is_finite() && *x > 0.0)
            && self.s_lm_bytes > 0
            && self.c_tiles > 0
            && self.s_f_bytes > 0
            && self.device_capacity_bytes > 0;
        if !positive {
            return Err(Error::Parameter(format!("machine spec {:?} has non-positive fields", self.name)));
        }
        if self.l < 1.0 {
            return Err(Error::Parameter(format!("cache bandwidth ratio {} is below 1", self.l)));
        }
        Ok(())
    }

    /// Two-socket Xeon Platinum 8480+ node: measured STREAM bandwidth, 2 MiB
    /// of L2 per core and one tile per core.
    pub fn intel_8480p() -> MachineSpec {
        MachineSpec::from_json(INTEL_8480P).expect("bundled spec")
    }

    /// H100 SXM5 80 GB: 256 KiB of L1 per SM and 32 resident tiles per SM.
    pub fn nvidia_h100() -> MachineSpec {
        MachineSpec::from_json(NVIDIA_H100).expect("bundled spec")
    }

    /// Looks up a bundled spec by name.
    pub fn builtin(name: &str) -> Option<MachineSpec> {
        match name {
            "intel-8480p" => Some(MachineSpec::intel_8480p()),
            "nvidia-h100" => Some(MachineSpec::nvidia_h100()),
            _ => None,
        }
    }

    /// Ridge point `τ_f / τ_m` in flops per byte.
    pub fn balance(&self) -> f64 {
        self.tau_f / self.tau_m
    }
}

/// `f = N·R·d`: per element, `R(d−1)` multiplies and `R` adds.
pub fn flops(shape: &Shape, rank: usize) -> u128 {
    shape.volume() as u128 * rank as u128 * shape.ndims() as u128
}

/// Infinite-cache traffic `s_f (N + R ΣI_n)`: the tensor once plus every
/// factor and output matrix once.
pub fn mem_infty(shape: &Shape, rank: usize, s_f: u64) -> u128 {
    s_f as u128 * (shape.volume() as u128 + rank as u128 * shape.dims_sum() as u128)
}

fn tiles_per_slice(shape: &Shape, mode: usize, tile_volume: usize) -> u128 {
    shape.slice_volume(mode).div_ceil(tile_volume.max(1)) as u128
}

/// Zero-cache traffic `s_f (N + N R (d−1) + ⌈N_S/N_T⌉ I_k R)`.
pub fn mem_zero(shape: &Shape, rank: usize, mode: usize, tile_volume: usize, s_f: u64) -> u128 {
    let n = shape.volume() as u128;
    let r = rank as u128;
    let d = shape.ndims() as u128;
    let out = tiles_per_slice(shape, mode, tile_volume) * shape.dim(mode) as u128 * r;
    s_f as u128 * (n + n * r * (d - 1) + out)
}

/// 0,LM-cache traffic `s_f (N + ⌈N_S/N_T⌉ I_k R) + s_f N R (d−1) / l`.
pub fn mem_zero_lm(shape: &Shape, rank: usize, mode: usize, tile_volume: usize, l: f64, s_f: u64) -> f64 {
    let n = shape.volume() as u128;
    let r = rank as u128;
    let d = shape.ndims() as u128;
    let out = tiles_per_slice(shape, mode, tile_volume) * shape.dim(mode) as u128 * r;
    let streamed = s_f as u128 * (n + out);
    let factors = s_f as u128 * n * r * (d - 1);
    streamed as f64 + factors as f64 / l
}

/// Footprint of the partial-Khatri-Rao GEMM MTTKRP,
/// `s_f (N + R (I_L + I_R + I_k))`.
pub fn mem_gemm(shape: &Shape, rank: usize, mode: usize, s_f: u64) -> u128 {
    let extra = shape.left_volume(mode) as u128 + shape.right_volume(mode) as u128 + shape.dim(mode) as u128;
    s_f as u128 * (shape.volume() as u128 + rank as u128 * extra)
}

/// Largest [`mem_gemm`] over all modes, with the (0-based) mode attaining it.
pub fn mem_gemm_worst(shape: &Shape, rank: usize, s_f: u64) -> (usize, u128) {
    (0..shape.ndims())
        .map(|k| (k, mem_gemm(shape, rank, k, s_f)))
        .max_by_key(|&(k, b)| (b, std::cmp::Reverse(k)))
        .expect("at least one mode")
}

/// Predicted time `f/τ_f + m/τ_m` for one traffic model.
pub fn predict_time(flops: u128, bytes: f64, machine: &MachineSpec) -> f64 {
    flops as f64 / machine.tau_f + bytes / machine.tau_m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PredictedTimes {
    pub t0: f64,
    pub t_inf: f64,
    pub t0_lm: f64,
}

pub fn predict_times(flops: u128, m0: u128, m_inf: u128, m0_lm: f64, machine: &MachineSpec) -> PredictedTimes {
    PredictedTimes {
        t0: predict_time(flops, m0 as f64, machine),
        t_inf: predict_time(flops, m_inf as f64, machine),
        t0_lm: predict_time(flops, m0_lm, machine),
    }
}

/// Arithmetic intensity `f / m_∞` in flops per byte.
pub fn intensity(flops: u128, m_inf: u128) -> f64 {
    flops as f64 / m_inf as f64
}

pub fn is_compute_bound(intensity: f64, machine: &MachineSpec) -> bool {
    intensity > machine.balance()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Throughput {
    /// Flops per second divided by 1024³.
    pub gflops: f64,
    /// Zero-cache bytes per second.
    pub mops0: f64,
    /// Infinite-cache bytes per second.
    pub mops_inf: f64,
}

pub fn throughput(flops: u128, m0: u128, m_inf: u128, seconds: f64) -> Throughput {
    Throughput {
        gflops: flops as f64 / seconds / (1u64 << 30) as f64,
        mops0: m0 as f64 / seconds,
        mops_inf: m_inf as f64 / seconds,
    }
}

/// Lower bound on the number of devices needed to hold `bytes`.
pub fn device_count(bytes: u128, machine: &MachineSpec) -> u128 {
    bytes.div_ceil(machine.device_capacity_bytes as u128)
}

/// Model predictions for one MTTKRP configuration, optionally paired with a
/// measured time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfReport {
    pub f: u128,
    pub m0: u128,
    pub m_inf: u128,
    pub m0_lm: f64,
    pub t0: f64,
    pub t_inf: f64,
    pub t0_lm: f64,
    pub intensity: f64,
    pub compute_bound: bool,
    pub measured_time: Option<f64>,
    pub gflops: Option<f64>,
    pub mops0: Option<f64>,
    pub mops_inf: Option<f64>,
}

impl PerfReport {
    pub fn model(shape: &Shape, rank: usize, mode: usize, tile_volume: usize, machine: &MachineSpec) -> PerfReport {
        let s_f = machine.s_f_bytes;
        let f = flops(shape, rank);
        let m0 = mem_zero(shape, rank, mode, tile_volume, s_f);
        let m_inf = mem_infty(shape, rank, s_f);
        let m0_lm = mem_zero_lm(shape, rank, mode, tile_volume, machine.l, s_f);
        let times = predict_times(f, m0, m_inf, m0_lm, machine);
        let intensity = intensity(f, m_inf);
        PerfReport {
            f,
            m0,
            m_inf,
            m0_lm,
            t0: times.t0,
            t_inf: times.t_inf,
            t0_lm: times.t0_lm,
            intensity,
            compute_bound: is_compute_bound(intensity, machine),
            measured_time: None,
            gflops: None,
            mops0: None,
            mops_inf: None,
        }
    }

    pub fn with_measured(mut self, seconds: f64) -> PerfReport {
        let rates = throughput(self.f, self.m0, self.m_inf, seconds);
        self.measured_time = Some(seconds);
        self.gflops = Some(rates.gflops);
        self.mops0 = Some(rates.mops0);
        self.mops_inf = Some(rates.mops_inf);
        self
    }
}
