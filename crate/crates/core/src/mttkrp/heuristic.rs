use serde::Serialize;

use crate::error::{Error, Result};
use crate::perfmodel::MachineSpec;
use crate::tensor::Shape;

/// Tile size picked from the machine's mid-level cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TileChoice {
    /// Cache-derived width before clamping to the smallest extent.
    pub unclamped_width: usize,
    /// Edge length of a regular tile, `N_T^{1/(d−1)}`.
    pub width: usize,
    /// `width^{d−1}`.
    pub tile_volume: usize,
}

/// Largest integer `w ≥ 1` with `w^p ≤ x`.
fn integer_root(x: f64, p: u32) -> usize {
    if x < 1.0 {
        return 1;
    }
    let mut w = x.powf(1.0 / p as f64).floor().max(1.0) as usize;
    while (w as f64 + 1.0).powi(p as i32) <= x {
        w += 1;
    }
    while w > 1 && (w as f64).powi(p as i32) > x {
        w -= 1;
    }
    w
}

/// Regular tiles whose factor-matrix rows fill a quarter of the mid-level
/// cache shared by `c` resident tiles, no wider than the smallest extent:
///
/// `w = min(⌊((s_LM/4) / (s_f·c/2))^{1/(d−1)}⌋, min_n I_n)`, `N_T = w^{d−1}`.
pub fn tile_heuristic(dims: &[usize], machine: &MachineSpec) -> Result<TileChoice> {
    let d = dims.len();
    if d < 2 {
        return Err(Error::Parameter("the tile heuristic needs at least two modes".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Shape("zero extent".into()));
    }
    machine.validate()?;
    let budget = (machine.s_lm_bytes as f64 / 4.0) / (machine.s_f_bytes as f64 * machine.c_tiles as f64 / 2.0);
    let exponent = (d - 1) as u32;
    let unclamped_width = integer_root(budget, exponent);
    let width = unclamped_width.min(*dims.iter().min().expect("non-empty"));
    let tile_volume = width
        .checked_pow(exponent)
        .ok_or_else(|| Error::Parameter("tile volume overflows".into()))?;
    Ok(TileChoice { unclamped_width, width, tile_volume })
}

/// `width^{d−1}` clamped to `[1, N_S]` for the given mode.
pub fn tile_volume_for_width(shape: &Shape, mode: usize, width: usize) -> Result<usize> {
    shape.check_mode(mode)?;
    if width == 0 {
        return Err(Error::Parameter("tile width must be positive".into()));
    }
    let exponent = shape.ndims().saturating_sub(1) as u32;
    let volume = width.checked_pow(exponent).unwrap_or(usize::MAX);
    Ok(volume.clamp(1, shape.slice_volume(mode)))
}
