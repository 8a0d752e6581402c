//! Cache-derived tile widths and how the tile volume trades factor-matrix
//! traffic against atomic updates.
//!
//! ```bash
//! cargo run --release --example tile_heuristic
//! ```

use dense_mttkrp::mttkrp::{tile_heuristic, tile_volume_for_width};
use dense_mttkrp::perfmodel::{mem_zero, mem_zero_lm};
use dense_mttkrp::{MachineSpec, Shape, TileGeometry};

fn main() -> dense_mttkrp::Result<()> {
    let shapes: [&[usize]; 3] = [&[401, 201, 12, 501], &[129, 129, 129, 12, 39], &[64, 64, 64]];
    for machine in [MachineSpec::intel_8480p(), MachineSpec::nvidia_h100()] {
        println!("{}: {} B mid-level cache, {} resident tiles", machine.name, machine.s_lm_bytes, machine.c_tiles);
        for dims in shapes {
            let c = tile_heuristic(dims, &machine)?;
            println!("  {:?}: width {} (cache allows {}), N_T = {}", dims, c.width, c.unclamped_width, c.tile_volume);
        }
    }

    // Mode 1 of a 64³ tensor at rank 32 on the CPU model.
    let shape = Shape::new(vec![64, 64, 64])?;
    let cpu = MachineSpec::intel_8480p();
    let (rank, mode) = (32, 0);
    println!("\n{:?}, mode 1, R = {rank}:", shape.dims());
    println!("  {:>5} {:>6} {:>8} {:>16} {:>16}", "width", "N_T", "tiles", "no-cache bytes", "cached bytes");
    for w in [1, 2, 4, 8, 16, 32, 64] {
        let n_t = tile_volume_for_width(&shape, mode, w)?;
        let geo = TileGeometry::new(&shape, mode, n_t)?;
        println!(
            "  {:>5} {:>6} {:>8} {:>16} {:>16.0}",
            w,
            n_t,
            geo.tile_count(),
            mem_zero(&shape, rank, mode, n_t, cpu.s_f_bytes),
            mem_zero_lm(&shape, rank, mode, n_t, cpu.l, cpu.s_f_bytes)
        );
    }
    Ok(())
}
