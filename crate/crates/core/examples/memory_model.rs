//! Memory footprint of matrix-free MTTKRP versus the GEMM formulation, and
//! the predicted run times on the builtin machines.
//!
//! ```bash
//! cargo run --release --example memory_model
//! ```

use dense_mttkrp::perfmodel::{device_count, mem_gemm, mem_gemm_worst, mem_infty};
use dense_mttkrp::{MachineSpec, PerfReport, Shape};

const GIB: f64 = (1u64 << 30) as f64;

fn main() -> dense_mttkrp::Result<()> {
    let gpu = MachineSpec::nvidia_h100();
    for (name, dims) in [("tearing", vec![401, 201, 12, 501]), ("island", vec![129, 129, 129, 12, 39])] {
        let shape = Shape::new(dims)?;
        println!("{name} {:?}: tensor {:.2} GiB", shape.dims(), mem_infty(&shape, 0, 8) as f64 / GIB);
        for rank in [16, 256, 2000] {
            let free = mem_infty(&shape, rank, 8);
            let (worst_mode, worst) = mem_gemm_worst(&shape, rank, 8);
            println!(
                "  R = {rank:>4}: matrix-free {:>8.2} GiB ({} H100), GEMM {:>8.2} GiB at mode {} ({} H100)",
                free as f64 / GIB,
                device_count(free, &gpu),
                worst as f64 / GIB,
                worst_mode + 1,
                device_count(worst, &gpu)
            );
        }
        let per_mode: Vec<String> = (0..shape.ndims()).map(|k| format!("{:.1}", mem_gemm(&shape, 2000, k, 8) as f64 / GIB)).collect();
        println!("  GEMM GiB per mode at R = 2000: [{}]", per_mode.join(", "));
    }

    let shape = Shape::new(vec![401, 201, 12, 501])?;
    println!("\npredicted mode-1 times for tearing at R = 32:");
    for machine in [MachineSpec::intel_8480p(), gpu] {
        for (label, n_t) in [("ELEM", 1), ("TILE 12³", 1728), ("SLICE", shape.slice_volume(0))] {
            let p = PerfReport::model(&shape, 32, 0, n_t, &machine);
            println!(
                "  {:<12} {:<10} T0 {:.3e} s  T0,LM {:.3e} s  T∞ {:.3e} s  ({})",
                machine.name,
                label,
                p.t0,
                p.t0_lm,
                p.t_inf,
                if p.compute_bound { "compute bound" } else { "memory bound" }
            );
        }
    }
    Ok(())
}
