//! Every MTTKRP variant on the same problem: agreement with the serial
//! reference, work and atomic counters, and the memory footprint.
//!
//! ```bash
//! cargo run --release --example mttkrp_variants
//! MTTKRP_WORKERS=4 cargo run --release --example mttkrp_variants
//! ```

use dense_mttkrp::mttkrp::{mttkrp, mttkrp_reference, tile_heuristic};
use dense_mttkrp::{DenseTensor, KruskalTensor, MachineSpec, MttkrpPlan, Shape, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dense_mttkrp::Result<()> {
    let dims = [40, 30, 12, 50];
    let rank = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = DenseTensor::random_uniform(Shape::new(dims.to_vec())?, &mut rng);
    let m = KruskalTensor::random(&dims, rank, &mut rng)?;
    let choice = tile_heuristic(&dims, &MachineSpec::intel_8480p())?;
    println!("tensor {dims:?}, rank {rank}, heuristic tile width {} (N_T = {})", choice.width, choice.tile_volume);

    for mode in 0..dims.len() {
        let expected = mttkrp_reference(&y, &m, mode)?.g;
        let scale = expected.frobenius_norm();
        println!("\nmode {}:", mode + 1);
        println!("  {:<10} {:>10} {:>12} {:>10} {:>14} {:>10}", "variant", "time ms", "visits", "atomics", "footprint B", "rel err");
        for variant in Variant::ALL {
            let plan = MttkrpPlan::new(variant, mode).with_tile_volume(choice.tile_volume);
            let out = mttkrp(&y, &m, &plan)?;
            println!(
                "  {:<10} {:>10.3} {:>12} {:>10} {:>14} {:>10.1e}",
                variant.name(),
                out.stats.elapsed.as_secs_f64() * 1e3,
                out.stats.element_visits,
                out.stats.atomic_updates,
                out.stats.footprint_bytes,
                out.g.distance(&expected)? / scale
            );
        }
    }
    Ok(())
}
