//! CP decomposition by alternating least squares on a synthetic low-rank
//! tensor, with the MTTKRP share of the run time.
//!
//! ```bash
//! cargo run --release --example cp_als
//! ```

use dense_mttkrp::cpals::{cp_als, AlsConfig};
use dense_mttkrp::{KruskalTensor, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dense_mttkrp::Result<()> {
    let dims = [30, 25, 20, 15];
    let truth = KruskalTensor::random(&dims, 3, &mut ChaCha8Rng::seed_from_u64(11))?;
    let y = truth.full()?;
    println!("rank-3 tensor {dims:?}, ‖Y‖ = {:.4}", y.norm());

    for variant in [Variant::Tile, Variant::Gemm] {
        let cfg = AlsConfig::new(3).with_variant(variant).with_tol(1e-10).with_max_iters(500).with_seed(1);
        let (model, trace) = cp_als(&y, &cfg)?;
        let t = &trace.timing;
        println!(
            "\n{}: {} sweeps, converged {}, fit {:.12}",
            variant.name(),
            trace.iterations(),
            trace.converged,
            trace.final_fit().unwrap_or(f64::NAN)
        );
        println!("  λ = {:?}", model.lambda());
        println!(
            "  {:.1} ms total: MTTKRP {:.0}%, solves {:.0}%, normalize {:.0}%, fit {:.0}%",
            t.total * 1e3,
            100.0 * t.mttkrp / t.total,
            100.0 * t.solve / t.total,
            100.0 * t.normalize / t.total,
            100.0 * t.fit / t.total
        );
        let every = (trace.iterations() / 8).max(1);
        let fits: Vec<String> = trace.fits.iter().step_by(every).map(|f| format!("{f:.6}")).collect();
        println!("  fit every {every} sweeps: {}", fits.join(" "));
    }
    Ok(())
}
