//! Column-wise Kronecker (Khatri-Rao) products and the identity that makes
//! MTTKRP the workhorse of CP-ALS: `(A ⊙ B)ᵀ(A ⊙ B) = AᵀA ∗ BᵀB`.
//!
//! ```bash
//! cargo run --release --example khatri_rao
//! ```

use dense_mttkrp::kruskal::gram;
use dense_mttkrp::tensor::{khatri_rao, khatri_rao_chain};
use dense_mttkrp::Matrix;

fn show(name: &str, m: &Matrix) {
    println!("{name} ({} × {}):", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:>7.2}")).collect();
        println!("  {}", row.join(""));
    }
}

fn main() -> dense_mttkrp::Result<()> {
    let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0])?;
    let b = Matrix::new(3, 2, vec![1.0, -1.0, 0.5, 2.0, 0.0, 1.0])?;
    show("A", &a);
    show("B", &b);
    // Row (i, j) of A ⊙ B is A[i,:] ∗ B[j,:], with the row of A varying slowest.
    let k = khatri_rao(&a, &b)?;
    show("A ⊙ B", &k);

    let lhs = gram(&k);
    let rhs = gram(&a).hadamard(&gram(&b))?;
    show("(A ⊙ B)ᵀ(A ⊙ B)", &lhs);
    println!("max deviation from AᵀA ∗ BᵀB: {:.1e}", lhs.distance(&rhs)?);

    let c = Matrix::filled(2, 2, 0.5);
    let chain = khatri_rao_chain(&[&c, &a, &b], 2)?;
    println!("\nC ⊙ A ⊙ B has {} rows", chain.rows());
    Ok(())
}
