//! Column-major layout, 1-based multi-indices, mode unfoldings and the
//! binary DTEN file format.
//!
//! ```bash
//! cargo run --release --example tensor_layout
//! ```

use dense_mttkrp::tensor::{ind2sub, io as dten, sub2ind};
use dense_mttkrp::{DenseTensor, MultiIndex, Shape};

fn main() -> dense_mttkrp::Result<()> {
    let shape = Shape::new(vec![3, 4, 2])?;
    println!("shape {:?}, volume {}, strides {:?}", shape.dims(), shape.volume(), shape.strides());

    // Linear index l = 1 + Σ (i_n − 1)·Π_{m<n} I_m.
    for coords in [[1, 1, 1], [2, 1, 1], [1, 2, 1], [3, 4, 2]] {
        let l = sub2ind(&shape, &MultiIndex::new(coords.to_vec()))?;
        println!("  {:?} -> {:>2} -> {:?}", coords, l, ind2sub(&shape, l)?.coords());
    }

    // Element value = its 0-based linear offset, so the unfoldings show the layout.
    let mut offset = 0.0;
    let y = DenseTensor::from_fn(shape.clone(), |_| {
        offset += 1.0;
        offset - 1.0
    });
    for mode in 0..shape.ndims() {
        let unfolded = y.matricize(mode)?;
        println!("\nmode-{} unfolding ({} × {}):", mode + 1, unfolded.rows(), unfolded.cols());
        for i in 0..unfolded.rows() {
            let row: Vec<String> = (0..unfolded.cols()).map(|j| format!("{:>3}", unfolded.get(i, j))).collect();
            println!("  {}", row.join(""));
        }
        assert_eq!(DenseTensor::fold(&unfolded, mode, shape.clone())?, y);
    }

    let mut bytes = Vec::new();
    dten::write(&mut bytes, &y)?;
    println!(
        "\nDTEN: {} header bytes + {} payload bytes = {}",
        dten::header_len(shape.ndims()),
        dten::payload_len(&shape),
        bytes.len()
    );
    assert_eq!(dten::read(bytes.as_slice())?, y);
    println!("round trip ok");
    Ok(())
}
