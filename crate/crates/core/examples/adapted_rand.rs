//! Adapted Rand error of a few hand-made segmentations.

use crs::metrics::{adapted_rand_error_flat, ContingencyTable};

fn main() -> crs::Result<()> {
    let gt = [1, 1, 1, 1, 2, 2, 2, 2, 0, 0];
    let cases: [(&str, [u32; 10]); 5] = [
        ("perfect", [5, 5, 5, 5, 6, 6, 6, 6, 0, 0]),
        ("merged", [1, 1, 1, 1, 1, 1, 1, 1, 0, 0]),
        ("split", [1, 1, 3, 3, 2, 2, 4, 4, 0, 0]),
        ("unlabelled half", [1, 1, 0, 0, 2, 2, 0, 0, 0, 0]),
        ("background ignored", [5, 5, 5, 5, 6, 6, 6, 6, 7, 8]),
    ];
    for (name, pred) in cases {
        let t = ContingencyTable::from_labels(&pred, &gt)?;
        println!(
            "{name:>18}: precision {:.3} recall {:.3} error {:.4}",
            t.precision(),
            t.recall(),
            adapted_rand_error_flat(&pred, &gt)?
        );
    }
    Ok(())
}
