//! Seeds a synthetic slice with the marker watershed and scores the seed
//! against the ground truth of that slice.

use crs::metrics::adapted_rand_error_flat;
use crs::segmenter::watershed2d;
use crs::{generate, SynthSpec};

fn main() -> crs::Result<()> {
    let (volume, labels) = generate(&SynthSpec {
        shape: [1, 64, 64],
        object_count: 8,
        seed: 3,
        ..Default::default()
    })?;
    let frame = volume.slice(0)?;
    let truth = labels.slice(0)?;
    let regions = watershed2d(&frame);
    println!(
        "{} objects, {} watershed regions",
        truth.ids().len(),
        regions.ids().len()
    );
    println!(
        "ARI vs ground truth: {:.4}",
        adapted_rand_error_flat(&regions.data, &truth.data)?
    );

    let [h, w] = regions.shape;
    for y in (0..h).step_by(2) {
        let row: String = (0..w)
            .step_by(2)
            .map(|x| {
                let id = regions.data[y * w + x];
                char::from_digit(id % 36, 36).unwrap()
            })
            .collect();
        println!("{row}");
    }
    Ok(())
}
