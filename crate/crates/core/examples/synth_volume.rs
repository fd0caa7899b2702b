//! Generates a synthetic volume, writes it in the VOL1 format and reads it
//! back.
//!
//! cargo run --example synth_volume -- /tmp/synth

use crs::{generate, read_volume, write_volume, Grid, SynthSpec};

fn main() -> crs::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    std::fs::create_dir_all(&dir).map_err(|e| crs::Error::storage(&dir, e))?;
    let spec = SynthSpec {
        shape: [12, 64, 64],
        object_count: 6,
        artifact_slices: vec![6],
        seed: 7,
        ..Default::default()
    };
    let (volume, labels) = generate(&spec)?;
    let vpath = format!("{dir}/volume.vol1");
    let lpath = format!("{dir}/labels.vol1");
    write_volume(&vpath, &Grid::F32(volume.clone()))?;
    write_volume(&lpath, &Grid::Labels(labels.clone()))?;

    let back = read_volume(&vpath)?.into_volume()?;
    assert_eq!(back, volume);
    let back = read_volume(&lpath)?.into_labels()?;
    println!("shape {:?}, ids {:?}", back.shape(), back.ids());
    for z in 0..labels.shape()[0] {
        let slice = labels.slice(z)?;
        let areas: Vec<usize> = slice.ids().into_iter().map(|id| slice.area(id)).collect();
        println!("z={z:2} areas {areas:?}");
    }
    Ok(())
}
