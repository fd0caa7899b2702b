//! Segments a deep volume by chained z-chunks, once from the ground-truth
//! first slice and once from a watershed seed.

use crs::{
    adapted_rand_error, generate, infer_volume, ConsistencyMode, InferenceConfig, ModelConfig, Network, SynthSpec,
};

fn main() -> crs::Result<()> {
    let (volume, labels) = generate(&SynthSpec {
        shape: [10, 48, 48],
        object_count: 4,
        radius_range: (3.0, 5.0),
        seed: 5,
        ..Default::default()
    })?;
    let model = ModelConfig {
        levels: 3,
        hidden_width: 4,
        objects_per_sequence: 6,
        sequence_length: 4,
        consistency_mode: ConsistencyMode::STN,
        encoder_widths: vec![8, 8, 4],
        ..Default::default()
    };
    let mut net = Network::<f32>::new(model, 2)?;
    // bias the head so the untrained network keeps its masks alive
    let head = net.head().b;
    net.store_mut().value_mut(head).fill(1.0);

    let cfg = InferenceConfig {
        z_overlap: 1,
        ..Default::default()
    };
    let seeded = infer_volume(&volume, Some(&labels.slice(0)?), &net, &cfg)?;
    println!("chunks {:?}", seeded.chunks);
    for (c, s) in seeded.seeds.iter().enumerate() {
        println!("chunk {c} seeded with ids {:?}", s.ids());
    }
    println!(
        "ARI from ground-truth seed: {:.4}",
        adapted_rand_error(&seeded.labels, &labels)?
    );

    let unseeded = infer_volume(&volume, None, &net, &cfg)?;
    println!(
        "watershed seed has {} regions, ARI {:.4}",
        unseeded.seeds[0].ids().len(),
        adapted_rand_error(&unseeded.labels, &labels)?
    );
    Ok(())
}
