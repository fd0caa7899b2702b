//! Trains a small network on synthetic volumes and reports validation ARI.
//!
//! cargo run --release --example train_small -- [epochs]

use crs::trainer::{validate, Trainer};
use crs::{generate, ConsistencyMode, InferenceConfig, ModelConfig, Network, SynthSpec, TrainConfig};

fn main() -> crs::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let spec = |seed| SynthSpec {
        shape: [6, 48, 48],
        object_count: 3,
        radius_range: (3.0, 5.0),
        seed,
        ..Default::default()
    };
    let train: Vec<_> = (0..3).map(|s| generate(&spec(s))).collect::<crs::Result<_>>()?;
    let held_out = vec![generate(&spec(100))?];
    let model = ModelConfig {
        levels: 3,
        hidden_width: 4,
        objects_per_sequence: 3,
        sequence_length: 3,
        consistency_mode: ConsistencyMode::STC,
        encoder_widths: vec![8, 8, 4],
        ..Default::default()
    };
    let cfg = TrainConfig {
        epochs,
        teacher_forced_epochs: 1.min(epochs),
        learning_rate: 1e-3,
        output_dir: std::env::temp_dir().join("crs_train_small"),
        ..Default::default()
    };
    let infer = InferenceConfig::default();
    let net = Network::<f32>::new(model, 0)?;
    println!("untrained ARI {:?}", validate(&net, &held_out, &infer)?);
    let mut trainer = Trainer::new(net, cfg, infer.clone(), train, held_out.clone())?;
    for _ in 0..epochs {
        let r = trainer.run_epoch()?;
        println!(
            "epoch {} step {} loss {:.4} val ARI {:?} ({:.1}s)",
            r.epoch, r.step, r.loss, r.val_ari, r.wallclock_s
        );
    }
    println!("final ARI {:?}", validate(trainer.network(), &held_out, &infer)?);
    Ok(())
}
