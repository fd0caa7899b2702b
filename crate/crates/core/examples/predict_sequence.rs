//! Decodes one short synthetic sequence with an untrained network in every
//! consistency mode and prints the mask statistics.

use crs::decoder::{initial_estimates, SequenceInput};
use crs::segmenter::sequence_to_labels;
use crs::volume::Image2D;
use crs::{generate, ConsistencyMode, ModelConfig, Network, SynthSpec};

fn main() -> crs::Result<()> {
    let (volume, labels) = generate(&SynthSpec {
        shape: [4, 32, 32],
        object_count: 3,
        radius_range: (3.0, 5.0),
        seed: 1,
        ..Default::default()
    })?;
    let frames: Vec<Image2D> = (0..4).map(|z| volume.slice(z)).collect::<crs::Result<_>>()?;
    let reference = labels.slice(0)?;
    let estimates = initial_estimates(&reference, frames.len());
    for mode in ConsistencyMode::ALL {
        let model = ModelConfig {
            levels: 3,
            hidden_width: 4,
            objects_per_sequence: 4,
            sequence_length: 4,
            consistency_mode: mode,
            encoder_widths: vec![8, 8, 4],
            ..Default::default()
        };
        let net = Network::<f32>::new(model, 0)?;
        let seq = net.predict(SequenceInput {
            frames: &frames,
            reference: &reference,
            estimates: &estimates,
        })?;
        let means: Vec<String> = (0..seq.objects())
            .map(|o| {
                let m = seq.mask(3, o);
                format!("{:.3}", m.iter().sum::<f32>() / m.len() as f32)
            })
            .collect();
        let last = sequence_to_labels(&seq, 0.5)?.pop().unwrap();
        println!(
            "{mode:>3}: {} parameters, slots {:?}, mean mask at t=3 [{}], ids at t=3 {:?}",
            net.parameter_count(),
            seq.ids,
            means.join(", "),
            last.ids()
        );
    }
    Ok(())
}
