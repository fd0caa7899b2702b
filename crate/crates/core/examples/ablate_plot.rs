//! A miniature consistency-mode ablation: every mode is trained briefly on
//! tiny volumes, scored on volumes with a blanked slice, and charted.
//!
//! cargo run --release --example ablate_plot -- /tmp/ablate

use std::path::PathBuf;

use crs::ablation::{ablate, plot, write_report, AblationConfig, ReportRow};
use crs::{ConsistencyMode, InferenceConfig, ModelConfig, SynthSpec, TrainConfig};

fn main() -> crs::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ablate_out".into()));
    let cfg = AblationConfig {
        model: ModelConfig {
            levels: 2,
            hidden_width: 4,
            objects_per_sequence: 3,
            sequence_length: 4,
            consistency_mode: ConsistencyMode::STC,
            encoder_widths: vec![8, 4],
            ..Default::default()
        },
        volume: SynthSpec {
            shape: [4, 32, 32],
            object_count: 3,
            radius_range: (3.0, 5.0),
            ..Default::default()
        },
        train_volumes: 2,
        test_volumes: 2,
        epochs: 2,
        output_dir: out.clone(),
        ..Default::default()
    };
    let cells = ablate(
        &TrainConfig::default(),
        &InferenceConfig::default(),
        &cfg,
        &ConsistencyMode::ALL,
        &[0],
    )?;
    for c in &cells {
        println!(
            "{:>3} seed {}: ARI {:.4}, identity {}/{}, {:.2}s inference",
            c.mode, c.seed, c.ari, c.preserved, c.objects, c.inference_seconds
        );
    }
    std::fs::create_dir_all(&out).map_err(|e| crs::Error::storage(&out, e))?;
    let rows: Vec<ReportRow> = cells.iter().map(Into::into).collect();
    write_report(&out.join("report.csv"), &rows)?;
    for p in plot(&rows, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
