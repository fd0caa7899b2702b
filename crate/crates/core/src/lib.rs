//! Recurrent mask propagation for volumetric instance segmentation.
//!
//! A labeled reference slice seeds up to `M` objects; a convolutional LSTM
//! decoder carries their masks through the following slices, recurrent over
//! both the slice index and the object index, with optional backward and
//! reference-state connections (see [`ConsistencyMode`]).
//!
//! Pipeline pieces:
//! - [`volume`]: VOL1 files, slicing and label pyramids
//! - [`synth`]: synthetic tubular volumes with ground truth
//! - [`graph`], [`ops`], [`nn`], [`params`]: reverse-mode autodiff and layers
//! - [`encoder`], [`cconvlstm`], [`decoder`]: the network
//! - [`loss`], [`trainer`]: matched sIoU loss and the training loop
//! - [`segmenter`], [`metrics`]: chunked inference and adapted Rand error
//! - [`ablation`], [`config`]: experiments and the shared JSON config

pub mod ablation;
pub mod cconvlstm;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod params;
pub mod segmenter;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod volume;

pub use cconvlstm::ConsistencyMode;
pub use config::Config;
pub use decoder::{MaskSequence, ModelConfig, Network};
pub use error::{Error, Result};
pub use metrics::adapted_rand_error;
pub use segmenter::{infer_volume, InferenceConfig};
pub use synth::{generate, SynthSpec};
pub use trainer::TrainConfig;
pub use volume::{read_volume, write_volume, Grid, LabelMap, LabelMap2D, Volume};
