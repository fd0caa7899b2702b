//! Optimization loop: Adam on the matched sIoU loss with a teacher-forcing
//! curriculum, per-epoch CSV metrics and atomic checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{initial_estimates, DecodeOptions, MaskSource, ModelConfig, Network, SequenceInput};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{gt_tubes, sequence_loss};
use crate::metrics::adapted_rand_error;
use crate::params::ParamStore;
use crate::segmenter::{infer_volume, InferenceConfig};
use crate::tensor::{Real, Tensor};
use crate::volume::{read_volume, write_atomic, LabelMap, LabelMap2D, Volume};

/// A volume and its labels on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub volume: PathBuf,
    pub labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs (counted from the first) whose previous-mask inputs come from
    /// the ground truth.
    pub teacher_forced_epochs: usize,
    pub seed: u64,
    pub dataset: Vec<DatasetEntry>,
    /// Trailing fraction of every volume's depth held out for validation.
    pub validation_fraction: f64,
    /// Offset between consecutive training windows.
    pub window_stride: usize,
    pub clip_norm: f64,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
    /// Validate every this many epochs; 0 disables validation.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            batch_size: 1,
            epochs: 40,
            teacher_forced_epochs: 10,
            seed: 0,
            dataset: Vec::new(),
            validation_fraction: 0.2,
            window_stride: 1,
            clip_norm: 10.0,
            checkpoint_every: 1,
            output_dir: PathBuf::from("runs/train"),
            validate_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.teacher_forced_epochs > self.epochs {
            return bad("teacher_forced_epochs exceeds epochs");
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return bad("batch_size and window_stride must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.clip_norm > 0.0) {
            return bad("learning_rate must be non-negative and clip_norm positive");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore<f32>) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies the accumulated gradients of `store`.
    pub fn step(&mut self, store: &mut ParamStore<f32>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let value = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                value[i] = (value[i] as f64 - update) as f32;
            }
        }
    }
}

/// One training window: `length` frames of volume `volume` from `z_start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub volume: usize,
    pub z_start: usize,
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Optimizer steps so far.
    pub step: usize,
    pub loss: f64,
    pub val_ari: Option<f64>,
    pub wallclock_s: f64,
}

/// Splits each volume along z into a leading training block and a trailing
/// validation block.
pub fn split_volumes(
    data: &[(Volume, LabelMap)],
    validation_fraction: f64,
) -> Result<(Vec<(Volume, LabelMap)>, Vec<(Volume, LabelMap)>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (v, l) in data {
        let d = v.shape()[0];
        let cut = d - ((d as f64 * validation_fraction).floor() as usize).min(d - 1);
        train.push((v.sub_volume(0, cut)?, l.sub_volume(0, cut)?));
        if cut < d {
            val.push((v.sub_volume(cut, d)?, l.sub_volume(cut, d)?));
        }
    }
    Ok((train, val))
}

/// Training windows whose reference frame has at least one object.
pub fn training_windows(data: &[(Volume, LabelMap)], length: usize, stride: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, (_, labels)) in data.iter().enumerate() {
        let [d, h, w] = labels.shape();
        let mut z = 0;
        while z + length <= d {
            if labels.data()[z * h * w..(z + 1) * h * w].iter().any(|&v| v != 0) {
                out.push(Window { volume: i, z_start: z });
            }
            z += stride;
        }
    }
    out
}

pub fn load_dataset(entries: &[DatasetEntry]) -> Result<Vec<(Volume, LabelMap)>> {
    entries
        .iter()
        .map(|e| {
            let v = read_volume(&e.volume)?.into_volume()?;
            let l = read_volume(&e.labels)?.into_labels()?;
            if v.shape() != l.shape() {
                return Err(Error::shape(format!(
                    "{} and {} differ in shape",
                    e.volume.display(),
                    e.labels.display()
                )));
            }
            Ok((v, l))
        })
        .collect()
}

/// ARI of `net` on every volume, seeded by each volume's first label slice.
pub fn validate(net: &Network<f32>, volumes: &[(Volume, LabelMap)], cfg: &InferenceConfig) -> Result<Vec<f64>> {
    volumes
        .iter()
        .map(|(v, l)| {
            let seed = l.slice(0)?;
            let pred = infer_volume(v, Some(&seed), net, cfg)?;
            adapted_rand_error(&pred.labels, l)
        })
        .collect()
}

pub struct Trainer {
    net: Network<f32>,
    cfg: TrainConfig,
    infer: InferenceConfig,
    adam: Adam,
    train: Vec<(Volume, LabelMap)>,
    validation: Vec<(Volume, LabelMap)>,
    windows: Vec<Window>,
    rng: ChaCha8Rng,
    epoch: usize,
    step: usize,
    started: Instant,
    history: Vec<EpochRecord>,
    sources: Vec<BTreeMap<MaskSource, usize>>,
}

impl Trainer {
    pub fn new(
        net: Network<f32>,
        cfg: TrainConfig,
        infer: InferenceConfig,
        train: Vec<(Volume, LabelMap)>,
        validation: Vec<(Volume, LabelMap)>,
    ) -> Result<Self> {
        cfg.validate()?;
        let windows = training_windows(&train, net.config().sequence_length, cfg.window_stride);
        if windows.is_empty() {
            return Err(Error::Config(format!(
                "no training window of {} frames with objects in its first frame",
                net.config().sequence_length
            )));
        }
        let multiple = net.config().frame_multiple();
        if let Some((v, _)) = train
            .iter()
            .find(|(v, _)| v.shape()[1] % multiple != 0 || v.shape()[2] % multiple != 0)
        {
            return Err(Error::shape(format!(
                "frames of {:?} are not divisible by {multiple}",
                &v.shape()[1..]
            )));
        }
        let adam = Adam::new(cfg.learning_rate, net.store());
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            net,
            cfg,
            infer,
            adam,
            train,
            validation,
            windows,
            epoch: 0,
            step: 0,
            started: Instant::now(),
            history: Vec::new(),
            sources: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Optimizer steps taken.
    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Counts of previous-mask sources seen after the first frame, per
    /// completed epoch.
    pub fn mask_sources(&self) -> &[BTreeMap<MaskSource, usize>] {
        &self.sources
    }

    pub fn teacher_forcing(&self) -> bool {
        self.epoch < self.cfg.teacher_forced_epochs
    }

    fn window_loss(&mut self, w: Window, teacher: bool, counts: &mut BTreeMap<MaskSource, usize>) -> Result<f64> {
        let n = self.net.config().sequence_length;
        let (volume, labels) = &self.train[w.volume];
        let frames: Vec<_> = (w.z_start..w.z_start + n)
            .map(|z| volume.slice(z))
            .collect::<Result<_>>()?;
        let gt: Vec<LabelMap2D> = (w.z_start..w.z_start + n)
            .map(|z| labels.slice(z))
            .collect::<Result<_>>()?;
        let estimates = initial_estimates(&gt[0], n);
        let mut g = Graph::new();
        let out = self.net.decode(
            &mut g,
            SequenceInput {
                frames: &frames,
                reference: &gt[0],
                estimates: &estimates,
            },
            DecodeOptions {
                teacher: teacher.then_some(gt.as_slice()),
                trace: true,
                compact: false,
            },
        )?;
        for e in out
            .trace
            .iter()
            .filter(|e| e.t > 0 || e.direction == crate::cconvlstm::Direction::Backward)
        {
            *counts.entry(e.mask_source).or_default() += 1;
        }
        let tubes = gt_tubes::<f32>(&gt, &out.ids)?;
        let (loss, _) = sequence_loss(&mut g, &out.masks, &tubes)?;
        let value = g.value(loss).item().to_f64();
        if !value.is_finite() {
            let dump = self.dump_nonfinite(w, value)?;
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch + 1,
                step: self.step,
                dump: dump.display().to_string(),
            });
        }
        g.backward(loss)?.accumulate_into(self.net.store_mut());
        Ok(value)
    }

    fn dump_nonfinite(&self, w: Window, loss: f64) -> Result<PathBuf> {
        let store = self.net.store();
        let params: Vec<serde_json::Value> = store
            .names()
            .map(|(name, id)| {
                serde_json::json!({
                    "name": name,
                    "finite_value": store.value(id).is_finite(),
                    "finite_grad": store.grad(id).is_finite(),
                })
            })
            .collect();
        let report = serde_json::json!({
            "epoch": self.epoch + 1,
            "step": self.step,
            "loss": loss.to_string(),
            "volume": w.volume,
            "z_start": w.z_start,
            "sequence_length": self.net.config().sequence_length,
            "params": params,
        });
        fs::create_dir_all(&self.cfg.output_dir).map_err(|e| Error::storage(&self.cfg.output_dir, e))?;
        let path = self
            .cfg
            .output_dir
            .join(format!("nonfinite_epoch{}_step{}.json", self.epoch + 1, self.step));
        let bytes = serde_json::to_vec_pretty(&report).map_err(|e| Error::Encoding(e.to_string()))?;
        write_atomic(&path, &bytes)?;
        Ok(path)
    }

    fn apply(&mut self) {
        let store = self.net.store_mut();
        store.clip_grad_norm(self.cfg.clip_norm as f32);
        self.adam.step(store);
        store.zero_grads();
        self.step += 1;
    }

    /// One pass over the shuffled training windows.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let teacher = self.teacher_forcing();
        let mut order = self.windows.clone();
        order.shuffle(&mut self.rng);
        let mut counts = BTreeMap::new();
        let mut total = 0.0;
        let mut pending = 0;
        self.net.store_mut().zero_grads();
        for w in order.iter().copied() {
            total += self.window_loss(w, teacher, &mut counts)?;
            pending += 1;
            if pending == self.cfg.batch_size {
                self.apply();
                pending = 0;
            }
        }
        if pending > 0 {
            self.apply();
        }
        self.epoch += 1;
        self.sources.push(counts);
        let val_ari = if self.cfg.validate_every > 0
            && self.epoch.is_multiple_of(self.cfg.validate_every)
            && !self.validation.is_empty()
        {
            let scores = validate(&self.net, &self.validation, &self.infer)?;
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: self.epoch,
            step: self.step,
            loss: total / order.len() as f64,
            val_ari,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} step {} loss {:.5} val_ari {}",
            record.epoch,
            record.step,
            record.loss,
            record.val_ari.map_or("-".into(), |v| format!("{v:.4}"))
        );
        self.history.push(record.clone());
        Ok(record)
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.cfg.output_dir.join(format!("epoch_{epoch:03}.ckpt"))
    }

    /// Runs the remaining epochs, writing the metrics CSV and checkpoints.
    pub fn run(&mut self) -> Result<PathBuf> {
        fs::create_dir_all(&self.cfg.output_dir).map_err(|e| Error::storage(&self.cfg.output_dir, e))?;
        while self.epoch < self.cfg.epochs {
            self.run_epoch()?;
            write_metrics(&self.cfg.output_dir.join("metrics.csv"), &self.history)?;
            if self.cfg.checkpoint_every > 0 && self.epoch.is_multiple_of(self.cfg.checkpoint_every) {
                self.net.save(&self.checkpoint_path(self.epoch))?;
            }
        }
        let last = self.cfg.output_dir.join("final.ckpt");
        self.net.save(&last)?;
        Ok(last)
    }
}

pub fn write_metrics(path: &Path, rows: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Encoding(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Encoding(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Loads the dataset, splits it, trains a fresh network and returns the
/// final checkpoint path.
pub fn train(model: &ModelConfig, cfg: &TrainConfig, infer: &InferenceConfig) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.dataset.is_empty() {
        return Err(Error::Config("train.dataset lists no volumes".into()));
    }
    let data = load_dataset(&cfg.dataset)?;
    let (train, val) = split_volumes(&data, cfg.validation_fraction)?;
    let net = Network::new(model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(net, cfg.clone(), infer.clone(), train, val)?;
    trainer.run()
}
