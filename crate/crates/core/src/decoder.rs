//! The recurrent decoder: a chain of CConvLSTM levels run over every
//! (frame, object) cell of a sequence, producing one soft mask per object
//! and frame.
//!
//! Decoding a sequence of `N` frames with `M` object slots:
//!
//! 1. For non-local modes the reference frame (frame 0) is decoded once with
//!    the one-hot reference masks and zero temporal state; the fused state of
//!    every level and object is frozen as the reference state.
//! 2. A forward sweep over `t = 0..N` and `o = 0..M` feeds each object its
//!    mask from the previous frame (the reference mask at `t = 0`).
//! 3. Bidirectional modes run a backward sweep over reversed frames whose
//!    mask input is the forward sweep's prediction at `t + 1`; its fuse
//!    combines the forward hidden state kept from step 2 with the backward
//!    one, and its masks are the output.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cconvlstm::{build_input, directional_step, fuse, ConsistencyMode, Direction, LevelParams, StateBank};
use crate::encoder::{encoder_input, level_stride, Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv;
use crate::params::{load_checkpoint, save_checkpoint, seeded_rng, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::volume::{Image2D, LabelMap2D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Pyramid depth `K`.
    pub levels: usize,
    /// Decoder width `C_dec`.
    pub hidden_width: usize,
    /// Object slots `M`.
    pub objects_per_sequence: usize,
    /// Frames per sequence `N_seq`.
    pub sequence_length: usize,
    pub consistency_mode: ConsistencyMode,
    /// Encoder input channels: intensity copies plus one initial-estimate
    /// channel.
    pub input_channels: usize,
    /// Encoder channel counts, deepest level first.
    pub encoder_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 5,
            hidden_width: 16,
            objects_per_sequence: 15,
            sequence_length: 30,
            consistency_mode: ConsistencyMode::STC,
            input_channels: 2,
            encoder_widths: vec![64, 48, 32, 16, 8],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.encoder_widths.len() != self.levels {
            return bad(format!(
                "encoder_widths has {} entries for {} levels",
                self.encoder_widths.len(),
                self.levels
            ));
        }
        if self.hidden_width == 0 || self.objects_per_sequence == 0 || self.sequence_length == 0 {
            return bad("hidden_width, objects_per_sequence and sequence_length must be positive".into());
        }
        if self.input_channels < 2 {
            return bad("input_channels must be at least 2".into());
        }
        Ok(())
    }

    /// Frames must be divisible by this factor on both axes.
    pub fn frame_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Where an object's previous-mask input came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskSource {
    /// One-hot reference mask (first frame of the forward sweep).
    Reference,
    /// Ground-truth mask of the neighbouring frame (teacher forcing).
    GroundTruth,
    /// The network's own forward-sweep prediction.
    Prediction,
}

/// Instrumentation record of one (frame, object, direction) step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub t: usize,
    pub o: usize,
    pub direction: Direction,
    /// The spatial state consumed at every level was the zero map.
    pub spatial_was_zero: bool,
    pub mask_source: MaskSource,
}

/// Inputs of one sequence decode.
#[derive(Clone, Copy, Debug)]
pub struct SequenceInput<'a> {
    pub frames: &'a [Image2D],
    /// Label map of frame 0.
    pub reference: &'a LabelMap2D,
    /// Initial-estimate channel per frame.
    pub estimates: &'a [Image2D],
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DecodeOptions<'a> {
    /// Ground-truth labels per frame; when present, previous-mask inputs are
    /// taken from them instead of the network's predictions.
    pub teacher: Option<&'a [LabelMap2D]>,
    pub trace: bool,
    /// Moves the live state into a fresh graph after every frame, bounding
    /// memory. Only valid on an inference graph.
    pub compact: bool,
}

/// Masks on a graph, indexed `[t][o]`, each `(1, H, W)`.
pub struct DecodeOutput {
    pub ids: Vec<u32>,
    pub masks: Vec<Vec<Var>>,
    pub trace: Vec<TraceEntry>,
}

/// Soft masks of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSequence {
    /// Label id per slot; 0 marks a padded slot.
    pub ids: Vec<u32>,
    pub shape: [usize; 2],
    /// `masks[t][o]`, row-major `H·W` values in (0, 1).
    pub masks: Vec<Vec<Vec<f32>>>,
}

impl MaskSequence {
    pub fn frames(&self) -> usize {
        self.masks.len()
    }

    pub fn objects(&self) -> usize {
        self.ids.len()
    }

    pub fn mask(&self, t: usize, o: usize) -> &[f32] {
        &self.masks[t][o]
    }

    pub fn total_masks(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }
}

/// Outcome of one object step.
pub struct ObjectStep {
    pub mask: Var,
    /// Raw cell hidden state of the stepped direction, per level.
    pub cell_h: Vec<Var>,
    /// Fused state per level.
    pub fused: Vec<Var>,
}

enum RefSource {
    Zero,
    Bank,
}

/// Ids of the decoded objects: the `cap` smallest nonzero ids of the
/// reference, padded with 0 up to `cap`.
pub fn select_objects(reference: &LabelMap2D, cap: usize) -> Result<Vec<u32>> {
    let ids = reference.ids();
    if ids.is_empty() {
        return Err(Error::Seed);
    }
    if ids.len() > cap {
        log::warn!("reference has {} objects, decoding the first {cap}", ids.len());
    }
    let mut out: Vec<u32> = ids.into_iter().take(cap).collect();
    out.resize(cap, 0);
    Ok(out)
}

/// Foreground of `labels` as a 0/1 image.
pub fn initial_estimate(labels: &LabelMap2D) -> Image2D {
    Image2D {
        shape: labels.shape,
        data: labels.data.iter().map(|&v| (v != 0) as u8 as f32).collect(),
    }
}

/// The reference foreground replicated over `frames` frames.
pub fn initial_estimates(reference: &LabelMap2D, frames: usize) -> Vec<Image2D> {
    vec![initial_estimate(reference); frames]
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoder: Encoder,
    levels: Vec<LevelParams>,
    head: Conv,
}

impl<T: Real> Network<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let c = config.hidden_width;
        let encoder = Encoder::register(&mut store, config.input_channels, &config.encoder_widths, c, &mut rng)?;
        let levels = (0..config.levels)
            .map(|k| {
                let c_in = if k == 0 { c + 1 } else { 2 * c + 1 };
                LevelParams::register(&mut store, k, c_in, c, config.consistency_mode, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Conv::register(&mut store, "head", c, 1, 1, 1, &mut rng)?;
        Ok(Network {
            config,
            store,
            encoder,
            levels,
            head,
        })
    }

    /// Restores a network saved with [`Network::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (stored, config): (ParamStore<T>, ModelConfig) =
            load_checkpoint(path).map_err(|e| e.context(format!("loading {}", path.display())))?;
        let mut net = Network::new(config, 0)?;
        if stored.len() != net.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, the configured network {}",
                stored.len(),
                net.store.len()
            )));
        }
        for (name, id) in stored.names() {
            let target = net
                .store
                .id(name)
                .map_err(|_| Error::Format(format!("unexpected parameter {name}")))?;
            net.store.set(target, stored.value(id).clone())?;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.store, &self.config)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ConsistencyMode {
        self.config.consistency_mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn level(&self, k: usize) -> &LevelParams {
        &self.levels[k]
    }

    pub fn head(&self) -> &Conv {
        &self.head
    }

    pub fn parameter_count(&self) -> usize {
        self.store.ids().map(|id| self.store.value(id).len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            levels: self.levels.clone(),
            head: self.head,
        }
    }

    /// Encoder pyramid of one frame, projected to the decoder width.
    pub fn frame_features(&self, g: &mut Graph<T>, frame: &Image2D, estimate: &Image2D) -> Result<FeaturePyramid> {
        let x = encoder_input(frame, estimate, self.config.input_channels)?;
        let x = g.constant(x);
        let pyramid = self.encoder.encode(g, &self.store, x)?;
        self.encoder.project(g, &self.store, &pyramid)
    }

    #[allow(clippy::too_many_arguments)]
    fn object_step(
        &self,
        g: &mut Graph<T>,
        features: &FeaturePyramid,
        object: usize,
        bank: &mut StateBank,
        prev_mask: Var,
        dir: Direction,
        h_fwd: Option<&[Var]>,
        reference: RefSource,
    ) -> Result<ObjectStep> {
        let mode = self.mode();
        let k_levels = self.config.levels;
        if features.len() != k_levels {
            return Err(Error::shape(format!(
                "{} feature levels for a {k_levels}-level decoder",
                features.len()
            )));
        }
        let (pc, ph, pw) = g.value(prev_mask).chw()?;
        let (_, fh, fw) = g.value(features.levels[k_levels - 1]).chw()?;
        if (pc, ph, pw) != (1, fh, fw) {
            return Err(Error::shape(format!(
                "previous mask ({pc}, {ph}, {pw}) for frames of ({fh}, {fw})"
            )));
        }
        let mut below = None;
        let mut cell_h = Vec::with_capacity(k_levels);
        let mut fused_all = Vec::with_capacity(k_levels);
        for k in 0..k_levels {
            let level = &self.levels[k];
            let mask_k = g.downsample(prev_mask, level_stride(k_levels, k))?;
            let x = build_input(g, below, features.levels[k], mask_k)?;
            let spatial = bank.spatial(dir, k).copied();
            let temporal = bank.temporal(dir, k, object).copied();
            let state = directional_step(g, &self.store, level, dir, x, spatial.as_ref(), temporal.as_ref())?;
            bank.update(dir, k, object, state);
            let shape = g.value(state.h).shape().to_vec();
            let (h_f, h_b) = match dir {
                Direction::Forward => {
                    let hb = mode.bidirectional().then(|| g.zeros(&shape));
                    (state.h, hb)
                }
                Direction::Backward => {
                    let hf = h_fwd
                        .and_then(|h| h.get(k).copied())
                        .ok_or_else(|| Error::State("backward step needs forward hidden states".into()))?;
                    (hf, Some(state.h))
                }
            };
            let h_r = if mode.nonlocal() {
                Some(match reference {
                    RefSource::Zero => g.zeros(&shape),
                    RefSource::Bank => bank.reference(object)?[k],
                })
            } else {
                None
            };
            let fused = fuse(g, &self.store, level, mode, h_f, h_b, h_r)?;
            cell_h.push(state.h);
            fused_all.push(fused);
            below = Some(fused);
        }
        let logits = self.head.forward(g, &self.store, below.expect("at least one level"))?;
        Ok(ObjectStep {
            mask: g.sigmoid(logits),
            cell_h,
            fused: fused_all,
        })
    }

    /// One object at one frame through all levels, reading and updating the
    /// bank. Non-local modes need a primed bank.
    pub fn decode_object_frame(
        &self,
        g: &mut Graph<T>,
        features: &FeaturePyramid,
        object: usize,
        bank: &mut StateBank,
        prev_mask: Var,
        dir: Direction,
        h_fwd: Option<&[Var]>,
    ) -> Result<ObjectStep> {
        if self.mode().nonlocal() && !bank.is_primed() {
            return Err(Error::State("reference states have not been primed".into()));
        }
        self.object_step(g, features, object, bank, prev_mask, dir, h_fwd, RefSource::Bank)
    }

    /// Decodes the reference frame with the one-hot `reference_masks` and zero
    /// temporal state, freezing the fused states of every level and object
    /// into `bank`.
    pub fn prime_reference(
        &self,
        g: &mut Graph<T>,
        features: &FeaturePyramid,
        reference_masks: &[Var],
        bank: &mut StateBank,
    ) -> Result<()> {
        if reference_masks.len() != bank.objects() || bank.levels() != self.config.levels {
            return Err(Error::State(format!(
                "bank of {} objects × {} levels for {} masks",
                bank.objects(),
                bank.levels(),
                reference_masks.len()
            )));
        }
        let mut scratch = StateBank::new(bank.levels(), bank.objects());
        scratch.begin_frame(Direction::Forward);
        let mut states = Vec::with_capacity(reference_masks.len());
        for (o, &mask) in reference_masks.iter().enumerate() {
            let step = self.object_step(
                g,
                features,
                o,
                &mut scratch,
                mask,
                Direction::Forward,
                None,
                RefSource::Zero,
            )?;
            states.push(step.fused);
        }
        bank.set_reference(states)
    }

    /// Decodes a full sequence onto `g`.
    pub fn decode(&self, g: &mut Graph<T>, input: SequenceInput<'_>, opts: DecodeOptions<'_>) -> Result<DecodeOutput> {
        let n = input.frames.len();
        if n == 0 {
            return Err(Error::shape("empty sequence"));
        }
        if input.estimates.len() != n {
            return Err(Error::shape(format!(
                "{} estimates for {n} frames",
                input.estimates.len()
            )));
        }
        let shape = input.reference.shape;
        if input.frames.iter().chain(input.estimates).any(|f| f.shape != shape) {
            return Err(Error::shape("frames, estimates and reference must share one shape"));
        }
        if let Some(teacher) = opts.teacher {
            if teacher.len() != n || teacher.iter().any(|l| l.shape != shape) {
                return Err(Error::shape("teacher labels must match the frames"));
            }
        }
        let ids = select_objects(input.reference, self.config.objects_per_sequence)?;
        let m = ids.len();
        let mode = self.mode();
        let [h, w] = shape;
        let mask_var = |g: &mut Graph<T>, labels: &LabelMap2D, id: u32| -> Result<Var> {
            Ok(g.constant(Tensor::from_f32(&[1, h, w], &labels.indicator(id))?))
        };

        let mut bank = StateBank::new(self.config.levels, m);
        let mut trace = Vec::new();
        let mut cached: Vec<Option<FeaturePyramid>> = vec![None; n];
        let features =
            |g: &mut Graph<T>, cached: &mut Vec<Option<FeaturePyramid>>, t: usize| -> Result<FeaturePyramid> {
                if let Some(f) = &cached[t] {
                    return Ok(f.clone());
                }
                let f = self.frame_features(g, &input.frames[t], &input.estimates[t])?;
                if !opts.compact {
                    cached[t] = Some(f.clone());
                }
                Ok(f)
            };

        let mut reference_masks = Vec::with_capacity(m);
        for &id in &ids {
            reference_masks.push(mask_var(g, input.reference, id)?);
        }
        if mode.nonlocal() {
            let f0 = features(g, &mut cached, 0)?;
            self.prime_reference(g, &f0, &reference_masks, &mut bank)?;
        }

        let mut fwd_h: Vec<Vec<Vec<Var>>> = Vec::with_capacity(n);
        let mut pred_a: Vec<Vec<Var>> = Vec::with_capacity(n);
        let mut prev_a: Vec<Vec<(Var, MaskSource)>> = Vec::with_capacity(n);
        for t in 0..n {
            let feats = features(g, &mut cached, t)?;
            bank.begin_frame(Direction::Forward);
            let mut hs = Vec::with_capacity(m);
            let mut preds = Vec::with_capacity(m);
            let mut prevs = Vec::with_capacity(m);
            for o in 0..m {
                let (prev, source) = if t == 0 {
                    (reference_masks[o], MaskSource::Reference)
                } else if let Some(teacher) = opts.teacher {
                    (mask_var(g, &teacher[t - 1], ids[o])?, MaskSource::GroundTruth)
                } else {
                    (pred_a[t - 1][o], MaskSource::Prediction)
                };
                if opts.trace {
                    trace.push(TraceEntry {
                        t,
                        o,
                        direction: Direction::Forward,
                        spatial_was_zero: (0..self.config.levels)
                            .all(|k| bank.spatial(Direction::Forward, k).is_none()),
                        mask_source: source,
                    });
                }
                let step = self.decode_object_frame(g, &feats, o, &mut bank, prev, Direction::Forward, None)?;
                hs.push(step.cell_h);
                preds.push(step.mask);
                prevs.push((prev, source));
            }
            fwd_h.push(hs);
            pred_a.push(preds);
            prev_a.push(prevs);
            if opts.compact {
                let mut live = Live::default();
                live.bank(&mut bank);
                live.nested(&mut fwd_h);
                live.list2(&mut pred_a);
                live.pairs(&mut prev_a);
                live.list(&mut reference_masks);
                live.rebase(g);
                live.restore(&mut bank, &mut fwd_h, &mut pred_a, &mut prev_a, &mut reference_masks);
            }
        }

        if !mode.bidirectional() {
            return Ok(DecodeOutput {
                ids,
                masks: pred_a,
                trace,
            });
        }

        let mut out: Vec<Vec<Var>> = vec![Vec::new(); n];
        for t in (0..n).rev() {
            let feats = features(g, &mut cached, t)?;
            bank.begin_frame(Direction::Backward);
            let mut masks = Vec::with_capacity(m);
            for o in 0..m {
                let (prev, source) = if t == n - 1 {
                    prev_a[t][o]
                } else if let Some(teacher) = opts.teacher {
                    (mask_var(g, &teacher[t + 1], ids[o])?, MaskSource::GroundTruth)
                } else {
                    (pred_a[t + 1][o], MaskSource::Prediction)
                };
                if opts.trace {
                    trace.push(TraceEntry {
                        t,
                        o,
                        direction: Direction::Backward,
                        spatial_was_zero: (0..self.config.levels)
                            .all(|k| bank.spatial(Direction::Backward, k).is_none()),
                        mask_source: source,
                    });
                }
                let hf = fwd_h[t][o].clone();
                let step = self.decode_object_frame(g, &feats, o, &mut bank, prev, Direction::Backward, Some(&hf))?;
                masks.push(step.mask);
            }
            out[t] = masks;
            if opts.compact {
                let mut live = Live::default();
                live.bank(&mut bank);
                live.nested(&mut fwd_h);
                live.list2(&mut pred_a);
                live.pairs(&mut prev_a);
                live.list2(&mut out);
                live.rebase(g);
                live.restore_bwd(&mut bank, &mut fwd_h, &mut pred_a, &mut prev_a, &mut out);
            }
        }
        Ok(DecodeOutput { ids, masks: out, trace })
    }

    /// Inference-only decode returning plain masks.
    pub fn predict(&self, input: SequenceInput<'_>) -> Result<MaskSequence> {
        let mut g = Graph::inference();
        let out = self.decode(
            &mut g,
            input,
            DecodeOptions {
                compact: true,
                ..Default::default()
            },
        )?;
        let masks = out
            .masks
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| g.value(v).data().iter().map(|&x| Real::to_f64(x) as f32).collect())
                    .collect()
            })
            .collect();
        Ok(MaskSequence {
            ids: out.ids,
            shape: input.reference.shape,
            masks,
        })
    }
}

/// Collects the variables that must survive a graph rebase and maps them to
/// constants on the fresh graph.
#[derive(Default)]
struct Live {
    vars: Vec<Var>,
    map: HashMap<Var, Var>,
}

impl Live {
    fn add(&mut self, v: Var) {
        self.vars.push(v);
    }

    fn bank(&mut self, bank: &mut StateBank) {
        bank.for_each_var(|v| self.add(v));
    }

    fn nested(&mut self, x: &mut [Vec<Vec<Var>>]) {
        x.iter().flatten().flatten().for_each(|&v| self.add(v));
    }

    fn list2(&mut self, x: &mut [Vec<Var>]) {
        x.iter().flatten().for_each(|&v| self.add(v));
    }

    fn pairs(&mut self, x: &mut [Vec<(Var, MaskSource)>]) {
        x.iter().flatten().for_each(|&(v, _)| self.add(v));
    }

    fn list(&mut self, x: &mut [Var]) {
        x.iter().for_each(|&v| self.add(v));
    }

    fn rebase<T: Real>(&mut self, g: &mut Graph<T>) {
        let old = std::mem::replace(g, Graph::inference());
        for &v in &self.vars {
            self.map.entry(v).or_insert_with(|| g.constant(old.value(v).clone()));
        }
    }

    fn get(&self, v: Var) -> Var {
        self.map[&v]
    }

    fn remap_common(
        &self,
        bank: &mut StateBank,
        fwd_h: &mut [Vec<Vec<Var>>],
        pred_a: &mut [Vec<Var>],
        prev_a: &mut [Vec<(Var, MaskSource)>],
    ) {
        bank.map_vars(|v| self.get(v));
        fwd_h.iter_mut().flatten().flatten().for_each(|v| *v = self.get(*v));
        pred_a.iter_mut().flatten().for_each(|v| *v = self.get(*v));
        prev_a.iter_mut().flatten().for_each(|p| p.0 = self.get(p.0));
    }

    fn restore(
        &self,
        bank: &mut StateBank,
        fwd_h: &mut [Vec<Vec<Var>>],
        pred_a: &mut [Vec<Var>],
        prev_a: &mut [Vec<(Var, MaskSource)>],
        refs: &mut [Var],
    ) {
        self.remap_common(bank, fwd_h, pred_a, prev_a);
        refs.iter_mut().for_each(|v| *v = self.get(*v));
    }

    fn restore_bwd(
        &self,
        bank: &mut StateBank,
        fwd_h: &mut [Vec<Vec<Var>>],
        pred_a: &mut [Vec<Var>],
        prev_a: &mut [Vec<(Var, MaskSource)>],
        out: &mut [Vec<Var>],
    ) {
        self.remap_common(bank, fwd_h, pred_a, prev_a);
        out.iter_mut().flatten().for_each(|v| *v = self.get(*v));
    }
}
