//! Volume inference: watershed seeding, mask binarization and chunked
//! propagation along z.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::decoder::{initial_estimates, select_objects, MaskSequence, Network, SequenceInput};
use crate::error::{Error, Result};
use crate::volume::{Image2D, LabelMap, LabelMap2D, Volume};

pub const WATERSHED_SIGMA: f64 = 2.0;
pub const WATERSHED_H: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Frames per chunk; `None` uses the model's sequence length.
    pub chunk_length: Option<usize>,
    pub z_overlap: usize,
    pub binarize_threshold: f32,
    pub discover_new_objects: bool,
    pub min_new_object_area: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            chunk_length: None,
            z_overlap: 1,
            binarize_threshold: 0.5,
            discover_new_objects: false,
            min_new_object_area: 20,
        }
    }
}

/// Heap entry ordered by ascending value, then ascending insertion order.
#[derive(Clone, Copy)]
struct Entry {
    value: f64,
    order: u64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.order.cmp(&self.order))
    }
}

fn neighbours(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (i / w, i % w);
    [
        (y > 0).then(|| i - w),
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(data: &[f64], shape: [usize; 2], sigma: f64) -> Vec<f64> {
    let [h, w] = shape;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &c)| c * data[y * w + clamp(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &c)| c * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

/// Suppresses minima shallower than `h`: reconstruction by erosion of
/// `f + h` over `f`.
fn h_minima(f: &[f64], shape: [usize; 2], h: f64) -> Vec<f64> {
    let [rows, cols] = shape;
    let mut g: Vec<f64> = f.iter().map(|v| v + h).collect();
    let mut heap: BinaryHeap<Entry> = g
        .iter()
        .enumerate()
        .map(|(i, &value)| Entry {
            value,
            order: i as u64,
            index: i,
        })
        .collect();
    let mut order = g.len() as u64;
    while let Some(Entry { value, index, .. }) = heap.pop() {
        if value > g[index] {
            continue;
        }
        for n in neighbours(index, rows, cols) {
            let cand = value.max(f[n]);
            if cand < g[n] {
                g[n] = cand;
                heap.push(Entry {
                    value: cand,
                    order,
                    index: n,
                });
                order += 1;
            }
        }
    }
    g
}

/// Labels 4-connected regional-minimum plateaus 1..R in raster order of
/// their first pixel.
fn regional_minima(f: &[f64], shape: [usize; 2]) -> Vec<u32> {
    let [h, w] = shape;
    let mut labels = vec![0u32; h * w];
    let mut visited = vec![false; h * w];
    let mut next = 0u32;
    for start in 0..h * w {
        if visited[start] {
            continue;
        }
        let level = f[start];
        let mut plateau = vec![start];
        let mut stack = vec![start];
        visited[start] = true;
        let mut is_min = true;
        while let Some(p) = stack.pop() {
            for n in neighbours(p, h, w) {
                if f[n] < level {
                    is_min = false;
                } else if f[n] == level && !visited[n] {
                    visited[n] = true;
                    plateau.push(n);
                    stack.push(n);
                }
            }
        }
        if is_min {
            next += 1;
            plateau.iter().for_each(|&p| labels[p] = next);
        }
    }
    labels
}

/// Marker-based watershed of one frame. The relief is the Gaussian-smoothed
/// (σ = 2) inverted intensity; markers are its regional minima after
/// suppressing minima shallower than 0.05; flooding is 4-connected.
pub fn watershed2d(frame: &Image2D) -> LabelMap2D {
    let shape = frame.shape;
    let [h, w] = shape;
    let inverted: Vec<f64> = frame.data.iter().map(|&v| 1.0 - v as f64).collect();
    let relief = gaussian_blur(&inverted, shape, WATERSHED_SIGMA);
    let mut labels = regional_minima(&h_minima(&relief, shape, WATERSHED_H), shape);

    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            heap.push(Entry {
                value: relief[i],
                order,
                index: i,
            });
            order += 1;
        }
    }
    while let Some(Entry { index, .. }) = heap.pop() {
        for n in neighbours(index, h, w) {
            if labels[n] == 0 {
                labels[n] = labels[index];
                heap.push(Entry {
                    value: relief[n],
                    order,
                    index: n,
                });
                order += 1;
            }
        }
    }
    LabelMap2D { shape, data: labels }
}

/// Per pixel, the id of the most probable enabled object if its probability
/// reaches `threshold`, else 0. Ties go to the lowest slot; slots with id 0
/// are ignored.
pub fn masks_to_labels(masks: &[&[f32]], ids: &[u32], shape: [usize; 2], threshold: f32) -> Result<LabelMap2D> {
    let n = shape[0] * shape[1];
    if masks.len() != ids.len() || masks.iter().any(|m| m.len() != n) {
        return Err(Error::shape(format!(
            "{} masks for {} ids over {n} pixels",
            masks.len(),
            ids.len()
        )));
    }
    let data = (0..n)
        .map(|p| {
            let mut best: Option<(f32, u32)> = None;
            for (m, &id) in masks.iter().zip(ids) {
                if id != 0 && best.is_none_or(|(v, _)| m[p] > v) {
                    best = Some((m[p], id));
                }
            }
            match best {
                Some((v, id)) if v >= threshold => id,
                _ => 0,
            }
        })
        .collect();
    Ok(LabelMap2D { shape, data })
}

/// Label maps of every frame of a decoded sequence. An object whose support
/// is empty at some frame is disabled for all later frames.
pub fn sequence_to_labels(seq: &MaskSequence, threshold: f32) -> Result<Vec<LabelMap2D>> {
    let mut ids = seq.ids.clone();
    let mut out = Vec::with_capacity(seq.frames());
    for t in 0..seq.frames() {
        let masks: Vec<&[f32]> = (0..seq.objects()).map(|o| seq.mask(t, o)).collect();
        let labels = masks_to_labels(&masks, &ids, seq.shape, threshold)?;
        let present = labels.ids();
        for id in ids.iter_mut() {
            if !present.contains(id) {
                *id = 0;
            }
        }
        out.push(labels);
    }
    Ok(out)
}

/// `[start, end)` ranges of the z-chunks.
pub fn chunk_ranges(depth: usize, chunk: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if chunk == 0 || overlap >= chunk {
        return Err(Error::Config(format!(
            "need 0 ≤ z_overlap < chunk_length, got {overlap} and {chunk}"
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk).min(depth);
        out.push((start, end));
        if end == depth {
            return Ok(out);
        }
        start = end - overlap;
    }
}

/// Result of [`infer_volume`].
#[derive(Clone, Debug)]
pub struct Inference {
    pub labels: LabelMap,
    pub chunks: Vec<(usize, usize)>,
    /// Seed label map each chunk was decoded from.
    pub seeds: Vec<LabelMap2D>,
}

/// Adds watershed regions of `frame` that no seeded object touches, up to
/// `cap` objects in total.
fn discover(seed: &mut LabelMap2D, frame: &Image2D, cap: usize, min_area: usize, next_id: &mut u32) {
    let regions = watershed2d(frame);
    let mut active = seed.ids().len();
    let mut claimed = BTreeSet::new();
    for (&r, &s) in regions.data.iter().zip(&seed.data) {
        if s != 0 {
            claimed.insert(r);
        }
    }
    let mut skipped = 0;
    for r in regions.ids() {
        if claimed.contains(&r) || regions.area(r) < min_area {
            continue;
        }
        if active >= cap {
            skipped += 1;
            continue;
        }
        for (s, &l) in seed.data.iter_mut().zip(&regions.data) {
            if l == r {
                *s = *next_id;
            }
        }
        *next_id += 1;
        active += 1;
    }
    if skipped > 0 {
        log::warn!("{skipped} new regions left as background: object capacity {cap} reached");
    }
}

/// Segments `volume` by propagating `seed` (or a watershed of the first
/// frame) through overlapping z-chunks.
pub fn infer_volume(
    volume: &Volume,
    seed: Option<&LabelMap2D>,
    net: &Network<f32>,
    cfg: &InferenceConfig,
) -> Result<Inference> {
    let [depth, h, w] = volume.shape();
    let chunk = cfg.chunk_length.unwrap_or(net.config().sequence_length);
    let ranges = chunk_ranges(depth, chunk, cfg.z_overlap)?;
    let first = volume.slice(0)?;
    let mut current = match seed {
        Some(s) if s.shape != [h, w] => {
            return Err(Error::shape(format!("seed {:?} for frames of {:?}", s.shape, [h, w])))
        }
        Some(s) => s.clone(),
        None => watershed2d(&first),
    };
    let cap = net.config().objects_per_sequence;
    let mut next_id = current.ids().last().map_or(1, |m| m + 1);
    let mut out: Vec<Option<LabelMap2D>> = vec![None; depth];
    let mut seeds = Vec::with_capacity(ranges.len());
    for (c, &(start, end)) in ranges.iter().enumerate() {
        if c > 0 {
            current = out[start]
                .clone()
                .expect("overlap frame predicted by the previous chunk");
            if cfg.discover_new_objects {
                discover(
                    &mut current,
                    &volume.slice(start)?,
                    cap,
                    cfg.min_new_object_area,
                    &mut next_id,
                );
            }
        }
        seeds.push(current.clone());
        if current.ids().is_empty() {
            log::warn!("chunk {c} starts without objects; frames {start}..{end} stay background");
            for slot in &mut out[start..end] {
                slot.get_or_insert_with(|| LabelMap2D::zeros([h, w]));
            }
            continue;
        }
        // keep only the ids the decoder will carry
        let kept = select_objects(&current, cap)?;
        current.data.iter_mut().for_each(|v| {
            if !kept.contains(v) {
                *v = 0
            }
        });
        let frames: Vec<Image2D> = (start..end).map(|z| volume.slice(z)).collect::<Result<_>>()?;
        let estimates = initial_estimates(&current, frames.len());
        let seq = net.predict(SequenceInput {
            frames: &frames,
            reference: &current,
            estimates: &estimates,
        })?;
        for (t, labels) in sequence_to_labels(&seq, cfg.binarize_threshold)?
            .into_iter()
            .enumerate()
        {
            out[start + t].get_or_insert(labels);
        }
    }
    let slices: Vec<LabelMap2D> = out.into_iter().map(|s| s.expect("every frame is covered")).collect();
    Ok(Inference {
        labels: LabelMap::from_slices(&slices)?,
        chunks: ranges,
        seeds,
    })
}
