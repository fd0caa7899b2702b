//! Synthetic tubular volumes with ground truth.
//!
//! Each object is a tube along z: a disc whose centre follows a Gaussian
//! random walk and whose radius is redrawn per frame. Interiors are bright
//! (0.8) and labeled, a two-pixel ring around each disc is dark (0.1) and
//! unlabeled, the background is 0.5. Gaussian noise is added and clipped to
//! [0, 1]. Artifact slices are blanked to 0 while their labels are kept.
//!
//! Randomness comes from ChaCha8 seeded with `seed`, so the output is the
//! same on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelMap, Volume};

pub const INTERIOR: f32 = 0.8;
pub const RING: f32 = 0.1;
pub const BACKGROUND: f32 = 0.5;
pub const RING_WIDTH: f64 = 2.0;

const TUBE_ATTEMPTS: usize = 200;
const STEP_ATTEMPTS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// `(z, y, x)`
    pub shape: [usize; 3],
    pub object_count: usize,
    /// Inclusive interior radius range in pixels.
    pub radius_range: (f64, f64),
    /// Per-frame standard deviation of the centre drift, per axis.
    pub drift_sigma: f64,
    pub noise_sigma: f64,
    pub artifact_slices: Vec<usize>,
    pub seed: u64,
    /// The last this-many objects end somewhere in the second half of the
    /// volume.
    pub terminating_objects: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shape: [30, 96, 96],
            object_count: 15,
            radius_range: (3.0, 5.0),
            drift_sigma: 0.5,
            noise_sigma: 0.05,
            artifact_slices: Vec::new(),
            seed: 0,
            terminating_objects: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let [z, y, x] = self.shape;
        let (lo, hi) = self.radius_range;
        let bad = |m: String| Err(Error::Config(m));
        if z == 0 || y == 0 || x == 0 {
            return bad(format!("shape {:?} has an empty axis", self.shape));
        }
        if self.object_count == 0 {
            return bad("object_count must be at least 1".into());
        }
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("radius_range ({lo}, {hi}) must satisfy 0 < min ≤ max"));
        }
        if 2.0 * (hi + RING_WIDTH) + 1.0 > y.min(x) as f64 {
            return bad(format!("radius {hi} does not fit a {y}×{x} frame"));
        }
        if !(self.drift_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("drift_sigma and noise_sigma must be non-negative".into());
        }
        if let Some(&s) = self.artifact_slices.iter().find(|&&s| s >= z) {
            return bad(format!("artifact slice {s} outside depth {z}"));
        }
        if self.terminating_objects > self.object_count {
            return bad("terminating_objects exceeds object_count".into());
        }
        if self.terminating_objects > 0 && z < 2 {
            return bad("terminating objects need a depth of at least 2".into());
        }
        Ok(())
    }
}

/// One tube's per-frame discs; `None` after the tube has ended.
#[derive(Clone, Debug)]
struct Tube {
    discs: Vec<Option<(f64, f64, f64)>>,
}

fn fits(t: usize, cy: f64, cx: f64, r: f64, tubes: &[Tube]) -> bool {
    tubes.iter().all(|other| match other.discs[t] {
        Some((oy, ox, or)) => {
            let d = ((cy - oy).powi(2) + (cx - ox).powi(2)).sqrt();
            d >= r + or + 2.0 * RING_WIDTH + 1.0
        }
        None => true,
    })
}

fn place_tube(spec: &SynthSpec, end: usize, tubes: &[Tube], rng: &mut ChaCha8Rng, drift: Normal<f64>) -> Option<Tube> {
    let [z, h, w] = spec.shape;
    let (lo, hi) = spec.radius_range;
    let margin = hi + RING_WIDTH;
    let (ymax, xmax) = (h as f64 - 1.0 - margin, w as f64 - 1.0 - margin);
    'attempt: for _ in 0..TUBE_ATTEMPTS {
        let mut discs = vec![None; z];
        let mut cy = rng.gen_range(margin..=ymax);
        let mut cx = rng.gen_range(margin..=xmax);
        for t in 0..end {
            let mut placed = false;
            for _ in 0..STEP_ATTEMPTS {
                let (ny, nx) = if t == 0 {
                    (cy, cx)
                } else {
                    (
                        (cy + drift.sample(rng)).clamp(margin, ymax),
                        (cx + drift.sample(rng)).clamp(margin, xmax),
                    )
                };
                let r = rng.gen_range(lo..=hi);
                if fits(t, ny, nx, r, tubes) {
                    discs[t] = Some((ny, nx, r));
                    cy = ny;
                    cx = nx;
                    placed = true;
                    break;
                }
                if t == 0 {
                    continue 'attempt;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        return Some(Tube { discs });
    }
    None
}

/// Deterministic `(volume, labels)` pair for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<(Volume, LabelMap)> {
    spec.validate()?;
    let [z, h, w] = spec.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drift = Normal::new(0.0, spec.drift_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_sigma as f32).map_err(|e| Error::Config(e.to_string()))?;

    let first_terminating = spec.object_count - spec.terminating_objects;
    let mut tubes: Vec<Tube> = Vec::with_capacity(spec.object_count);
    for o in 0..spec.object_count {
        let end = if o >= first_terminating {
            rng.gen_range(z.div_ceil(2)..z)
        } else {
            z
        };
        let tube = place_tube(spec, end, &tubes, &mut rng, drift).ok_or_else(|| {
            Error::Generation(format!(
                "could not place object {} after {TUBE_ATTEMPTS} attempts",
                o + 1
            ))
        })?;
        tubes.push(tube);
    }

    let mut intensity = vec![BACKGROUND; z * h * w];
    let mut labels = vec![0u32; z * h * w];
    for t in 0..z {
        let base = t * h * w;
        for (o, tube) in tubes.iter().enumerate() {
            let Some((cy, cx, r)) = tube.discs[t] else { continue };
            let outer = r + RING_WIDTH;
            let y0 = (cy - outer).floor().max(0.0) as usize;
            let y1 = ((cy + outer).ceil() as usize).min(h - 1);
            let x0 = (cx - outer).floor().max(0.0) as usize;
            let x1 = ((cx + outer).ceil() as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    let i = base + y * w + x;
                    if d <= r {
                        intensity[i] = INTERIOR;
                        labels[i] = o as u32 + 1;
                    } else if d <= outer {
                        intensity[i] = RING;
                    }
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in &mut intensity {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    for &s in &spec.artifact_slices {
        intensity[s * h * w..(s + 1) * h * w].fill(0.0);
    }
    Ok((Volume::new(spec.shape, intensity)?, LabelMap::new(spec.shape, labels)?))
}
