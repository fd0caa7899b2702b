//! Strided-convolution feature pyramid.
//!
//! Level 0 is the deepest map (stride `2^(L−1)`), level `L−1` has the input
//! resolution. Each level is two 3×3 conv + ReLU layers; every level except
//! the full-resolution one starts with a stride-2 convolution of the level
//! above it. A 1×1 projection per level maps the features to the decoder
//! width.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};
use crate::volume::Image2D;

/// Feature maps ordered deepest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Stride of level `k` in an `levels`-deep pyramid.
pub fn level_stride(levels: usize, k: usize) -> usize {
    1 << (levels - 1 - k)
}

#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<[Conv; 2]>,
    projections: Vec<Conv>,
    input_channels: usize,
}

impl Encoder {
    /// `widths[k]` is the channel count of pyramid level `k` (deepest first).
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        input_channels: usize,
        widths: &[usize],
        decoder_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if widths.is_empty() || input_channels == 0 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "encoder needs positive widths and input channels, got {widths:?} / {input_channels}"
            )));
        }
        let levels = widths.len();
        let mut blocks = vec![None; levels];
        let mut c_in = input_channels;
        for k in (0..levels).rev() {
            let stride = if k == levels - 1 { 1 } else { 2 };
            let first = Conv::register(store, &format!("enc.l{k}.conv1"), c_in, widths[k], 3, stride, rng)?;
            let second = Conv::register(store, &format!("enc.l{k}.conv2"), widths[k], widths[k], 3, 1, rng)?;
            blocks[k] = Some([first, second]);
            c_in = widths[k];
        }
        let projections = (0..levels)
            .map(|k| Conv::register(store, &format!("proj.l{k}"), widths[k], decoder_width, 1, 1, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            blocks: blocks.into_iter().map(Option::unwrap).collect(),
            projections,
            input_channels,
        })
    }

    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn projection(&self, k: usize) -> &Conv {
        &self.projections[k]
    }

    /// Runs the backbone on a `(C_in, H, W)` input.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<FeaturePyramid> {
        let (c, h, w) = g.value(x).chw()?;
        let levels = self.levels();
        let factor = level_stride(levels, 0);
        if c != self.input_channels {
            return Err(Error::shape(format!(
                "encoder expects {} input channels, got {c}",
                self.input_channels
            )));
        }
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(format!("frame ({h}, {w}) not divisible by {factor}")));
        }
        let mut out = vec![None; levels];
        let mut cur = x;
        for k in (0..levels).rev() {
            let [first, second] = &self.blocks[k];
            let a = first.forward(g, store, cur)?;
            let a = g.relu(a);
            let b = second.forward(g, store, a)?;
            cur = g.relu(b);
            let (_, lh, lw) = g.value(cur).chw()?;
            let s = level_stride(levels, k);
            assert_eq!((lh * s, lw * s), (h, w), "pyramid level {k} has the wrong stride");
            out[k] = Some(cur);
        }
        Ok(FeaturePyramid {
            levels: out.into_iter().map(Option::unwrap).collect(),
        })
    }

    /// 1×1 projection of every level to the decoder width.
    pub fn project<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        pyramid: &FeaturePyramid,
    ) -> Result<FeaturePyramid> {
        if pyramid.len() != self.levels() {
            return Err(Error::shape(format!(
                "pyramid has {} levels, projections expect {}",
                pyramid.len(),
                self.levels()
            )));
        }
        let levels = pyramid
            .levels
            .iter()
            .zip(&self.projections)
            .map(|(&f, p)| p.forward(g, store, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeaturePyramid { levels })
    }
}

/// Stacks `input_channels − 1` copies of the intensity frame followed by the
/// initial-estimate channel.
pub fn encoder_input<T: Real>(frame: &Image2D, estimate: &Image2D, input_channels: usize) -> Result<Tensor<T>> {
    if frame.shape != estimate.shape {
        return Err(Error::shape(format!(
            "frame {:?} and estimate {:?} differ",
            frame.shape, estimate.shape
        )));
    }
    if input_channels < 2 {
        return Err(Error::Config("encoder input needs at least 2 channels".into()));
    }
    let [h, w] = frame.shape;
    let mut data = Vec::with_capacity(input_channels * h * w);
    for _ in 0..input_channels - 1 {
        data.extend(frame.data.iter().map(|&v| T::lit(v as f64)));
    }
    data.extend(estimate.data.iter().map(|&v| T::lit(v as f64)));
    Tensor::from_vec(&[input_channels, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::seeded_rng;

    fn setup(widths: &[usize], c_dec: usize) -> (ParamStore<f64>, Encoder) {
        let mut store = ParamStore::new();
        let enc = Encoder::register(&mut store, 2, widths, c_dec, &mut seeded_rng(4)).unwrap();
        (store, enc)
    }

    #[test]
    fn default_widths_shapes() {
        let (store, enc) = setup(&[64, 48, 32, 16, 8], 16);
        let mut g = Graph::inference();
        let x = g.constant(Tensor::filled(&[2, 64, 64], 0.5));
        let p = enc.encode(&mut g, &store, x).unwrap();
        let shapes: Vec<Vec<usize>> = p.levels.iter().map(|&v| g.value(v).shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![64, 4, 4],
                vec![48, 8, 8],
                vec![32, 16, 16],
                vec![16, 32, 32],
                vec![8, 64, 64]
            ]
        );
        let proj = enc.project(&mut g, &store, &p).unwrap();
        assert!(proj.levels.iter().all(|&v| g.value(v).shape()[0] == 16));
    }

    #[test]
    fn zero_input_zero_bias_is_zero() {
        let (store, enc) = setup(&[8, 8, 4], 4);
        let mut g = Graph::inference();
        let x = g.zeros(&[2, 16, 16]);
        let p = enc.encode(&mut g, &store, x).unwrap();
        assert!(p.levels.iter().all(|&v| g.value(v).data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn encoding_is_pure() {
        let (store, enc) = setup(&[8, 4], 4);
        let frame = Tensor::from_vec(&[2, 8, 8], (0..128).map(|v| (v % 7) as f64 / 7.0).collect()).unwrap();
        let mut g = Graph::inference();
        let a = g.constant(frame.clone());
        let b = g.constant(frame);
        let pa = enc.encode(&mut g, &store, a).unwrap();
        let pb = enc.encode(&mut g, &store, b).unwrap();
        for (x, y) in pa.levels.iter().zip(&pb.levels) {
            assert_eq!(g.value(*x), g.value(*y));
        }
    }

    #[test]
    fn indivisible_frame_rejected() {
        let (store, enc) = setup(&[8, 8, 4], 4);
        let mut g = Graph::inference();
        let x = g.zeros(&[2, 10, 16]);
        assert!(matches!(enc.encode(&mut g, &store, x), Err(Error::Shape(_))));
    }

    #[test]
    fn projection_identity_and_zero() {
        let (mut store, enc) = setup(&[4, 4], 4);
        let mut g = Graph::inference();
        let f = g.constant(Tensor::from_vec(&[4, 2, 2], (0..16).map(|v| v as f64).collect()).unwrap());
        let pyr = FeaturePyramid { levels: vec![f, f] };
        for k in 0..2 {
            let p = enc.projection(k);
            let mut eye = Tensor::zeros(&[4, 4, 1, 1]);
            for i in 0..4 {
                eye.data_mut()[i * 4 + i] = 1.0;
            }
            store.set(p.w, eye).unwrap();
        }
        let out = enc.project(&mut g, &store, &pyr).unwrap();
        assert_eq!(g.value(out.levels[0]), g.value(f));
        store.value_mut(enc.projection(1).w).fill(0.0);
        let mut g = Graph::inference();
        let f = g.constant(Tensor::filled(&[4, 2, 2], 3.0));
        let out = enc
            .project(&mut g, &store, &FeaturePyramid { levels: vec![f, f] })
            .unwrap();
        assert!(g.value(out.levels[1]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn narrower_projection_changes_width() {
        let mut store = ParamStore::<f64>::new();
        let enc = Encoder::register(&mut store, 2, &[32, 32], 16, &mut seeded_rng(0)).unwrap();
        let mut g = Graph::inference();
        let f = g.constant(Tensor::filled(&[32, 4, 4], 1.0));
        let out = enc
            .project(&mut g, &store, &FeaturePyramid { levels: vec![f, f] })
            .unwrap();
        assert_eq!(g.value(out.levels[0]).shape(), &[16, 4, 4]);
    }

    #[test]
    fn rgb_style_replication() {
        let frame = Image2D::filled([2, 2], 0.25);
        let est = Image2D::filled([2, 2], 1.0);
        let t: Tensor<f32> = encoder_input(&frame, &est, 4).unwrap();
        assert_eq!(t.shape(), &[4, 2, 2]);
        assert_eq!(&t.data()[..12], &[0.25; 12]);
        assert_eq!(&t.data()[12..], &[1.0; 4]);
    }
}
