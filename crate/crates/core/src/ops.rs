//! Forward and backward kernels on `(C, H, W)` activation maps.
//!
//! Convolutions go through im2col + gemm. Backward kernels take the upstream
//! gradient `dy` and return input gradients; the tape in [`crate::graph`]
//! decides which ones to request.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

fn kernel_dims<T: Real>(w: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match w.shape()[..] {
        [co, ci, kh, kw] if kh % 2 == 1 && kw % 2 == 1 => Ok((co, ci, kh, kw)),
        _ => Err(Error::shape(format!(
            "kernel must be (C_out, C_in, odd, odd), got {:?}",
            w.shape()
        ))),
    }
}

/// Output extent of a zero-padded "same" convolution with the given stride.
pub fn conv_out_len(len: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    (len + 2 * pad - k) / stride + 1
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies inside
/// `[0, w)`.
fn valid_range(w: usize, wo: usize, kx: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    let hi = if w + pad > kx {
        ((w + pad - kx - 1) / stride + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Patch matrix `(C·kh·kw, Ho·Wo)`.
fn im2col<T: Real>(
    x: &[T],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let n = ho * wo;
    let mut cols = vec![T::zero(); ci * kh * kw * n];
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            let (ylo, yhi) = valid_range(h, ho, ky, ph, stride);
            for kx in 0..kw {
                let (xlo, xhi) = valid_range(w, wo, kx, pw, stride);
                let row = ((c * kh + ky) * kw + kx) * n;
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - ph;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    if stride == 1 {
                        let ix0 = xlo + kx - pw;
                        dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src[ox * stride + kx - pw];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Patch matrix transposed, `(Ho·Wo, C·kh·kw)`.
fn im2row<T: Real>(
    x: &[T],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let k = ci * kh * kw;
    let mut rows = vec![T::zero(); ho * wo * k];
    for oy in 0..ho {
        for ox in 0..wo {
            let dst = &mut rows[(oy * wo + ox) * k..(oy * wo + ox + 1) * k];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - ph as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pw as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = iy as usize * w + ix as usize;
                    for c in 0..ci {
                        dst[(c * kh + ky) * kw + kx] = x[c * h * w + src];
                    }
                }
            }
        }
    }
    rows
}

fn col2im<T: Real>(
    cols: &[T],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let n = ho * wo;
    let mut x = vec![T::zero(); ci * h * w];
    for c in 0..ci {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            let (ylo, yhi) = valid_range(h, ho, ky, ph, stride);
            for kx in 0..kw {
                let (xlo, xhi) = valid_range(w, wo, kx, pw, stride);
                let row = ((c * kh + ky) * kw + kx) * n;
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - ph;
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    for ox in xlo..xhi {
                        let ix = ox * stride + kx - pw;
                        dst[ix] = dst[ix] + src[ox];
                    }
                }
            }
        }
    }
    x
}

fn is_pointwise(kh: usize, kw: usize, stride: usize) -> bool {
    kh == 1 && kw == 1 && stride == 1
}

/// Zero-padded cross-correlation plus bias. `w` is `(C_out, C_in, kh, kw)`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize) -> Result<Tensor<T>> {
    let (ci, h, wd) = x.chw()?;
    let (co, wci, kh, kw) = kernel_dims(w)?;
    if wci != ci {
        return Err(Error::shape(format!(
            "kernel expects {wci} input channels, map has {ci}"
        )));
    }
    if let Some(b) = b {
        if b.shape() != [co] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {co} output channels",
                b.shape()
            )));
        }
    }
    if stride == 0 {
        return Err(Error::shape("stride must be positive"));
    }
    let (ho, wo) = (conv_out_len(h, kh, stride), conv_out_len(wd, kw, stride));
    let n = ho * wo;
    let mut out = vec![T::zero(); co * n];
    if let Some(b) = b {
        for (o, &bias) in b.data().iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = bias);
        }
    }
    let k = ci * kh * kw;
    if is_pointwise(kh, kw, stride) {
        matmul(co, k, n, w.data(), false, x.data(), false, T::one(), &mut out);
    } else {
        let cols = im2col(x.data(), (ci, h, wd), (kh, kw), stride, (ho, wo));
        matmul(co, k, n, w.data(), false, &cols, false, T::one(), &mut out);
    }
    Tensor::from_vec(&[co, ho, wo], out)
}

/// Gradients of [`conv2d`]: `(dx, dw, db)`; `dx`/`dw` only when requested.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>)> {
    let (ci, h, wd) = x.chw()?;
    let (co, _, kh, kw) = kernel_dims(w)?;
    let (_, ho, wo) = dy.chw()?;
    let n = ho * wo;
    let k = ci * kh * kw;
    let db = Tensor::from_vec(
        &[co],
        (0..co)
            .map(|o| dy.data()[o * n..(o + 1) * n].iter().copied().sum())
            .collect(),
    )?;
    let pointwise = is_pointwise(kh, kw, stride);
    let dw = if need_dw {
        let mut dw = vec![T::zero(); co * k];
        if pointwise {
            matmul(co, n, k, dy.data(), false, x.data(), true, T::zero(), &mut dw);
        } else {
            // pixel-major patches keep the long inner dimension contiguous
            let rows = im2row(x.data(), (ci, h, wd), (kh, kw), stride, (ho, wo));
            matmul(co, n, k, dy.data(), false, &rows, false, T::zero(), &mut dw);
        }
        Some(Tensor::from_vec(w.shape(), dw)?)
    } else {
        None
    };
    let dx = if need_dx {
        let mut dcols = vec![T::zero(); k * n];
        matmul(k, co, n, w.data(), true, dy.data(), false, T::zero(), &mut dcols);
        let dx = if pointwise {
            dcols
        } else {
            col2im(&dcols, (ci, h, wd), (kh, kw), stride, (ho, wo))
        };
        Some(Tensor::from_vec(x.shape(), dx)?)
    } else {
        None
    };
    Ok((dx, dw, db))
}

/// Source index pair and weight of the far neighbour along one axis for
/// half-pixel 2× upsampling: output `i` samples `(i + 0.5) / 2 − 0.5`,
/// clamped to `[0, len − 1]`.
fn bilinear_taps(len: usize, out: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); c * oh * ow];
    let src = x.data();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out[(ch * oh + oy) * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn upsample2x_backward<T: Real>(x_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = match x_shape[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("upsample input must be (C, H, W)")),
    };
    let (oh, ow) = (2 * h, 2 * w);
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    let mut dx = vec![T::zero(); c * h * w];
    let g = dy.data();
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let v = g[(ch * oh + oy) * ow + ox];
                let (top, bot) = (v * (T::one() - fy), v * fy);
                plane[y0 * w + x0] = plane[y0 * w + x0] + top * (T::one() - fx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + top * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + bot * (T::one() - fx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + bot * fx;
            }
        }
    }
    Tensor::from_vec(x_shape, dx)
}

/// Keeps the top-left sample of every `factor × factor` block.
pub fn downsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "({h}, {w}) not divisible by downsampling factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(c * oh * ow);
    let src = x.data();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out.push(src[(ch * h + y * factor) * w + xx * factor]);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn downsample_nearest_backward<T: Real>(x_shape: &[usize], dy: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(x_shape);
    let (c, h, w) = dx.chw()?;
    let (oh, ow) = (h / factor, w / factor);
    let g = dy.data();
    let d = dx.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                d[(ch * h + y * factor) * w + xx * factor] = g[(ch * oh + y) * ow + xx];
            }
        }
    }
    Ok(dx)
}

pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Soft intersection-over-union loss `1 − Σ m·g / Σ (m + g − m·g)`; the
/// empty/empty case is defined as 0.
pub fn soft_iou<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "tube lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let (inter, union) = soft_iou_terms(pred, target);
    if union <= T::zero() {
        return Ok(T::zero());
    }
    Ok(T::one() - inter / union)
}

pub(crate) fn soft_iou_terms<T: Real>(pred: &[T], target: &[T]) -> (T, T) {
    let mut inter = T::zero();
    let mut union = T::zero();
    for (&m, &g) in pred.iter().zip(target) {
        let mg = m * g;
        inter = inter + mg;
        union = union + m + g - mg;
    }
    (inter, union)
}
