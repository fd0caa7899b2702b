//! Differentiable building blocks: convolution layers and the ConvLSTM cell.
//!
//! The cell has no peephole terms. Gates are computed as
//!
//! ```text
//! i = σ(W_xi ∗ x + W_hi ∗ h + b_i)    f = σ(…)    o = σ(…)
//! g = tanh(W_xg ∗ x + W_hg ∗ h + b_g)
//! c' = f ⊙ c + i ⊙ g                  h' = o ⊙ tanh(c')
//! ```
//!
//! with the four gate kernels stacked along the output axis in the order
//! `i, f, o, g`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{init_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// A convolution layer with bias and "same" zero padding.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.insert(
            &format!("{name}.w"),
            init_uniform(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng),
        )?;
        let b = store.insert(&format!("{name}.b"), Tensor::zeros(&[c_out]))?;
        Ok(Conv { w, b, stride })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, Some(b), self.stride)
    }

    pub fn in_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.w).shape()[1]
    }

    pub fn out_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.w).shape()[0]
    }
}

/// Parameter handles of one ConvLSTM cell.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmParams {
    /// `(4·C_out, C_in, 3, 3)`
    pub w_x: ParamId,
    /// `(4·C_out, C_hid, 3, 3)`
    pub w_h: ParamId,
    /// `(4·C_out)`
    pub b: ParamId,
    pub hidden: usize,
}

impl ConvLstmParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_hid: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w_x = store.insert(
            &format!("{name}.w_x"),
            init_uniform(&[4 * c_out, c_in, 3, 3], c_in * 9, rng),
        )?;
        let w_h = store.insert(
            &format!("{name}.w_h"),
            init_uniform(&[4 * c_out, c_hid, 3, 3], c_hid * 9, rng),
        )?;
        let b = store.insert(&format!("{name}.b"), Tensor::zeros(&[4 * c_out]))?;
        Ok(ConvLstmParams {
            w_x,
            w_h,
            b,
            hidden: c_out,
        })
    }
}

/// Gate activations and new state of one cell evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CellOutput {
    pub h: Var,
    pub c: Var,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub candidate: Var,
}

/// One ConvLSTM step. `h_prev`/`c_prev` of `None` stand for all-zero maps
/// and skip the corresponding arithmetic.
pub fn convlstm_cell<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &ConvLstmParams,
    x: Var,
    h_prev: Option<Var>,
    c_prev: Option<Var>,
) -> Result<CellOutput> {
    let c_out = p.hidden;
    let (_, h, w) = g.value(x).chw()?;
    if let Some(c) = c_prev {
        if g.value(c).shape() != [c_out, h, w] {
            return Err(Error::shape(format!(
                "cell memory {:?} vs expected ({c_out}, {h}, {w})",
                g.value(c).shape()
            )));
        }
    }
    let wx = g.param(store, p.w_x);
    let b = g.param(store, p.b);
    let mut pre = g.conv2d(x, wx, Some(b), 1)?;
    if let Some(hp) = h_prev {
        let wh = g.param(store, p.w_h);
        let rec = g.conv2d(hp, wh, None, 1)?;
        pre = g.add(pre, rec)?;
    }
    let i = g.slice_channels(pre, 0, c_out)?;
    let f = g.slice_channels(pre, c_out, c_out)?;
    let o = g.slice_channels(pre, 2 * c_out, c_out)?;
    let cand = g.slice_channels(pre, 3 * c_out, c_out)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let o = g.sigmoid(o);
    let cand = g.tanh(cand);
    let write = g.mul(i, cand)?;
    let c = match c_prev {
        Some(cp) => {
            let keep = g.mul(f, cp)?;
            g.add(keep, write)?
        }
        None => write,
    };
    let tc = g.tanh(c);
    let hn = g.mul(o, tc)?;
    Ok(CellOutput {
        h: hn,
        c,
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        candidate: cand,
    })
}
