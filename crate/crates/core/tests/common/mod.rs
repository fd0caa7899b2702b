//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness. Nothing here calls the library routine it is used to check.

#![allow(dead_code)]

use crs::graph::{Graph, Var};
use crs::params::ParamStore;
use crs::tensor::Tensor;
use crs::{ConsistencyMode, LabelMap, ModelConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Largest gradient discrepancy of one tensor, relative to the largest
/// numeric gradient magnitude.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub rel_err: f64,
    pub scale: f64,
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        (0.0, 0.0)
    } else {
        (diff / scale, scale)
    }
}

/// Compares reverse-mode gradients of `loss` with central differences for
/// every input tensor and every parameter in `store`.
pub fn grad_check(
    store: &mut ParamStore<f64>,
    inputs: &mut [Tensor<f64>],
    loss: &dyn Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Var,
) -> Vec<GradReport> {
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let l = loss(&mut g, store, &vars);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let l = loss(&mut g, store, &vars);
    let grads = g.backward(l).expect("scalar loss");

    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; inputs[i].len()],
        };
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            inputs[i].data_mut()[j] = x0 + FD_STEP;
            let up = eval(store, inputs);
            inputs[i].data_mut()[j] = x0 - FD_STEP;
            let down = eval(store, inputs);
            inputs[i].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let (e, s) = rel_err(&analytic, &numeric);
        out.push(GradReport {
            name: format!("input {i}"),
            rel_err: e,
            scale: s,
        });
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic: Vec<f64> = match grads.param(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; store.value(id).len()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let x0 = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = x0 + FD_STEP;
            let up = eval(store, inputs);
            store.value_mut(id).data_mut()[j] = x0 - FD_STEP;
            let down = eval(store, inputs);
            store.value_mut(id).data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let (e, s) = rel_err(&analytic, &numeric);
        out.push(GradReport {
            name: store.name(id).to_string(),
            rel_err: e,
            scale: s,
        });
    }
    out
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_bool(0.5) as u8 as f64).collect()).unwrap()
}

/// A smooth scalar readout of an arbitrary map: soft IoU of its sigmoid
/// against a fixed binary target.
pub fn readout(g: &mut Graph<f64>, y: Var, target: &Tensor<f64>) -> Var {
    let s = g.sigmoid(y);
    g.soft_iou(&[s], vec![target.clone()]).unwrap()
}

/// Minimum total cost over all permutations, by exhaustive enumeration.
pub fn exhaustive_min(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    if cost.is_empty() {
        0.0
    } else {
        best
    }
}

/// Adapted Rand error by explicit pair enumeration over ground-truth
/// foreground voxels. Unlabeled predicted voxels never pair with anything.
/// Each voxel also pairs with itself, which is the contingency convention
/// `Σ n_ij² / Σ s_i²`.
pub fn pair_oracle(pred: &[u32], gt: &[u32]) -> f64 {
    let fg: Vec<(u32, u32)> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &g)| g != 0)
        .map(|(&p, &g)| (p, g))
        .collect();
    let (mut tp, mut pp, mut gp) = (0u64, 0u64, 0u64);
    for a in 0..fg.len() {
        for b in 0..fg.len() {
            let same_p = a == b || (fg[a].0 != 0 && fg[a].0 == fg[b].0);
            let same_g = fg[a].1 == fg[b].1;
            tp += (same_p && same_g) as u64;
            pp += same_p as u64;
            gp += same_g as u64;
        }
    }
    let p = tp as f64 / pp as f64;
    let r = tp as f64 / gp as f64;
    1.0 - 2.0 * p * r / (p + r)
}

pub fn random_labels(rng: &mut ChaCha8Rng, shape: [usize; 3], max_id: u32) -> LabelMap {
    let n = shape.iter().product();
    LabelMap::new(shape, (0..n).map(|_| rng.gen_range(0..=max_id)).collect()).unwrap()
}

/// Smallest network that still exercises every level and direction.
pub fn tiny_model(mode: ConsistencyMode, objects: usize, frames: usize) -> ModelConfig {
    ModelConfig {
        levels: 2,
        hidden_width: 2,
        objects_per_sequence: objects,
        sequence_length: frames,
        consistency_mode: mode,
        input_channels: 2,
        encoder_widths: vec![3, 2],
    }
}

/// Desk-scale model used by the training experiments.
pub fn desk_model(mode: ConsistencyMode, objects: usize, frames: usize) -> ModelConfig {
    ModelConfig {
        levels: 5,
        hidden_width: 8,
        objects_per_sequence: objects,
        sequence_length: frames,
        consistency_mode: mode,
        input_channels: 2,
        encoder_widths: vec![16, 16, 12, 8, 8],
    }
}
