//! Hungarian-matched soft-IoU loss over object tubes.
//!
//! A tube is one object's masks over every frame of a sequence. Predicted
//! tubes are matched one-to-one to ground-truth tubes by minimum total
//! sIoU; the loss is the mean sIoU of the matched pairs and the matching
//! itself is not differentiated.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops;
use crate::tensor::{Real, Tensor};
use crate::volume::LabelMap2D;

/// `1 − Σ m·g / Σ (m + g − m·g)`, 0 for two empty tubes.
pub fn siou(m: &[f64], g: &[f64]) -> Result<f64> {
    ops::soft_iou(m, g)
}

/// Total cost of `assignment` (row `i` → column `assignment[i]`), summed in
/// row order.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

fn check_square(cost: &[Vec<f64>]) -> Result<usize> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::shape(format!(
            "cost matrix must be square, got a row of {} in a {n}-row matrix",
            row.len()
        )));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::shape("cost matrix has non-finite entries"));
    }
    Ok(n)
}

/// Minimum-cost assignment by the shortest augmenting path method with
/// potentials, `O(n³)`. Returns `row → column`.
fn min_assignment(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = rows.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = none)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[rows[i0 - 1]][cols[j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Optimal assignment of a square cost matrix, `row → column`. Among optimal
/// assignments the lexicographically smallest is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = check_square(cost)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<usize> = (0..n).collect();
    let best = assignment_cost(cost, &min_assignment(cost, &all, &all));
    let scale = cost.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale * n as f64;

    // Fix rows in order, each to the smallest column that still admits an
    // optimal completion.
    let mut fixed = Vec::with_capacity(n);
    let mut prefix = 0.0;
    let mut free: Vec<usize> = all.clone();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free.iter().enumerate() {
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
            let tail = if rest_rows.is_empty() {
                0.0
            } else {
                let a = min_assignment(cost, &rest_rows, &rest_cols);
                a.iter()
                    .enumerate()
                    .map(|(r, &c)| cost[rest_rows[r]][rest_cols[c]])
                    .sum()
            };
            if prefix + cost[i][j] + tail <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("an optimal completion always exists");
        let j = free.remove(pos);
        prefix += cost[i][j];
        fixed.push(j);
    }
    Ok(fixed)
}

/// Ground-truth tubes as `[t][slot]` tensors of shape `(1, H, W)`; a slot
/// with id 0 is an empty tube.
pub fn gt_tubes<T: Real>(labels: &[LabelMap2D], ids: &[u32]) -> Result<Vec<Vec<Tensor<T>>>> {
    labels
        .iter()
        .map(|l| {
            let [h, w] = l.shape;
            ids.iter()
                .map(|&id| Tensor::from_f32(&[1, h, w], &l.indicator(id)))
                .collect()
        })
        .collect()
}

fn tube_values<T: Real>(frames: impl Iterator<Item = Vec<T>>) -> Vec<f64> {
    frames.flat_map(|f| f.into_iter().map(|v| v.to_f64())).collect()
}

/// Cost matrix `c[i][j] = sIoU(pred tube i, gt tube j)`.
pub fn cost_matrix<T: Real>(g: &Graph<T>, pred: &[Vec<Var>], gt: &[Vec<Tensor<T>>]) -> Result<Vec<Vec<f64>>> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let m = pred.first().map_or(0, Vec::len);
    if pred.iter().any(|f| f.len() != m) || gt.iter().any(|f| f.len() != m) {
        return Err(Error::shape(format!("every frame must carry {m} tubes")));
    }
    let p: Vec<Vec<f64>> = (0..m)
        .map(|i| tube_values(pred.iter().map(|f| g.value(f[i]).data().to_vec())))
        .collect();
    let q: Vec<Vec<f64>> = (0..m)
        .map(|j| tube_values(gt.iter().map(|f| f[j].data().to_vec())))
        .collect();
    p.iter().map(|pi| q.iter().map(|qj| siou(pi, qj)).collect()).collect()
}

/// Mean matched sIoU as a graph node, and the matching `pred → gt`.
pub fn sequence_loss<T: Real>(g: &mut Graph<T>, pred: &[Vec<Var>], gt: &[Vec<Tensor<T>>]) -> Result<(Var, Vec<usize>)> {
    let cost = cost_matrix(g, pred, gt)?;
    if cost.is_empty() {
        return Err(Error::shape("sequence without objects"));
    }
    let assignment = hungarian(&cost)?;
    let mut terms = Vec::with_capacity(assignment.len());
    for (i, &j) in assignment.iter().enumerate() {
        let parts: Vec<Var> = pred.iter().map(|f| f[i]).collect();
        let targets: Vec<Tensor<T>> = gt.iter().map(|f| f[j].clone()).collect();
        terms.push(g.soft_iou(&parts, targets)?);
    }
    Ok((g.mean(&terms)?, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
        fn rec(cost: &[Vec<f64>], perm: &mut Vec<usize>, used: &mut [bool], best: &mut (f64, Vec<usize>)) {
            let n = cost.len();
            if perm.len() == n {
                let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                if c < best.0 {
                    *best = (c, perm.clone());
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(cost, perm, used, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = (f64::INFINITY, Vec::new());
        rec(cost, &mut Vec::new(), &mut vec![false; cost.len()], &mut best);
        best
    }

    #[test]
    fn siou_examples() {
        assert_eq!(siou(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(siou(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((siou(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(siou(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn small_matrices() {
        assert_eq!(hungarian(&[vec![3.0]]).unwrap(), vec![0]);
        let a = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a, vec![0, 1]);
        let c = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a, vec![1, 0]);
        assert!((assignment_cost(&c, &a) - 0.3).abs() < 1e-15);
        assert!(hungarian(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let zeros = vec![vec![0.0; 4]; 4];
        assert_eq!(hungarian(&zeros).unwrap(), vec![0, 1, 2, 3]);
        let c = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(hungarian(&c).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let c: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0..4) as f64).collect())
                .collect();
            let a = hungarian(&c).unwrap();
            let (best, perm) = brute_force(&c);
            assert_eq!(assignment_cost(&c, &a), best);
            assert_eq!(a, perm, "{c:?}");
        }
    }

    #[test]
    fn swapped_slots_give_zero_loss() {
        let mut g = Graph::<f64>::new();
        let a = Tensor::from_vec(&[1, 1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
        let pred = vec![vec![g.constant(b.clone()), g.constant(a.clone())]];
        let (loss, assign) = sequence_loss(&mut g, &pred, &[vec![a, b]]).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        assert_eq!(assign, vec![1, 0]);
    }
}
