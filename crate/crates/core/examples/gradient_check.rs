//! Compares reverse-mode gradients of a ConvLSTM cell with central
//! differences.

use crs::graph::Graph;
use crs::nn::{convlstm_cell, ConvLstmParams};
use crs::params::ParamStore;
use crs::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(
    store: &ParamStore<f64>,
    p: &ConvLstmParams,
    x: &Tensor<f64>,
    h: &Tensor<f64>,
    c: &Tensor<f64>,
) -> (Graph<f64>, crs::graph::Var) {
    let mut g = Graph::new();
    let (x, h, c) = (g.input(x.clone()), g.input(h.clone()), g.input(c.clone()));
    let out = convlstm_cell(&mut g, store, p, x, Some(h), Some(c)).unwrap();
    let s = g.sigmoid(out.h);
    let target = Tensor::filled(g.value(s).shape(), 1.0);
    let l = g.soft_iou(&[s], vec![target]).unwrap();
    (g, l)
}

fn main() -> crs::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let p = ConvLstmParams::register(&mut store, "cell", 2, 4, 2, &mut rng)?;
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (x, h, c) = (random(&[2, 5, 5]), random(&[4, 5, 5]), random(&[2, 5, 5]));

    let (g, l) = loss(&store, &p, &x, &h, &c);
    let grads = g.backward(l)?;
    let step = 1e-5;
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = grads.param(id).expect("parameter is used").clone();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..analytic.len() {
            let x0 = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = x0 + step;
            let (gu, lu) = loss(&store, &p, &x, &h, &c);
            store.value_mut(id).data_mut()[j] = x0 - step;
            let (gd, ld) = loss(&store, &p, &x, &h, &c);
            store.value_mut(id).data_mut()[j] = x0;
            let numeric = (gu.value(lu).item() - gd.value(ld).item()) / (2.0 * step);
            worst = worst.max((numeric - analytic.data()[j]).abs());
            scale = scale.max(numeric.abs());
        }
        println!("{:>10}: max relative error {:.2e}", store.name(id), worst / scale);
    }
    Ok(())
}
