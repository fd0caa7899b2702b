//! Reverse-mode differentiation on a flat tape.
//!
//! Every operation appends a node holding its value; nodes are created in
//! topological order, so the backward pass is a single reverse sweep.
//! Parameters are bound once per graph and their gradients summed over all
//! uses.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Constant,
    Input,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Upsample2x(Var),
    Downsample {
        x: Var,
        factor: usize,
    },
    SoftIou {
        parts: Vec<Var>,
        targets: Vec<Tensor<T>>,
    },
    Mean(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    frozen_params: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            frozen_params: false,
        }
    }

    /// A graph whose parameters are treated as constants; nothing on it
    /// records gradients unless an explicit [`Graph::input`] is added.
    pub fn inference() -> Self {
        Graph {
            frozen_params: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is kept (used for gradient checks).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    /// Binds parameter `id` of `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, !self.frozen_params);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, stride }, needs))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "elementwise operands {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut value = self.value(a).clone();
        for (v, &o) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v = *v * o;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(ops::sigmoid);
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.tanh());
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(T::zero()));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Channel concatenation of `(C_i, H, W)` maps.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concatenation of zero maps"))?;
        let (_, h, w) = self.value(*first).chw()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(format!("cannot concatenate ({ph}, {pw}) with ({h}, {w})")));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::from_vec(&[channels, h, w], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// Channels `start..start + len` of a `(C, H, W)` map.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!("channel slice {start}..{} of {c}", start + len)));
        }
        let data = self.value(x).data()[start * h * w..(start + len) * h * w].to_vec();
        let value = Tensor::from_vec(&[len, h, w], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Slice { x, start }, needs))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let value = ops::upsample2x(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Upsample2x(x), needs))
    }

    pub fn downsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        let value = ops::downsample_nearest(self.value(x), factor)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Downsample { x, factor }, needs))
    }

    /// Soft-IoU loss between the concatenation of `parts` (a predicted tube)
    /// and the concatenation of `targets`.
    pub fn soft_iou(&mut self, parts: &[Var], targets: Vec<Tensor<T>>) -> Result<Var> {
        if parts.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} predicted frames vs {} target frames",
                parts.len(),
                targets.len()
            )));
        }
        let mut inter = T::zero();
        let mut union = T::zero();
        for (&p, t) in parts.iter().zip(&targets) {
            if self.value(p).shape() != t.shape() {
                return Err(Error::shape(format!(
                    "prediction {:?} vs target {:?}",
                    self.value(p).shape(),
                    t.shape()
                )));
            }
            let (i, u) = ops::soft_iou_terms(self.value(p).data(), t.data());
            inter = inter + i;
            union = union + u;
        }
        let loss = if union > T::zero() {
            T::one() - inter / union
        } else {
            T::zero()
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftIou {
                parts: parts.to_vec(),
                targets,
            },
            needs,
        ))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::shape("mean of zero terms"));
        }
        if let Some(bad) = terms.iter().find(|&&t| self.value(t).len() != 1) {
            return Err(Error::shape(format!(
                "mean expects scalars, got {:?}",
                self.value(*bad).shape()
            )));
        }
        let n = T::lit(terms.len() as f64);
        let value = terms.iter().map(|&t| self.value(t).item()).sum::<T>() / n;
        let needs = terms.iter().any(|&t| self.needs(t));
        Ok(self.push(Tensor::scalar(value), Op::Mean(terms.to_vec()), needs))
    }

    /// Gradients of the scalar `loss` with respect to every node that needs
    /// one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let keep = matches!(node.op, Op::Input | Op::Param);
            let dy = if keep {
                continue;
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            self.propagate(node, &dy, &mut grads)?;
        }
        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::Conv2d { x, w, b, stride } => {
                let (dx, dw, db) = ops::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    dy,
                    *stride,
                    self.needs(*x),
                    self.needs(*w),
                )?;
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Mul(a, b) => {
                let mut da = dy.clone();
                for (g, &o) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                    *g = *g * o;
                }
                let mut db = dy.clone();
                for (g, &o) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *g = *g * o;
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Sigmoid(a) => {
                let mut da = dy.clone();
                for (g, &s) in da.data_mut().iter_mut().zip(node.value.data()) {
                    *g = *g * s * (T::one() - s);
                }
                acc(*a, da);
            }
            Op::Tanh(a) => {
                let mut da = dy.clone();
                for (g, &t) in da.data_mut().iter_mut().zip(node.value.data()) {
                    *g = *g * (T::one() - t * t);
                }
                acc(*a, da);
            }
            Op::Relu(a) => {
                let mut da = dy.clone();
                for (g, &o) in da.data_mut().iter_mut().zip(node.value.data()) {
                    if o <= T::zero() {
                        *g = T::zero();
                    }
                }
                acc(*a, da);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let g = Tensor::from_vec(self.value(p).shape(), dy.data()[offset..offset + n].to_vec())?;
                    offset += n;
                    acc(p, g);
                }
            }
            Op::Slice { x, start } => {
                let (_, h, w) = self.value(*x).chw()?;
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let begin = start * h * w;
                dx.data_mut()[begin..begin + dy.len()].copy_from_slice(dy.data());
                acc(*x, dx);
            }
            Op::Upsample2x(x) => {
                acc(*x, ops::upsample2x_backward(self.value(*x).shape(), dy)?);
            }
            Op::Downsample { x, factor } => {
                acc(
                    *x,
                    ops::downsample_nearest_backward(self.value(*x).shape(), dy, *factor)?,
                );
            }
            Op::SoftIou { parts, targets } => {
                let mut inter = T::zero();
                let mut union = T::zero();
                for (&p, t) in parts.iter().zip(targets) {
                    let (i, u) = ops::soft_iou_terms(self.value(p).data(), t.data());
                    inter = inter + i;
                    union = union + u;
                }
                if union <= T::zero() {
                    return Ok(());
                }
                // d/dm (1 − I/U) = −(g·U − I·(1 − g)) / U²
                let scale = dy.item() / (union * union);
                for (&p, t) in parts.iter().zip(targets) {
                    let g = Tensor::from_vec(
                        t.shape(),
                        t.data()
                            .iter()
                            .map(|&gt| -(gt * union - inter * (T::one() - gt)) * scale)
                            .collect(),
                    )?;
                    acc(p, g);
                }
            }
            Op::Mean(terms) => {
                let share = dy.item() / T::lit(terms.len() as f64);
                for &t in terms {
                    acc(t, Tensor::scalar(share));
                }
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of an [`Graph::input`] leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Adds the parameter gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (&id, g) in &self.params {
            store.grad_mut(id).add_assign(g);
        }
    }
}
