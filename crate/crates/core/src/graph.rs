//! Execution back ends for model code.
//!
//! Model code is written once against [`Graph`]. [`Eval`] runs it eagerly and
//! keeps nothing around, which is what inference wants. [`Tape`] records every
//! operation in execution order so [`Tape::backward`] can replay the adjoints
//! in reverse.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::ops::{self, Padding};
use crate::params::ParamStore;
use crate::tensor::{Real, Shape, Tensor};

pub trait Graph {
    type Node: Clone;

    fn input(&mut self, t: Tensor) -> Self::Node;
    fn param(&mut self, params: &ParamStore, name: &str) -> Result<Self::Node>;
    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor;

    fn conv2d(
        &mut self,
        x: &Self::Node,
        w: &Self::Node,
        b: Option<&Self::Node>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Node>;
    fn fully_connected(
        &mut self,
        x: &Self::Node,
        w: &Self::Node,
        b: Option<&Self::Node>,
    ) -> Result<Self::Node>;
    fn relu(&mut self, x: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;
    fn softmax_over_branches(&mut self, logits: &[Self::Node]) -> Result<Vec<Self::Node>>;
    fn global_avg_pool(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn avg_pool(&mut self, x: &Self::Node, k: usize) -> Result<Self::Node>;
    fn bilinear_upsample(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;
    fn concat_channels(&mut self, xs: &[Self::Node]) -> Result<Self::Node>;
    fn slice_channels(&mut self, x: &Self::Node, start: usize, len: usize) -> Result<Self::Node>;
    fn scale_channels(&mut self, x: &Self::Node, scale: &Self::Node) -> Result<Self::Node>;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn pad_reflect(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;
    fn crop(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;
    /// Mean absolute error as a 1×1×1×1 node.
    fn l1_loss(&mut self, pred: &Self::Node, target: &Self::Node) -> Result<Self::Node>;
    /// `sum(x * weights)` as a 1×1×1×1 node; `weights` is a constant.
    fn dot(&mut self, x: &Self::Node, weights: &Tensor) -> Result<Self::Node>;

    fn shape(&self, n: &Self::Node) -> Shape {
        self.value(n).shape()
    }
}

fn dot_value(x: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if x.shape() != weights.shape() {
        return shape_err("dot", format!("{} vs {}", x.shape(), weights.shape()));
    }
    let s: Real = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
    Ok(Tensor::scalar(s))
}

/// Eager evaluation without recording.
#[derive(Debug, Default)]
pub struct Eval;

impl Eval {
    pub fn new() -> Self {
        Eval
    }
}

type Shared = Arc<Tensor>;

impl Graph for Eval {
    type Node = Shared;

    fn input(&mut self, t: Tensor) -> Shared {
        Arc::new(t)
    }

    fn param(&mut self, params: &ParamStore, name: &str) -> Result<Shared> {
        Ok(Arc::new(params.get(name)?.clone()))
    }

    fn value<'a>(&'a self, n: &'a Shared) -> &'a Tensor {
        n
    }

    fn conv2d(
        &mut self,
        x: &Shared,
        w: &Shared,
        b: Option<&Shared>,
        stride: usize,
        padding: Padding,
    ) -> Result<Shared> {
        ops::conv2d(x, w, b.map(|b| &**b), stride, padding).map(Arc::new)
    }

    fn fully_connected(&mut self, x: &Shared, w: &Shared, b: Option<&Shared>) -> Result<Shared> {
        ops::fully_connected(x, w, b.map(|b| &**b)).map(Arc::new)
    }

    fn relu(&mut self, x: &Shared) -> Shared {
        Arc::new(ops::relu(x))
    }

    fn sigmoid(&mut self, x: &Shared) -> Shared {
        Arc::new(ops::sigmoid(x))
    }

    fn softmax_over_branches(&mut self, logits: &[Shared]) -> Result<Vec<Shared>> {
        let refs: Vec<&Tensor> = logits.iter().map(|t| &**t).collect();
        Ok(ops::softmax_over_branches(&refs)?
            .into_iter()
            .map(Arc::new)
            .collect())
    }

    fn global_avg_pool(&mut self, x: &Shared) -> Result<Shared> {
        ops::global_avg_pool(x).map(Arc::new)
    }

    fn avg_pool(&mut self, x: &Shared, k: usize) -> Result<Shared> {
        ops::avg_pool(x, k).map(Arc::new)
    }

    fn bilinear_upsample(&mut self, x: &Shared, h: usize, w: usize) -> Result<Shared> {
        ops::bilinear_upsample(x, h, w).map(Arc::new)
    }

    fn concat_channels(&mut self, xs: &[Shared]) -> Result<Shared> {
        let refs: Vec<&Tensor> = xs.iter().map(|t| &**t).collect();
        ops::concat_channels(&refs).map(Arc::new)
    }

    fn slice_channels(&mut self, x: &Shared, start: usize, len: usize) -> Result<Shared> {
        ops::slice_channels(x, start, len).map(Arc::new)
    }

    fn scale_channels(&mut self, x: &Shared, scale: &Shared) -> Result<Shared> {
        ops::scale_channels(x, scale).map(Arc::new)
    }

    fn add(&mut self, a: &Shared, b: &Shared) -> Result<Shared> {
        ops::add(a, b).map(Arc::new)
    }

    fn pad_reflect(&mut self, x: &Shared, h: usize, w: usize) -> Result<Shared> {
        ops::pad_reflect(x, h, w).map(Arc::new)
    }

    fn crop(&mut self, x: &Shared, h: usize, w: usize) -> Result<Shared> {
        ops::crop(x, h, w).map(Arc::new)
    }

    fn l1_loss(&mut self, pred: &Shared, target: &Shared) -> Result<Shared> {
        Ok(Arc::new(Tensor::scalar(ops::l1_loss(pred, target)?)))
    }

    fn dot(&mut self, x: &Shared, weights: &Tensor) -> Result<Shared> {
        dot_value(x, weights).map(Arc::new)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<String> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding },
    FullyConnected { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    /// Value holds the branch outputs concatenated along channels.
    Softmax { inputs: Vec<Var> },
    GlobalAvgPool(Var),
    AvgPool { x: Var, k: usize },
    Upsample(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    ScaleChannels { x: Var, scale: Var },
    Add(Var, Var),
    PadReflect(Var),
    Crop(Var),
    L1 { pred: Var, target: Var },
    Dot { x: Var, weights: Tensor },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::FullyConnected { .. } => "fully_connected",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax_over_branches",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::AvgPool { .. } => "avg_pool",
            Op::Upsample(_) => "bilinear_upsample",
            Op::Concat(_) => "concat_channels",
            Op::Slice { .. } => "slice_channels",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::Add(..) => "add",
            Op::PadReflect(_) => "pad_reflect",
            Op::Crop(_) => "crop",
            Op::L1 { .. } => "l1_loss",
            Op::Dot { .. } => "dot",
        }
    }
}

#[derive(Debug)]
struct Entry {
    value: Tensor,
    op: Op,
}

/// Deliberate adjoint corruption, used to check that gradient checking
/// actually catches broken backward rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdjointFault {
    /// Multiply every conv weight adjoint by this factor.
    ScaleConvWeight(Real),
}

/// Adjoints of named parameters after [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.by_name.insert(name.into(), g);
    }

    /// First parameter holding a non-finite adjoint.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.by_name
            .iter()
            .find(|(_, g)| !g.is_finite())
            .map(|(k, _)| k.as_str())
    }
}

/// Wengert list of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
    params: HashMap<String, Var>,
    leaf_grads: HashMap<usize, Tensor>,
    fault: Option<AdjointFault>,
    backward_visits: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: AdjointFault) -> Self {
        Tape {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of operations visited by the last backward pass.
    pub fn backward_visits(&self) -> usize {
        self.backward_visits
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.entries.push(Entry { value, op });
        Var(self.entries.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    /// Adjoint of a leaf after backward. Leaves the loss does not depend on
    /// get a zero adjoint.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    /// The first recorded operation whose output is not finite, described
    /// by op name (or parameter name for leaves).
    pub fn first_non_finite(&self) -> Option<(usize, String)> {
        self.entries
            .iter()
            .enumerate()
            .find(|(_, e)| !e.value.is_finite())
            .map(|(i, e)| match &e.op {
                Op::Leaf { param: Some(name) } => (i, format!("parameter `{name}`")),
                op => (i, op.name().to_string()),
            })
    }

    /// Reverse pass from the scalar `loss`. Every operation on the tape is
    /// visited once, in reverse execution order.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.val(loss).len() != 1 {
            return shape_err(
                "backward",
                format!("loss must be a scalar, got {}", self.val(loss).shape()),
            );
        }
        let n = self.entries.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.val(loss).shape(), 1.0));
        self.leaf_grads.clear();
        self.backward_visits = 0;

        for i in (0..n).rev() {
            self.backward_visits += 1;
            let Some(g) = grads[i].take() else {
                if let Op::Leaf { .. } = self.entries[i].op {
                    self.leaf_grads
                        .insert(i, Tensor::zeros(self.entries[i].value.shape()));
                }
                continue;
            };
            let contributions = self.adjoint(i, &g)?;
            if let Op::Leaf { .. } = self.entries[i].op {
                self.leaf_grads.insert(i, g);
                continue;
            }
            for (v, c) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        let mut out = Gradients::default();
        for (name, v) in &self.params {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                out.insert(name.clone(), g.clone());
            }
        }
        Ok(out)
    }

    fn adjoint(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let entry = &self.entries[i];
        let out = match &entry.op {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { x, w, b, stride, padding } => {
                let (gx, mut gw, gb) =
                    ops::conv2d_backward(self.val(*x), self.val(*w), *stride, *padding, g)?;
                if let Some(AdjointFault::ScaleConvWeight(f)) = self.fault {
                    gw = gw.map(|v| v * f);
                }
                let mut v = vec![(*x, gx), (*w, gw)];
                if let Some(b) = b {
                    v.push((*b, gb.reshape(self.val(*b).shape())?));
                }
                v
            }
            Op::FullyConnected { x, w, b } => {
                let (gx, gw, gb) = ops::fully_connected_backward(self.val(*x), self.val(*w), g);
                let mut v = vec![(*x, gx), (*w, gw)];
                if let Some(b) = b {
                    v.push((*b, gb.reshape(self.val(*b).shape())?));
                }
                v
            }
            Op::Relu(x) => vec![(*x, ops::relu_backward(self.val(*x), g))],
            Op::Sigmoid(x) => vec![(*x, ops::sigmoid_backward(&entry.value, g))],
            Op::Softmax { inputs } => {
                let c = self.val(inputs[0]).shape().c;
                let outs = split_channels(&entry.value, inputs.len(), c)?;
                let gs = split_channels(g, inputs.len(), c)?;
                inputs
                    .iter()
                    .copied()
                    .zip(ops::softmax_over_branches_backward(&outs, &gs))
                    .collect()
            }
            Op::GlobalAvgPool(x) => {
                vec![(*x, ops::global_avg_pool_backward(self.val(*x).shape(), g))]
            }
            Op::AvgPool { x, k } => {
                vec![(*x, ops::avg_pool_backward(self.val(*x).shape(), *k, g))]
            }
            Op::Upsample(x) => {
                vec![(*x, ops::bilinear_upsample_backward(self.val(*x).shape(), g))]
            }
            Op::Concat(xs) => {
                let mut start = 0;
                let mut v = Vec::with_capacity(xs.len());
                for x in xs {
                    let c = self.val(*x).shape().c;
                    v.push((*x, ops::slice_channels(g, start, c)?));
                    start += c;
                }
                v
            }
            Op::Slice { x, start } => {
                vec![(*x, ops::slice_channels_backward(self.val(*x).shape(), *start, g))]
            }
            Op::ScaleChannels { x, scale } => {
                let (gx, gs) = ops::scale_channels_backward(self.val(*x), self.val(*scale), g);
                vec![(*x, gx), (*scale, gs)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::PadReflect(x) => vec![(*x, ops::pad_reflect_backward(self.val(*x).shape(), g))],
            Op::Crop(x) => vec![(*x, ops::crop_backward(self.val(*x).shape(), g))],
            Op::L1 { pred, target } => {
                let gp = ops::l1_loss_backward(self.val(*pred), self.val(*target), g.item()?);
                let gt = gp.map(|v| -v);
                vec![(*pred, gp), (*target, gt)]
            }
            Op::Dot { x, weights } => {
                let s = g.item()?;
                vec![(*x, weights.map(|w| w * s))]
            }
        };
        Ok(out)
    }
}

fn split_channels(t: &Tensor, parts: usize, c: usize) -> Result<Vec<Tensor>> {
    (0..parts).map(|p| ops::slice_channels(t, p * c, c)).collect()
}

impl Graph for Tape {
    type Node = Var;

    fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None })
    }

    fn param(&mut self, params: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = params.get(name)?.clone();
        let v = self.push(
            t,
            Op::Leaf {
                param: Some(name.to_string()),
            },
        );
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn value<'a>(&'a self, n: &'a Var) -> &'a Tensor {
        self.val(*n)
    }

    fn conv2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let y = ops::conv2d(self.val(*x), self.val(*w), b.map(|b| self.val(*b)), stride, padding)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x: *x,
                w: *w,
                b: b.copied(),
                stride,
                padding,
            },
        ))
    }

    fn fully_connected(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = ops::fully_connected(self.val(*x), self.val(*w), b.map(|b| self.val(*b)))?;
        Ok(self.push(
            y,
            Op::FullyConnected {
                x: *x,
                w: *w,
                b: b.copied(),
            },
        ))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = ops::relu(self.val(*x));
        self.push(y, Op::Relu(*x))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let y = ops::sigmoid(self.val(*x));
        self.push(y, Op::Sigmoid(*x))
    }

    fn softmax_over_branches(&mut self, logits: &[Var]) -> Result<Vec<Var>> {
        let refs: Vec<&Tensor> = logits.iter().map(|v| self.val(*v)).collect();
        let outs = ops::softmax_over_branches(&refs)?;
        let c = outs[0].shape().c;
        let stacked = ops::concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let joint = self.push(
            stacked,
            Op::Softmax {
                inputs: logits.to_vec(),
            },
        );
        (0..logits.len())
            .map(|b| self.slice_channels(&joint, b * c, c))
            .collect()
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.val(*x))?;
        Ok(self.push(y, Op::GlobalAvgPool(*x)))
    }

    fn avg_pool(&mut self, x: &Var, k: usize) -> Result<Var> {
        let y = ops::avg_pool(self.val(*x), k)?;
        Ok(self.push(y, Op::AvgPool { x: *x, k }))
    }

    fn bilinear_upsample(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::bilinear_upsample(self.val(*x), h, w)?;
        Ok(self.push(y, Op::Upsample(*x)))
    }

    fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = xs.iter().map(|v| self.val(*v)).collect();
        let y = ops::concat_channels(&refs)?;
        Ok(self.push(y, Op::Concat(xs.to_vec())))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice_channels(self.val(*x), start, len)?;
        Ok(self.push(y, Op::Slice { x: *x, start }))
    }

    fn scale_channels(&mut self, x: &Var, scale: &Var) -> Result<Var> {
        let y = ops::scale_channels(self.val(*x), self.val(*scale))?;
        Ok(self.push(y, Op::ScaleChannels { x: *x, scale: *scale }))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::add(self.val(*a), self.val(*b))?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }

    fn pad_reflect(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::pad_reflect(self.val(*x), h, w)?;
        Ok(self.push(y, Op::PadReflect(*x)))
    }

    fn crop(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::crop(self.val(*x), h, w)?;
        Ok(self.push(y, Op::Crop(*x)))
    }

    fn l1_loss(&mut self, pred: &Var, target: &Var) -> Result<Var> {
        let y = Tensor::scalar(ops::l1_loss(self.val(*pred), self.val(*target))?);
        Ok(self.push(
            y,
            Op::L1 {
                pred: *pred,
                target: *target,
            },
        ))
    }

    fn dot(&mut self, x: &Var, weights: &Tensor) -> Result<Var> {
        let y = dot_value(self.val(*x), weights)?;
        Ok(self.push(
            y,
            Op::Dot {
                x: *x,
                weights: weights.clone(),
            },
        ))
    }
}
