//! Channel attention and kernel-selecting fusion.
//!
//! Both blocks read their weights from a [`ParamStore`] under a name prefix,
//! e.g. `ca.fc1.w` or `sk.conv5.b`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::Padding;
use crate::params::{he_uniform, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Branch kernel sizes of the kernel-selecting block, in gate order
/// (alpha, beta, gamma).
pub const SK_KERNELS: [usize; 3] = [3, 5, 7];
const SK_GATES: [&str; 3] = ["alpha", "beta", "gamma"];

pub fn fc_weight(cout: usize, cin: usize, rng: &mut ChaCha8Rng) -> Tensor {
    he_uniform(Shape::new(cout, cin, 1, 1), rng)
}

pub fn bias(c: usize) -> Tensor {
    Tensor::zeros([1, c, 1, 1])
}

/// Weights of a squeeze-excitation style channel gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams {
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

impl ChannelAttentionParams {
    pub fn init(channels: usize, mid: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if mid == 0 || channels == 0 {
            return Err(Error::Invalid(format!(
                "channel attention needs channels >= 1 and mid >= 1, got {channels}/{mid}"
            )));
        }
        Ok(ChannelAttentionParams {
            fc1_w: fc_weight(mid, channels, rng),
            fc1_b: bias(mid),
            fc2_w: fc_weight(channels, mid, rng),
            fc2_b: bias(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.fc2_w.shape().n
    }

    pub fn mid(&self) -> usize {
        self.fc1_w.shape().n
    }

    pub fn register(self, store: &mut ParamStore, prefix: &str) {
        store.insert(format!("{prefix}.fc1.w"), self.fc1_w);
        store.insert(format!("{prefix}.fc1.b"), self.fc1_b);
        store.insert(format!("{prefix}.fc2.w"), self.fc2_w);
        store.insert(format!("{prefix}.fc2.b"), self.fc2_b);
    }
}

/// Weights of the three-branch kernel-selecting block.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSelectParams {
    /// `(weight, bias)` for the 3×3, 5×5 and 7×7 branch convolutions.
    pub convs: [(Tensor, Tensor); 3],
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    /// Per-branch expansion layers producing the alpha', beta', gamma' logits.
    pub fc2: [(Tensor, Tensor); 3],
}

impl KernelSelectParams {
    pub fn init(channels: usize, mid: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if mid == 0 || channels == 0 {
            return Err(Error::Invalid(format!(
                "kernel select needs channels >= 1 and mid >= 1, got {channels}/{mid}"
            )));
        }
        let convs = SK_KERNELS.map(|k| (he_uniform(Shape::new(channels, channels, k, k), rng), bias(channels)));
        let fc1_w = fc_weight(mid, channels, rng);
        let fc2 = [(); 3].map(|_| (fc_weight(channels, mid, rng), bias(channels)));
        Ok(KernelSelectParams {
            convs,
            fc1_w,
            fc1_b: bias(mid),
            fc2,
        })
    }

    pub fn register(self, store: &mut ParamStore, prefix: &str) {
        for (k, (w, b)) in SK_KERNELS.iter().zip(self.convs) {
            store.insert(format!("{prefix}.conv{k}.w"), w);
            store.insert(format!("{prefix}.conv{k}.b"), b);
        }
        store.insert(format!("{prefix}.fc1.w"), self.fc1_w);
        store.insert(format!("{prefix}.fc1.b"), self.fc1_b);
        for (gate, (w, b)) in SK_GATES.iter().zip(self.fc2) {
            store.insert(format!("{prefix}.fc2.{gate}.w"), w);
            store.insert(format!("{prefix}.fc2.{gate}.b"), b);
        }
    }
}

/// Default reduction width of the kernel-selecting gate for `channels`
/// input channels.
pub fn default_sk_mid(channels: usize) -> usize {
    (channels / 8).max(4)
}

/// `GAP -> FC1 -> ReLU -> FC2`, the shared squeeze-expand trunk.
fn squeeze_expand<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    pooled: &G::Node,
) -> Result<G::Node> {
    let w1 = g.param(store, &format!("{prefix}.fc1.w"))?;
    let b1 = g.param(store, &format!("{prefix}.fc1.b"))?;
    let h = g.fully_connected(pooled, &w1, Some(&b1))?;
    Ok(g.relu(&h))
}

/// Per-channel gate `mu = sigmoid(FC2(ReLU(FC1(GAP(u)))))`.
pub fn channel_weights<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    u: &G::Node,
) -> Result<G::Node> {
    let pooled = g.global_avg_pool(u)?;
    let h = squeeze_expand(g, store, prefix, &pooled)?;
    let w2 = g.param(store, &format!("{prefix}.fc2.w"))?;
    let b2 = g.param(store, &format!("{prefix}.fc2.b"))?;
    let z = g.fully_connected(&h, &w2, Some(&b2))?;
    Ok(g.sigmoid(&z))
}

/// Rescales every channel of `u` by its attention weight.
pub fn channel_attention<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    u: &G::Node,
) -> Result<G::Node> {
    let mu = channel_weights(g, store, prefix, u)?;
    g.scale_channels(u, &mu)
}

/// The three branch outputs `U'`, `U''`, `U'''`.
pub fn kernel_select_branches<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    u: &G::Node,
) -> Result<[G::Node; 3]> {
    let mut out = Vec::with_capacity(3);
    for k in SK_KERNELS {
        let w = g.param(store, &format!("{prefix}.conv{k}.w"))?;
        let b = g.param(store, &format!("{prefix}.conv{k}.b"))?;
        out.push(g.conv2d(u, &w, Some(&b), 1, Padding::Same)?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

/// Softmax gates `(alpha, beta, gamma)` from the pooled branch sum.
pub fn gate_weights<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    pooled: &G::Node,
) -> Result<[G::Node; 3]> {
    let h = squeeze_expand(g, store, prefix, pooled)?;
    let mut logits = Vec::with_capacity(3);
    for gate in SK_GATES {
        let w = g.param(store, &format!("{prefix}.fc2.{gate}.w"))?;
        let b = g.param(store, &format!("{prefix}.fc2.{gate}.b"))?;
        logits.push(g.fully_connected(&h, &w, Some(&b))?);
    }
    let weights = g.softmax_over_branches(&logits)?;
    Ok(weights.try_into().unwrap_or_else(|_| unreachable!()))
}

/// `V_c = alpha_c * U'_c + beta_c * U''_c + gamma_c * U'''_c`.
pub fn fuse_branches<G: Graph>(
    g: &mut G,
    branches: &[G::Node; 3],
    weights: &[G::Node; 3],
) -> Result<G::Node> {
    let mut acc = g.scale_channels(&branches[0], &weights[0])?;
    for (b, w) in branches.iter().zip(weights).skip(1) {
        let term = g.scale_channels(b, w)?;
        acc = g.add(&acc, &term)?;
    }
    Ok(acc)
}

pub fn kernel_select<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    u: &G::Node,
) -> Result<G::Node> {
    let branches = kernel_select_branches(g, store, prefix, u)?;
    let s01 = g.add(&branches[0], &branches[1])?;
    let sum = g.add(&s01, &branches[2])?;
    let pooled = g.global_avg_pool(&sum)?;
    let weights = gate_weights(g, store, prefix, &pooled)?;
    fuse_branches(g, &branches, &weights)
}
