//! The three-stage pyramid denoiser: noise estimation with channel
//! attention, a multi-level pyramid of independent U-Nets, and
//! kernel-selecting fusion.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, default_sk_mid, SK_KERNELS};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Eval, Graph};
use crate::ops::Padding;
use crate::params::{he_uniform, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRC1";

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// 1 for raw/grayscale, 3 for RGB.
    pub in_channels: usize,
    pub est_width: usize,
    /// Number of 3×3 convolutions in the noise-estimation stage.
    pub est_depth: usize,
    /// Hidden width of the channel-attention gate.
    pub ca_mid: usize,
    pub pyramid_kernels: Vec<usize>,
    pub unet_depth: usize,
    pub unet_base_width: usize,
    /// Hidden width of the kernel-selecting gate. `None` picks
    /// `max(C / 8, 4)` for the fused channel count `C`.
    pub sk_mid: Option<usize>,
    pub channel_attention: bool,
    pub kernel_select: bool,
    /// Predict `noisy + correction` instead of the clean image directly.
    pub predict_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            est_width: 32,
            est_depth: 5,
            ca_mid: 2,
            pyramid_kernels: vec![1, 2, 4, 8, 16],
            unet_depth: 3,
            unet_base_width: 32,
            sk_mid: None,
            channel_attention: true,
            kernel_select: true,
            predict_residual: false,
        }
    }
}

/// A component that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    ChannelAttention,
    Pyramid,
    KernelSelect,
}

impl Component {
    pub const ALL: [Component; 3] = [
        Component::ChannelAttention,
        Component::Pyramid,
        Component::KernelSelect,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Component::ChannelAttention => "channel_attention",
            Component::Pyramid => "pyramid",
            Component::KernelSelect => "kernel_select",
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every stage.
    pub fn micro(in_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            est_width: 4,
            est_depth: 3,
            ca_mid: 2,
            pyramid_kernels: vec![1, 2],
            unet_depth: 2,
            unet_base_width: 4,
            sk_mid: None,
            ..ModelConfig::default()
        }
    }

    pub fn without(&self, c: Component) -> Self {
        let mut cfg = self.clone();
        match c {
            Component::ChannelAttention => cfg.channel_attention = false,
            Component::Pyramid => cfg.pyramid_kernels = vec![1],
            Component::KernelSelect => cfg.kernel_select = false,
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !matches!(self.in_channels, 1 | 3) {
            return bad(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.est_width == 0 || self.unet_base_width == 0 || self.ca_mid == 0 {
            return bad("widths must be >= 1".into());
        }
        if self.sk_mid == Some(0) {
            return bad("sk_mid must be >= 1".into());
        }
        if self.est_depth < 2 {
            return bad(format!("est_depth must be >= 2, got {}", self.est_depth));
        }
        if self.unet_depth == 0 {
            return bad("unet_depth must be >= 1".into());
        }
        if self.pyramid_kernels.first() != Some(&1) {
            return bad("pyramid_kernels must start with 1".into());
        }
        if self.pyramid_kernels.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "pyramid_kernels must be strictly increasing, got {:?}",
                self.pyramid_kernels
            ));
        }
        Ok(())
    }

    /// Channel count entering the pyramid stage.
    pub fn stage2_channels(&self) -> usize {
        2 * self.in_channels
    }

    /// Channel count entering the fusion stage: every pyramid level plus the
    /// stage-2 input itself.
    pub fn fusion_channels(&self) -> usize {
        (self.pyramid_kernels.len() + 1) * self.stage2_channels()
    }

    pub fn sk_mid_resolved(&self) -> usize {
        self.sk_mid
            .unwrap_or_else(|| default_sk_mid(self.fusion_channels()))
    }

    /// Spatial multiple the padded input must satisfy.
    pub fn size_multiple(&self) -> usize {
        let kmax = *self.pyramid_kernels.last().unwrap_or(&1);
        kmax << (self.unet_depth - 1)
    }

    pub fn unet_width(&self, level: usize) -> usize {
        self.unet_base_width << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    He,
    Zero,
}

fn conv_entry(out: &mut Vec<(String, Shape, Init)>, name: &str, cout: usize, cin: usize, k: usize) {
    out.push((format!("{name}.w"), Shape::new(cout, cin, k, k), Init::He));
    out.push((format!("{name}.b"), Shape::new(1, cout, 1, 1), Init::Zero));
}

/// Every parameter of the network in construction order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Shape, Init)> {
    let mut out = Vec::new();
    let cin = cfg.in_channels;
    let w = cfg.est_width;
    for i in 0..cfg.est_depth - 1 {
        let c = if i == 0 { cin } else { w };
        conv_entry(&mut out, &format!("est.conv{i}"), w, c, 3);
    }
    if cfg.channel_attention {
        conv_entry(&mut out, "ca.fc1", cfg.ca_mid, w, 1);
        conv_entry(&mut out, "ca.fc2", w, cfg.ca_mid, 1);
    }
    conv_entry(&mut out, &format!("est.conv{}", cfg.est_depth - 1), cin, w, 3);

    let c2 = cfg.stage2_channels();
    for l in 0..cfg.pyramid_kernels.len() {
        unet_layout(&mut out, &format!("pyr{l}"), c2, cfg.unet_depth, cfg.unet_base_width);
    }

    let cf = cfg.fusion_channels();
    if cfg.kernel_select {
        let mid = cfg.sk_mid_resolved();
        for k in SK_KERNELS {
            conv_entry(&mut out, &format!("sk.conv{k}"), cf, cf, k);
        }
        conv_entry(&mut out, "sk.fc1", mid, cf, 1);
        for gate in ["alpha", "beta", "gamma"] {
            conv_entry(&mut out, &format!("sk.fc2.{gate}"), cf, mid, 1);
        }
    }
    conv_entry(&mut out, "out", cin, cf, 1);
    out
}

fn unet_layout(out: &mut Vec<(String, Shape, Init)>, prefix: &str, c: usize, depth: usize, base: usize) {
    let width = |i: usize| base << i;
    for i in 0..depth {
        let cin = if i == 0 { c } else { width(i - 1) };
        conv_entry(out, &format!("{prefix}.enc{i}.a"), width(i), cin, 3);
        conv_entry(out, &format!("{prefix}.enc{i}.b"), width(i), width(i), 3);
    }
    for i in (0..depth - 1).rev() {
        conv_entry(out, &format!("{prefix}.dec{i}.up"), width(i), width(i + 1), 3);
        conv_entry(out, &format!("{prefix}.dec{i}.a"), width(i), 2 * width(i), 3);
        conv_entry(out, &format!("{prefix}.dec{i}.b"), width(i), width(i), 3);
    }
    conv_entry(out, &format!("{prefix}.out"), c, base, 1);
}

/// Number of scalar parameters a model with this configuration holds.
pub fn param_count(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|(_, s, _)| s.numel()).sum()
}

/// Channel counts observed during one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardTrace {
    pub padded_h: usize,
    pub padded_w: usize,
    pub stage2_in_channels: usize,
    pub pyramid_out_channels: usize,
    pub fusion_in_channels: usize,
}

fn conv<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    name: &str,
    x: &G::Node,
    relu: bool,
) -> Result<G::Node> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.conv2d(x, &w, Some(&b), 1, Padding::Same)?;
    Ok(if relu { g.relu(&y) } else { y })
}

/// Stage 1: plain 3×3 conv stack with channel attention before the last
/// layer. Output has the input's channel count and size.
pub fn noise_estimation_stage<G: Graph>(
    g: &mut G,
    cfg: &ModelConfig,
    store: &ParamStore,
    x: &G::Node,
) -> Result<G::Node> {
    let mut h = x.clone();
    for i in 0..cfg.est_depth - 1 {
        h = conv(g, store, &format!("est.conv{i}"), &h, true)?;
    }
    if cfg.channel_attention {
        h = attention::channel_attention(g, store, "ca", &h)?;
    }
    conv(g, store, &format!("est.conv{}", cfg.est_depth - 1), &h, true)
}

/// One U-Net: `depth` encoder levels of two 3×3 conv+ReLU with 2×2 average
/// pooling between them, a mirrored decoder with bilinear 2× upsampling and
/// concatenation skips, and a final 1×1 conv back to the input channels.
pub fn unet_forward<G: Graph>(
    g: &mut G,
    store: &ParamStore,
    prefix: &str,
    depth: usize,
    x: &G::Node,
) -> Result<G::Node> {
    let s = g.shape(x);
    let m = 1usize << (depth - 1);
    if s.h % m != 0 || s.w % m != 0 {
        return shape_err("unet_forward", format!("{s} not divisible by {m}"));
    }
    let mut skips = Vec::with_capacity(depth);
    let mut h = x.clone();
    for i in 0..depth {
        if i > 0 {
            h = g.avg_pool(&h, 2)?;
        }
        h = conv(g, store, &format!("{prefix}.enc{i}.a"), &h, true)?;
        h = conv(g, store, &format!("{prefix}.enc{i}.b"), &h, true)?;
        skips.push(h.clone());
    }
    for i in (0..depth - 1).rev() {
        let target = g.shape(&skips[i]);
        let up = g.bilinear_upsample(&h, target.h, target.w)?;
        let up = conv(g, store, &format!("{prefix}.dec{i}.up"), &up, true)?;
        let cat = g.concat_channels(&[skips[i].clone(), up])?;
        h = conv(g, store, &format!("{prefix}.dec{i}.a"), &cat, true)?;
        h = conv(g, store, &format!("{prefix}.dec{i}.b"), &h, true)?;
    }
    conv(g, store, &format!("{prefix}.out"), &h, false)
}

/// Pyramid with a caller-supplied per-level network. `level_net` receives
/// the level index and the pooled input.
pub fn pyramid_stage_with<G, F>(
    g: &mut G,
    kernels: &[usize],
    f: &G::Node,
    mut level_net: F,
) -> Result<G::Node>
where
    G: Graph,
    F: FnMut(&mut G, usize, &G::Node) -> Result<G::Node>,
{
    let s = g.shape(f);
    let mut levels = Vec::with_capacity(kernels.len());
    for (l, &k) in kernels.iter().enumerate() {
        let pooled = g.avg_pool(f, k)?;
        let y = level_net(g, l, &pooled)?;
        levels.push(g.bilinear_upsample(&y, s.h, s.w)?);
    }
    g.concat_channels(&levels)
}

/// Stage 2: average-pool at every pyramid kernel, denoise each level with its
/// own U-Net, upsample back and concatenate in kernel order.
pub fn pyramid_stage<G: Graph>(
    g: &mut G,
    cfg: &ModelConfig,
    store: &ParamStore,
    f: &G::Node,
) -> Result<G::Node> {
    let s = g.shape(f);
    let kmax = *cfg.pyramid_kernels.last().unwrap_or(&1);
    if s.h % kmax != 0 || s.w % kmax != 0 {
        return shape_err("pyramid_stage", format!("{s} not divisible by {kmax}"));
    }
    pyramid_stage_with(g, &cfg.pyramid_kernels, f, |g, l, x| {
        unet_forward(g, store, &format!("pyr{l}"), cfg.unet_depth, x)
    })
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PridNet {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl PridNet {
    /// He-uniform weights and zero biases, drawn in construction order from
    /// a ChaCha8 stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::He => he_uniform(shape, &mut rng),
                Init::Zero => Tensor::zeros(shape),
            };
            params.insert(name, t);
        }
        Ok(PridNet { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::Node) -> Result<G::Node> {
        self.forward_traced(g, x).map(|(y, _)| y)
    }

    pub fn forward_traced<G: Graph>(&self, g: &mut G, x: &G::Node) -> Result<(G::Node, ForwardTrace)> {
        let cfg = &self.config;
        let store = &self.params;
        let s = g.shape(x);
        if s.c != cfg.in_channels {
            return shape_err(
                "full_forward",
                format!("model expects {} channels, input is {s}", cfg.in_channels),
            );
        }
        if s.h == 0 || s.w == 0 {
            return shape_err("full_forward", format!("empty input {s}"));
        }
        let m = cfg.size_multiple();
        let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
        let xp = g.pad_reflect(x, ph, pw)?;

        let est = noise_estimation_stage(g, cfg, store, &xp)?;
        let s2_in = g.concat_channels(&[est, xp.clone()])?;
        let pyr = pyramid_stage(g, cfg, store, &s2_in)?;
        let fused_in = g.concat_channels(&[pyr.clone(), s2_in.clone()])?;
        let fused = if cfg.kernel_select {
            attention::kernel_select(g, store, "sk", &fused_in)?
        } else {
            fused_in.clone()
        };
        let mut y = conv(g, store, "out", &fused, false)?;
        if cfg.predict_residual {
            y = g.add(&y, &xp)?;
        }
        let trace = ForwardTrace {
            padded_h: ph,
            padded_w: pw,
            stage2_in_channels: g.shape(&s2_in).c,
            pyramid_out_channels: g.shape(&pyr).c,
            fusion_in_channels: g.shape(&fused_in).c,
        };
        Ok((g.crop(&y, s.h, s.w)?, trace))
    }

    /// Inference on a plain tensor without recording a tape.
    pub fn denoise(&self, noisy: &Tensor) -> Result<Tensor> {
        let mut g = Eval::new();
        let x = g.input(noisy.clone());
        let y = self.forward(&mut g, &x)?;
        Ok(std::sync::Arc::try_unwrap(y).unwrap_or_else(|a| (*a).clone()))
    }

    /// Writes a PRC1 checkpoint.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let json = serde_json::to_string(&self.config)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(&mut w, json.len())?;
        w.write_all(json.as_bytes())?;
        write_u32(&mut w, self.params.len())?;
        for (name, t) in self.params.iter() {
            write_u32(&mut w, name.len())?;
            w.write_all(name.as_bytes())?;
            t.write_pt1(&mut w)?;
        }
        Ok(())
    }

    /// Reads a PRC1 checkpoint and checks the tensors against the layout the
    /// embedded configuration implies.
    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let json = read_string(&mut r)?;
        let config: ModelConfig = serde_json::from_str(&json)?;
        config.validate()?;
        let count = read_u32(&mut r)?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let t = Tensor::read_pt1(&mut r)?;
            if params.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
        }
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, configuration needs {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape, _) in &expected {
            let t = params
                .get(name)
                .map_err(|_| Error::Format(format!("checkpoint is missing `{name}`")))?;
            if t.shape() != *shape {
                return Err(Error::Format(format!(
                    "`{name}` has shape {}, expected {shape}",
                    t.shape()
                )));
            }
        }
        Ok(PridNet { config, params })
    }

    pub fn save_to_path(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(f))
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_reference_widths() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.est_width, 32);
        assert_eq!(cfg.est_depth, 5);
        assert_eq!(cfg.ca_mid, 2);
        assert_eq!(cfg.pyramid_kernels, vec![1, 2, 4, 8, 16]);
        assert_eq!(cfg.size_multiple(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ModelConfig::micro(1);
        let mut c = base.clone();
        c.in_channels = 2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.pyramid_kernels = vec![2, 4];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.pyramid_kernels = vec![1, 4, 4];
        assert!(c.validate().is_err());
        let mut c = base;
        c.est_width = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"in_channels": 1, "bogus": 3}"#);
        assert!(err.is_err());
        let ok: ModelConfig = serde_json::from_str(r#"{"in_channels": 1}"#).unwrap();
        assert_eq!(ok.in_channels, 1);
        assert_eq!(ok.est_width, 32);
    }

    #[test]
    fn unet_rejects_indivisible_input() {
        let net = PridNet::new(ModelConfig::micro(1), 0).unwrap();
        let mut g = Eval::new();
        let x = g.input(Tensor::zeros([1, 2, 7, 8]));
        assert!(unet_forward(&mut g, &net.params, "pyr0", 2, &x).is_err());
    }

    #[test]
    fn checkpoint_rejects_truncated_and_mismatched_files() {
        let net = PridNet::new(ModelConfig::micro(1), 3).unwrap();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        assert!(PridNet::load(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(PridNet::load(&bad[..]).is_err());
        let mut other = net.clone();
        other.params.insert("out.w", Tensor::zeros([1, 1, 1, 1]));
        let mut buf2 = Vec::new();
        other.save(&mut buf2).unwrap();
        assert!(PridNet::load(&buf2[..]).is_err());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let net = PridNet::new(ModelConfig::micro(3), 0).unwrap();
        assert!(net.denoise(&Tensor::zeros([1, 1, 8, 8])).is_err());
    }
}
