//! Canned finite-difference checks at three scopes: single operators,
//! attention and U-Net blocks, and the end-to-end micro model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, ChannelAttentionParams, KernelSelectParams};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, GradCheckOptions, GradReport};
use crate::graph::{Graph, Tape, Var};
use crate::model::{self, ModelConfig, PridNet};
use crate::ops::Padding;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Op,
    Block,
    Model,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "op" => Ok(Scope::Op),
            "block" => Ok(Scope::Block),
            "model" => Ok(Scope::Model),
            _ => Err(Error::Invalid(format!("unknown scope `{s}`; expected op, block or model"))),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Magnitudes in [0.1, 1) with random sign, keeping ReLU and L1 kinks out
/// of finite-difference reach.
fn off_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: Real = rng.random_range(0.1..1.0);
        if rng.random() {
            v
        } else {
            -v
        }
    })
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: Real) {
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// `dot(y, r)` with a fixed random `r`, so every output element matters.
fn project<G: Graph>(g: &mut G, y: &G::Node, seed: u64) -> Result<G::Node> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, g.shape(y).dims(), -1.0, 1.0);
    g.dot(y, &r)
}

fn store(items: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in items {
        s.insert(n, t);
    }
    s
}

type Build = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

fn unary(label: &str, x: &ParamStore, seed: u64, f: fn(&mut Tape, &Var) -> Result<Var>) -> (String, ParamStore, Build) {
    let build: Build = Box::new(move |t, s| {
        let x = t.param(s, "x")?;
        let y = f(t, &x)?;
        project(t, &y, seed)
    });
    (label.to_string(), x.clone(), build)
}

fn operator_cases(rng: &mut ChaCha8Rng) -> Vec<(String, ParamStore, Build)> {
    let mut cases = Vec::new();
    let conv_shapes: [([usize; 4], usize, usize, Padding); 4] = [
        ([1, 1, 5, 5], 1, 3, Padding::Same),
        ([2, 3, 6, 7], 2, 3, Padding::Same),
        ([1, 2, 4, 4], 2, 7, Padding::Same),
        ([1, 2, 7, 6], 3, 3, Padding::Explicit(1)),
    ];
    for (i, (xs, cout, k, pad)) in conv_shapes.into_iter().enumerate() {
        let stride = if i == 3 { 2 } else { 1 };
        let inputs = store(vec![
            ("x", uniform(rng, xs, -1.0, 1.0)),
            ("w", uniform(rng, [cout, xs[1], k, k], -1.0, 1.0)),
            ("b", uniform(rng, [1, cout, 1, 1], -1.0, 1.0)),
        ]);
        let label = format!("conv2d x={}x{}x{}x{} k={k} stride={stride}", xs[0], xs[1], xs[2], xs[3]);
        let build: Build = Box::new(move |t, s| {
            let (x, w, b) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "b")?);
            let y = t.conv2d(&x, &w, Some(&b), stride, pad)?;
            project(t, &y, 1)
        });
        cases.push((label, inputs, build));
    }

    let fc = store(vec![
        ("x", uniform(rng, [2, 5, 1, 1], -1.0, 1.0)),
        ("w", uniform(rng, [3, 5, 1, 1], -1.0, 1.0)),
        ("b", uniform(rng, [1, 3, 1, 1], -1.0, 1.0)),
    ]);
    let build: Build = Box::new(|t, s| {
        let (x, w, b) = (t.param(s, "x")?, t.param(s, "w")?, t.param(s, "b")?);
        let y = t.fully_connected(&x, &w, Some(&b))?;
        project(t, &y, 2)
    });
    cases.push(("fully_connected".into(), fc, build));

    let x = store(vec![("x", off_zero(rng, [1, 2, 4, 6]))]);
    cases.push(unary("relu", &x, 3, |t, x| Ok(t.relu(x))));
    cases.push(unary("sigmoid", &x, 4, |t, x| Ok(t.sigmoid(x))));
    cases.push(unary("global_avg_pool", &x, 5, |t, x| t.global_avg_pool(x)));
    cases.push(unary("avg_pool k=2", &x, 6, |t, x| t.avg_pool(x, 2)));
    cases.push(unary("bilinear_upsample", &x, 7, |t, x| t.bilinear_upsample(x, 9, 13)));
    cases.push(unary("pad_reflect", &x, 8, |t, x| t.pad_reflect(x, 11, 17)));
    cases.push(unary("crop", &x, 9, |t, x| t.crop(x, 3, 2)));
    cases.push(unary("slice_channels", &x, 10, |t, x| t.slice_channels(x, 1, 1)));

    let logits = store(vec![
        ("a", uniform(rng, [2, 3, 1, 1], -3.0, 3.0)),
        ("b", uniform(rng, [2, 3, 1, 1], -3.0, 3.0)),
        ("c", uniform(rng, [2, 3, 1, 1], -3.0, 3.0)),
    ]);
    let build: Build = Box::new(|t, s| {
        let ls = [t.param(s, "a")?, t.param(s, "b")?, t.param(s, "c")?];
        let ws = t.softmax_over_branches(&ls)?;
        let all = t.concat_channels(&ws)?;
        project(t, &all, 11)
    });
    cases.push(("softmax_over_branches".into(), logits, build));

    let pair = store(vec![
        ("a", uniform(rng, [1, 2, 3, 4], -1.0, 1.0)),
        ("b", uniform(rng, [1, 2, 3, 4], -1.0, 1.0)),
    ]);
    let build: Build = Box::new(|t, s| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        let y = t.concat_channels(&[b, a])?;
        project(t, &y, 12)
    });
    cases.push(("concat_channels".into(), pair.clone(), build));
    let build: Build = Box::new(|t, s| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        let y = t.add(&a, &b)?;
        project(t, &y, 13)
    });
    cases.push(("add".into(), pair, build));

    let scaled = store(vec![
        ("x", uniform(rng, [2, 3, 3, 2], -1.0, 1.0)),
        ("s", uniform(rng, [2, 3, 1, 1], -1.0, 1.0)),
    ]);
    let build: Build = Box::new(|t, s| {
        let (x, sc) = (t.param(s, "x")?, t.param(s, "s")?);
        let y = t.scale_channels(&x, &sc)?;
        project(t, &y, 14)
    });
    cases.push(("scale_channels".into(), scaled, build));

    let target = uniform(rng, [1, 2, 3, 3], -1.0, 1.0);
    let offset = off_zero(rng, [1, 2, 3, 3]);
    let pred = Tensor::from_fn(target.shape(), |[n, c, y, x]| target.at(n, c, y, x) + offset.at(n, c, y, x));
    let build: Build = Box::new(|t, s| {
        let (p, q) = (t.param(s, "p")?, t.param(s, "t")?);
        t.l1_loss(&p, &q)
    });
    cases.push(("l1_loss".into(), store(vec![("p", pred), ("t", target)]), build));
    cases
}

fn block_cases(rng: &mut ChaCha8Rng) -> Result<Vec<(String, ParamStore, Build)>> {
    let mut cases = Vec::new();

    let mut ca = ParamStore::new();
    ChannelAttentionParams::init(4, 2, rng)?.register(&mut ca, "ca");
    randomize(&mut ca, rng, 1.0);
    ca.insert("u", uniform(rng, [2, 4, 5, 5], -1.0, 1.0));
    let build: Build = Box::new(|t, s| {
        let u = t.param(s, "u")?;
        let y = attention::channel_attention(t, s, "ca", &u)?;
        project(t, &y, 20)
    });
    cases.push(("channel_attention".into(), ca, build));

    let mut sk = ParamStore::new();
    KernelSelectParams::init(2, 4, rng)?.register(&mut sk, "sk");
    randomize(&mut sk, rng, 0.3);
    sk.insert("u", uniform(rng, [1, 2, 4, 4], -1.0, 1.0));
    let build: Build = Box::new(|t, s| {
        let u = t.param(s, "u")?;
        let y = attention::kernel_select(t, s, "sk", &u)?;
        project(t, &y, 21)
    });
    cases.push(("kernel_select".into(), sk, build));

    let cfg = ModelConfig {
        unet_base_width: 2,
        ..ModelConfig::micro(1)
    };
    let mut net = PridNet::new(cfg.clone(), rng.random())?;
    randomize(&mut net.params, rng, 0.5);
    let x = uniform(rng, [1, 2, 8, 8], -1.0, 1.0);

    let mut unet = ParamStore::new();
    for (n, t) in net.params.with_prefix("pyr0.") {
        unet.insert(n, t.clone());
    }
    unet.insert("x", x.clone());
    let depth = cfg.unet_depth;
    let build: Build = Box::new(move |t, s| {
        let x = t.param(s, "x")?;
        let y = model::unet_forward(t, s, "pyr0", depth, &x)?;
        project(t, &y, 22)
    });
    cases.push((format!("unet_forward depth={depth}"), unet, build));

    let mut pyr = ParamStore::new();
    for (n, t) in net.params.with_prefix("pyr") {
        pyr.insert(n, t.clone());
    }
    pyr.insert("x", x);
    let build: Build = Box::new(move |t, s| {
        let x = t.param(s, "x")?;
        let y = model::pyramid_stage(t, &cfg, s, &x)?;
        project(t, &y, 23)
    });
    cases.push(("pyramid_stage".into(), pyr, build));
    Ok(cases)
}

/// Micro model (widths 4, pyramid [1, 2], U-Net depth 2) on a 1×1×8×8
/// input under the L1 training loss, every parameter checked.
fn model_case(rng: &mut ChaCha8Rng) -> Result<(String, ParamStore, Build)> {
    let cfg = ModelConfig::micro(1);
    let mut net = PridNet::new(cfg.clone(), rng.random())?;
    randomize(&mut net.params, rng, 0.4);
    let noisy = uniform(rng, [1, 1, 8, 8], 0.0, 1.0);
    let clean = uniform(rng, [1, 1, 8, 8], 0.0, 1.0);
    let build: Build = Box::new(move |t, s| {
        let m = PridNet {
            config: cfg.clone(),
            params: s.clone(),
        };
        let x = t.input(noisy.clone());
        let c = t.input(clean.clone());
        let y = m.forward(t, &x)?;
        t.l1_loss(&y, &c)
    });
    Ok(("micro model L1 1x1x8x8".into(), net.params, build))
}

/// Runs every check of `scope` with fixtures drawn from `seed`.
pub fn run_scope(scope: Scope, seed: u64, opts: &GradCheckOptions) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = match scope {
        Scope::Op => operator_cases(&mut rng),
        Scope::Block => block_cases(&mut rng)?,
        Scope::Model => vec![model_case(&mut rng)?],
    };
    cases
        .into_iter()
        .map(|(label, inputs, build)| gradcheck(&label, &inputs, build, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scopes_parse() {
        assert_eq!("op".parse::<Scope>().unwrap(), Scope::Op);
        assert!("everything".parse::<Scope>().is_err());
    }

    #[cfg(not(feature = "f32"))]
    #[test]
    fn operator_scope_passes() {
        let reps = run_scope(Scope::Op, 0, &GradCheckOptions::default()).unwrap();
        assert!(reps.len() >= 17);
        for r in reps {
            assert!(r.passed(), "{r}");
        }
    }
}
