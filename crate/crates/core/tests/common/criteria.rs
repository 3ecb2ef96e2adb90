//! Checks shared by the per-area test files and the acceptance runner.
//! Each function panics with a description on the first violation.

use pridnet::attention::{self, ChannelAttentionParams, KernelSelectParams};
use pridnet::gradcheck::{GradCheckOptions, GradReport};
use pridnet::gradsuite::{run_scope, Scope};
use pridnet::model::{self, ModelConfig, PridNet};
use pridnet::ops::Padding;
use pridnet::{Eval, Graph, ParamStore, Real, Tape, Tensor};
use rand::Rng;

use super::*;

pub const SEEDS: u64 = 20;
pub const ORACLE_TOL: Real = 1e-10;
pub const GRAD_TOL: Real = 1e-4;

fn small_dim(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

// ---------------------------------------------------------------- oracles

pub fn oracle_conv2d() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let n = small_dim(&mut r, 1, 2);
        let cin = small_dim(&mut r, 1, 4);
        let cout = small_dim(&mut r, 1, 4);
        let k = [1, 3, 5, 7][r.random_range(0..4)];
        let h = small_dim(&mut r, 1, 9);
        let w = small_dim(&mut r, 1, 9);
        let x = random(&mut r, [n, cin, h, w]);
        let wt = random(&mut r, [cout, cin, k, k]);
        let b = random(&mut r, [1, cout, 1, 1]);
        let got = pridnet::ops::conv2d(&x, &wt, Some(&b), 1, Padding::Same).unwrap();
        assert_close(&got, &conv2d(&x, &wt, Some(&b), 1, k / 2), ORACLE_TOL, &format!("conv2d seed {seed}"));
        let stride = small_dim(&mut r, 1, 3);
        let pad = small_dim(&mut r, 0, k).max((k + 1 - h.min(w).min(k)) / 2);
        let got = pridnet::ops::conv2d(&x, &wt, None, stride, Padding::Explicit(pad)).unwrap();
        assert_close(&got, &conv2d(&x, &wt, None, stride, pad), ORACLE_TOL, &format!("strided conv2d seed {seed}"));
    }
}

pub fn oracle_fully_connected() {
    for seed in 0..SEEDS {
        let mut r = rng(100 + seed);
        let n = small_dim(&mut r, 1, 3);
        let cin = small_dim(&mut r, 1, 8);
        let cout = small_dim(&mut r, 1, 8);
        let x = random(&mut r, [n, cin, 1, 1]);
        let w = random(&mut r, [cout, cin, 1, 1]);
        let b = random(&mut r, [1, cout, 1, 1]);
        let got = pridnet::ops::fully_connected(&x, &w, Some(&b)).unwrap();
        assert_close(&got, &fc(&x, &w, Some(&b)), ORACLE_TOL, &format!("fc seed {seed}"));
    }
}

pub fn oracle_global_avg_pool() {
    for seed in 0..SEEDS {
        let mut r = rng(200 + seed);
        let s = [small_dim(&mut r, 1, 2), small_dim(&mut r, 1, 5), small_dim(&mut r, 1, 11), small_dim(&mut r, 1, 11)];
        let x = random(&mut r, s);
        let got = pridnet::ops::global_avg_pool(&x).unwrap();
        assert_close(&got, &gap(&x), ORACLE_TOL, &format!("gap seed {seed}"));
    }
}

pub fn oracle_avg_pool() {
    for seed in 0..SEEDS {
        let mut r = rng(300 + seed);
        let k = [1, 2, 4, 8][r.random_range(0..4)];
        let s = [small_dim(&mut r, 1, 2), small_dim(&mut r, 1, 3), k * small_dim(&mut r, 1, 4), k * small_dim(&mut r, 1, 4)];
        let x = random(&mut r, s);
        let got = pridnet::ops::avg_pool(&x, k).unwrap();
        assert_close(&got, &avg_pool(&x, k), ORACLE_TOL, &format!("avg_pool k={k} seed {seed}"));
    }
}

pub fn oracle_bilinear_upsample() {
    for seed in 0..SEEDS {
        let mut r = rng(400 + seed);
        let (h, w) = (small_dim(&mut r, 1, 6), small_dim(&mut r, 1, 6));
        let (oh, ow) = (h * small_dim(&mut r, 1, 4), w + small_dim(&mut r, 0, 9));
        let shape = [small_dim(&mut r, 1, 2), small_dim(&mut r, 1, 3), h, w];
        let x = random(&mut r, shape);
        let got = pridnet::ops::bilinear_upsample(&x, oh, ow).unwrap();
        assert_close(&got, &bilinear(&x, oh, ow), ORACLE_TOL, &format!("bilinear {h}x{w}->{oh}x{ow} seed {seed}"));
    }
}

pub fn oracle_softmax() {
    for seed in 0..SEEDS {
        let mut r = rng(500 + seed);
        let branches = small_dim(&mut r, 2, 4);
        let s = [small_dim(&mut r, 1, 2), small_dim(&mut r, 1, 6), 1, 1];
        let logits: Vec<Tensor> = (0..branches).map(|_| random_in(&mut r, s, -8.0, 8.0)).collect();
        let refs: Vec<&Tensor> = logits.iter().collect();
        let got = pridnet::ops::softmax_over_branches(&refs).unwrap();
        for (g, e) in got.iter().zip(softmax(&refs)) {
            assert_close(g, &e, ORACLE_TOL, &format!("softmax seed {seed}"));
        }
    }
}

fn ca_store(r: &mut ChaCha8Rng, c: usize, mid: usize) -> ParamStore {
    let mut store = ParamStore::new();
    ChannelAttentionParams::init(c, mid, r).unwrap().register(&mut store, "ca");
    randomize(&mut store, r, 1.0);
    store
}

fn sk_store(r: &mut ChaCha8Rng, c: usize, mid: usize) -> ParamStore {
    let mut store = ParamStore::new();
    KernelSelectParams::init(c, mid, r).unwrap().register(&mut store, "sk");
    randomize(&mut store, r, 0.3);
    store
}

pub fn oracle_channel_attention() {
    for seed in 0..SEEDS {
        let mut r = rng(600 + seed);
        let c = small_dim(&mut r, 1, 8);
        let mid = small_dim(&mut r, 1, 4);
        let store = ca_store(&mut r, c, mid);
        let shape = [small_dim(&mut r, 1, 2), c, small_dim(&mut r, 1, 7), small_dim(&mut r, 1, 7)];
        let u = random(&mut r, shape);
        let mut g = Eval::new();
        let un = g.input(u.clone());
        let got = attention::channel_attention(&mut g, &store, "ca", &un).unwrap();
        assert_close(&got, &channel_attention(&u, &store, "ca"), ORACLE_TOL, &format!("channel attention seed {seed}"));
    }
}

pub fn oracle_kernel_select() {
    for seed in 0..SEEDS {
        let mut r = rng(700 + seed);
        let c = small_dim(&mut r, 1, 4);
        let mid = small_dim(&mut r, 1, 4);
        let store = sk_store(&mut r, c, mid);
        let shape = [small_dim(&mut r, 1, 2), c, small_dim(&mut r, 1, 8), small_dim(&mut r, 1, 8)];
        let u = random(&mut r, shape);
        let mut g = Eval::new();
        let un = g.input(u.clone());
        let got = attention::kernel_select(&mut g, &store, "sk", &un).unwrap();
        assert_close(&got, &kernel_select(&u, &store, "sk"), ORACLE_TOL, &format!("kernel select seed {seed}"));
    }
}

/// Parameters of a freshly initialised model with every tensor randomised.
fn random_model(cfg: ModelConfig, r: &mut ChaCha8Rng, scale: Real) -> PridNet {
    let mut net = PridNet::new(cfg, r.random()).unwrap();
    randomize(&mut net.params, r, scale);
    net
}

fn unet_config(r: &mut ChaCha8Rng) -> (ModelConfig, usize) {
    let depth = small_dim(r, 1, 3);
    let cin = [1, 3][r.random_range(0..2)];
    let cfg = ModelConfig {
        in_channels: cin,
        unet_depth: depth,
        unet_base_width: small_dim(r, 1, 3),
        ..ModelConfig::micro(cin)
    };
    (cfg, depth)
}

pub fn oracle_unet() {
    for seed in 0..SEEDS {
        let mut r = rng(800 + seed);
        let (cfg, depth) = unet_config(&mut r);
        let net = random_model(cfg.clone(), &mut r, 0.5);
        let m = 1 << (depth - 1);
        let shape = [small_dim(&mut r, 1, 2), cfg.stage2_channels(), m * small_dim(&mut r, 1, 4), m * small_dim(&mut r, 1, 4)];
        let x = random(&mut r, shape);
        let mut g = Eval::new();
        let xn = g.input(x.clone());
        let got = model::unet_forward(&mut g, &net.params, "pyr0", depth, &xn).unwrap();
        assert_close(&got, &unet(&x, &net.params, "pyr0", depth), ORACLE_TOL, &format!("unet depth {depth} seed {seed}"));
    }
}

pub fn oracle_pyramid() {
    for seed in 0..SEEDS {
        let mut r = rng(900 + seed);
        let (mut cfg, depth) = unet_config(&mut r);
        let all = [1, 2, 4];
        let levels = small_dim(&mut r, 1, 3);
        cfg.pyramid_kernels = all[..levels].to_vec();
        let net = random_model(cfg.clone(), &mut r, 0.5);
        let m = all[levels - 1] << (depth - 1);
        let shape = [1, cfg.stage2_channels(), m * small_dim(&mut r, 1, 2), m * small_dim(&mut r, 1, 2)];
        let x = random(&mut r, shape);
        let mut g = Eval::new();
        let xn = g.input(x.clone());
        let got = model::pyramid_stage(&mut g, &cfg, &net.params, &xn).unwrap();
        let want = pyramid(&x, &net.params, &cfg.pyramid_kernels, depth);
        assert_close(&got, &want, ORACLE_TOL, &format!("pyramid {:?} seed {seed}", cfg.pyramid_kernels));
    }
}

pub fn oracle_full_forward() {
    for seed in 0..SEEDS {
        let mut r = rng(1000 + seed);
        let cin = [1, 3][r.random_range(0..2)];
        let mut cfg = ModelConfig::micro(cin);
        cfg.channel_attention = r.random();
        cfg.kernel_select = r.random();
        cfg.predict_residual = r.random();
        let net = random_model(cfg.clone(), &mut r, 0.3);
        let shape = [1, cin, small_dim(&mut r, 1, 9), small_dim(&mut r, 1, 9)];
        let x = random(&mut r, shape);
        let got = net.denoise(&x).unwrap();
        assert_close(&got, &full_forward(&x, &cfg, &net.params), ORACLE_TOL, &format!("full forward seed {seed}"));
    }
}

// -------------------------------------------------------------- gradients

/// All checks of `scope` at the pinned step and tolerance; panics on the
/// first failing report.
pub fn gradients(scope: Scope) -> Vec<GradReport> {
    let opts = GradCheckOptions::with_tolerance(GRAD_TOL);
    assert_eq!(opts.step, 1e-5);
    let reports = run_scope(scope, 42, &opts).unwrap();
    for r in &reports {
        assert!(r.passed(), "{r}");
    }
    reports
}

/// Values bounded away from zero.
fn away_from_zero(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: Real = r.random_range(0.1..1.0);
        if r.random() {
            v
        } else {
            -v
        }
    })
}

// ------------------------------------------------------------- invariants

pub const ADVERSARIAL_SIZES: [(usize, usize); 4] = [(1, 1), (8, 8), (97, 61), (255, 257)];

pub fn shapes_are_preserved() {
    for (cin, seed) in [(1, 0), (3, 1)] {
        let net = PridNet::new(ModelConfig::micro(cin), seed).unwrap();
        for (h, w) in ADVERSARIAL_SIZES {
            let x = random_in(&mut rng(seed), [1, cin, h, w], 0.0, 1.0);
            let y = net.denoise(&x).unwrap();
            assert_eq!(y.shape(), x.shape(), "micro model on {h}x{w}");
            assert!(y.is_finite());
        }
    }
}

pub fn softmax_gates_sum_to_one() {
    for seed in 0..SEEDS {
        let mut r = rng(1100 + seed);
        let scale = [1.0, 30.0, 300.0][seed as usize % 3];
        let logits: Vec<Tensor> = (0..3).map(|_| random_in(&mut r, [2, 5, 1, 1], -scale, scale)).collect();
        let refs: Vec<&Tensor> = logits.iter().collect();
        let w = pridnet::ops::softmax_over_branches(&refs).unwrap();
        for i in 0..w[0].len() {
            let s: Real = w.iter().map(|t| t.data()[i]).sum();
            assert!((s - 1.0).abs() <= 1e-9, "gate sum {s}");
            assert!(w.iter().all(|t| (0.0..=1.0).contains(&t.data()[i])));
        }
    }
}

/// Every output channel equals its input channel times one scalar in (0, 1).
pub fn channel_attention_scales_channels() {
    for seed in 0..SEEDS {
        let mut r = rng(1200 + seed);
        let c = small_dim(&mut r, 1, 6);
        let store = ca_store(&mut r, c, 2);
        let u = away_from_zero(&mut r, [2, c, 4, 6]);
        let mut g = Eval::new();
        let un = g.input(u.clone());
        let mu = attention::channel_weights(&mut g, &store, "ca", &un).unwrap();
        let y = attention::channel_attention(&mut g, &store, "ca", &un).unwrap();
        for n in 0..2 {
            for ch in 0..c {
                let m = mu.at(n, ch, 0, 0);
                assert!(m > 0.0 && m < 1.0, "gate {m} outside (0, 1)");
                for (a, b) in y.plane(n, ch).iter().zip(u.plane(n, ch)) {
                    assert!((a - m * b).abs() <= 1e-12, "channel {ch} is not a scalar multiple");
                }
            }
        }
    }
}

/// Each fused value lies between the smallest and largest branch value at
/// that position.
pub fn kernel_select_is_convex() {
    for seed in 0..SEEDS {
        let mut r = rng(1300 + seed);
        let c = small_dim(&mut r, 1, 4);
        let store = sk_store(&mut r, c, 4);
        let u = random(&mut r, [1, c, 6, 5]);
        let mut g = Eval::new();
        let un = g.input(u);
        let branches = attention::kernel_select_branches(&mut g, &store, "sk", &un).unwrap();
        let v = attention::kernel_select(&mut g, &store, "sk", &un).unwrap();
        for i in 0..v.len() {
            let vals = branches.iter().map(|b| b.data()[i]);
            let lo = vals.clone().fold(Real::INFINITY, Real::min);
            let hi = vals.fold(Real::NEG_INFINITY, Real::max);
            let x = v.data()[i];
            assert!(x >= lo - 1e-12 && x <= hi + 1e-12, "{x} outside [{lo}, {hi}]");
        }
    }
}

/// Perturbing one U-Net's weights changes only that level's channels, and
/// its gradients vanish when the loss reads a different level.
pub fn unets_do_not_share_parameters() {
    let cfg = ModelConfig::micro(1);
    let net = PridNet::new(cfg.clone(), 3).unwrap();
    let levels = cfg.pyramid_kernels.len();
    let c2 = cfg.stage2_channels();
    for l in 0..levels {
        let names: Vec<String> = net.params.with_prefix(&format!("pyr{l}.")).map(|(n, _)| n.to_string()).collect();
        assert!(!names.is_empty());
        for other in (0..levels).filter(|&o| o != l) {
            for n in names.iter().filter(|n| n.ends_with(".w")) {
                let twin = n.replacen(&format!("pyr{l}."), &format!("pyr{other}."), 1);
                let a = net.params.get(n).unwrap();
                let b = net.params.get(&twin).unwrap();
                assert_ne!(a, b, "{n} and {twin} were initialised identically");
            }
        }
    }

    let x = random_in(&mut rng(9), [1, c2, 8, 8], 0.0, 1.0);
    let run = |store: &ParamStore| {
        let mut g = Eval::new();
        let xn = g.input(x.clone());
        (*model::pyramid_stage(&mut g, &cfg, store, &xn).unwrap()).clone()
    };
    let base = run(&net.params);
    for l in 0..levels {
        let mut p = net.params.clone();
        for (n, t) in p.iter_mut() {
            if n.starts_with(&format!("pyr{l}.")) {
                *t = t.map(|v| v * 1.5 + 0.01);
            }
        }
        let moved = run(&p);
        for lev in 0..levels {
            let a = slice(&base, lev * c2, c2);
            let b = slice(&moved, lev * c2, c2);
            if lev == l {
                assert!(a.max_abs_diff(&b) > 1e-6, "level {l} did not react to its own weights");
            } else {
                assert_eq!(a, b, "level {lev} changed when pyr{l} was perturbed");
            }
        }

        let mut t = Tape::new();
        let xn = t.input(x.clone());
        let y = model::pyramid_stage(&mut t, &cfg, &net.params, &xn).unwrap();
        let level = t.slice_channels(&y, l * c2, c2).unwrap();
        let loss = t.dot(&level, &Tensor::full([1, c2, 8, 8], 1.0)).unwrap();
        let grads = t.backward(loss).unwrap();
        for (n, gr) in grads.iter() {
            if n.starts_with("pyr") && !n.starts_with(&format!("pyr{l}.")) {
                assert!(gr.data().iter().all(|&v| v == 0.0), "{n} got gradient from level {l}");
            }
        }
    }
}
