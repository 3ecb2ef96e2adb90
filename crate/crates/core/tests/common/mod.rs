//! Straight-line reference implementations used as test oracles. Nothing
//! here calls into the library's operators; tensors are only used as
//! containers.

#![allow(dead_code)]

pub mod criteria;

use pridnet::model::ModelConfig;
use pridnet::{ParamStore, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_in(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Fills every parameter with uniform noise so that oracles are not helped
/// by zero biases.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: Real) {
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn dims(t: &Tensor) -> [usize; 4] {
    t.shape().dims()
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [n, cin, h, wd] = dims(x);
    let [cout, _, k, _] = dims(w);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    Tensor::from_fn([n, cout, oh, ow], |[bn, co, oy, ox]| {
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    acc += w.at(co, ci, ky, kx) * x.at(bn, ci, iy as usize, ix as usize);
                }
            }
        }
        acc
    })
}

pub fn conv_same(x: &Tensor, store: &ParamStore, name: &str) -> Tensor {
    let w = store.get(&format!("{name}.w")).unwrap();
    let b = store.get(&format!("{name}.b")).unwrap();
    let k = w.shape().h;
    conv2d(x, w, Some(b), 1, k / 2)
}

pub fn fc(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let [n, cin, _, _] = dims(x);
    let cout = w.shape().n;
    Tensor::from_fn([n, cout, 1, 1], |[bn, o, _, _]| {
        let mut acc = b.map_or(0.0, |b| b.data()[o]);
        for i in 0..cin {
            acc += w.at(o, i, 0, 0) * x.at(bn, i, 0, 0);
        }
        acc
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |[n, c, y, xx]| {
        let v = x.at(n, c, y, xx);
        if v > 0.0 {
            v
        } else {
            0.0
        }
    })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |[n, c, y, xx]| 1.0 / (1.0 + (-x.at(n, c, y, xx)).exp()))
}

pub fn gap(x: &Tensor) -> Tensor {
    let [n, c, h, w] = dims(x);
    Tensor::from_fn([n, c, 1, 1], |[bn, ch, _, _]| {
        let mut s = 0.0;
        for y in 0..h {
            for xx in 0..w {
                s += x.at(bn, ch, y, xx);
            }
        }
        s / (h * w) as Real
    })
}

pub fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let [n, c, h, w] = dims(x);
    Tensor::from_fn([n, c, h / k, w / k], |[bn, ch, oy, ox]| {
        let mut s = 0.0;
        for dy in 0..k {
            for dx in 0..k {
                s += x.at(bn, ch, oy * k + dy, ox * k + dx);
            }
        }
        s / (k * k) as Real
    })
}

/// Half-pixel-centre sample position, clamped to the valid range.
fn source_coord(d: usize, src: usize, dst: usize) -> Real {
    let p = (d as Real + 0.5) * (src as Real / dst as Real) - 0.5;
    p.clamp(0.0, (src - 1) as Real)
}

pub fn bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = dims(x);
    Tensor::from_fn([n, c, oh, ow], |[bn, ch, oy, ox]| {
        let py = source_coord(oy, h, oh);
        let px = source_coord(ox, w, ow);
        let mut acc = 0.0;
        for sy in 0..h {
            let wy = (1.0 - (py - sy as Real).abs()).max(0.0);
            if wy == 0.0 {
                continue;
            }
            for sx in 0..w {
                let wx = (1.0 - (px - sx as Real).abs()).max(0.0);
                acc += wy * wx * x.at(bn, ch, sy, sx);
            }
        }
        acc
    })
}

pub fn concat(xs: &[&Tensor]) -> Tensor {
    let [n, _, h, w] = dims(xs[0]);
    let total: usize = xs.iter().map(|t| t.shape().c).sum();
    Tensor::from_fn([n, total, h, w], |[bn, c, y, x]| {
        let mut c = c;
        for t in xs {
            if c < t.shape().c {
                return t.at(bn, c, y, x);
            }
            c -= t.shape().c;
        }
        unreachable!()
    })
}

pub fn slice(x: &Tensor, start: usize, len: usize) -> Tensor {
    let [n, _, h, w] = dims(x);
    Tensor::from_fn([n, len, h, w], |[bn, c, y, xx]| x.at(bn, start + c, y, xx))
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.shape(), |[n, c, y, x]| a.at(n, c, y, x) + b.at(n, c, y, x))
}

pub fn scale(x: &Tensor, s: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |[n, c, y, xx]| x.at(n, c, y, xx) * s.at(n, c, 0, 0))
}

/// Per-position softmax across branches, written without the max shift.
pub fn softmax(logits: &[&Tensor]) -> Vec<Tensor> {
    let shape = logits[0].shape();
    (0..logits.len())
        .map(|i| {
            Tensor::from_fn(shape, |[n, c, y, x]| {
                let denom: Real = logits.iter().map(|l| l.at(n, c, y, x).exp()).sum();
                logits[i].at(n, c, y, x).exp() / denom
            })
        })
        .collect()
}

/// Index after walking `i` steps from the origin and bouncing off both ends.
fn bounce(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let (mut pos, mut dir) = (0isize, 1isize);
    for _ in 0..i {
        if pos + dir < 0 || pos + dir >= n as isize {
            dir = -dir;
        }
        pos += dir;
    }
    pos as usize
}

pub fn pad_reflect(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = dims(x);
    Tensor::from_fn([n, c, oh, ow], |[bn, ch, y, xx]| x.at(bn, ch, bounce(y, h), bounce(xx, w)))
}

pub fn crop(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, _, _] = dims(x);
    Tensor::from_fn([n, c, oh, ow], |[bn, ch, y, xx]| x.at(bn, ch, y, xx))
}

pub fn channel_attention(u: &Tensor, store: &ParamStore, prefix: &str) -> Tensor {
    let p = |s: &str| store.get(&format!("{prefix}.{s}")).unwrap();
    let z = gap(u);
    let h = relu(&fc(&z, p("fc1.w"), Some(p("fc1.b"))));
    let mu = sigmoid(&fc(&h, p("fc2.w"), Some(p("fc2.b"))));
    scale(u, &mu)
}

pub fn kernel_select(u: &Tensor, store: &ParamStore, prefix: &str) -> Tensor {
    let p = |s: &str| store.get(&format!("{prefix}.{s}")).unwrap();
    let b3 = conv2d(u, p("conv3.w"), Some(p("conv3.b")), 1, 1);
    let b5 = conv2d(u, p("conv5.w"), Some(p("conv5.b")), 1, 2);
    let b7 = conv2d(u, p("conv7.w"), Some(p("conv7.b")), 1, 3);
    let total = add(&add(&b3, &b5), &b7);
    let s = gap(&total);
    let z = relu(&fc(&s, p("fc1.w"), Some(p("fc1.b"))));
    let la = fc(&z, p("fc2.alpha.w"), Some(p("fc2.alpha.b")));
    let lb = fc(&z, p("fc2.beta.w"), Some(p("fc2.beta.b")));
    let lc = fc(&z, p("fc2.gamma.w"), Some(p("fc2.gamma.b")));
    let g = softmax(&[&la, &lb, &lc]);
    Tensor::from_fn(u.shape(), |[n, c, y, x]| {
        g[0].at(n, c, 0, 0) * b3.at(n, c, y, x)
            + g[1].at(n, c, 0, 0) * b5.at(n, c, y, x)
            + g[2].at(n, c, 0, 0) * b7.at(n, c, y, x)
    })
}

/// Unrolled two- and three-level U-Nets.
pub fn unet(x: &Tensor, store: &ParamStore, prefix: &str, depth: usize) -> Tensor {
    let c = |name: &str, t: &Tensor| relu(&conv_same(t, store, &format!("{prefix}.{name}")));
    let e0 = c("enc0.b", &c("enc0.a", x));
    let top = match depth {
        1 => e0,
        2 => {
            let e1 = c("enc1.b", &c("enc1.a", &avg_pool(&e0, 2)));
            let s0 = dims(&e0);
            let up = c("dec0.up", &bilinear(&e1, s0[2], s0[3]));
            c("dec0.b", &c("dec0.a", &concat(&[&e0, &up])))
        }
        3 => {
            let e1 = c("enc1.b", &c("enc1.a", &avg_pool(&e0, 2)));
            let e2 = c("enc2.b", &c("enc2.a", &avg_pool(&e1, 2)));
            let s1 = dims(&e1);
            let up1 = c("dec1.up", &bilinear(&e2, s1[2], s1[3]));
            let d1 = c("dec1.b", &c("dec1.a", &concat(&[&e1, &up1])));
            let s0 = dims(&e0);
            let up0 = c("dec0.up", &bilinear(&d1, s0[2], s0[3]));
            c("dec0.b", &c("dec0.a", &concat(&[&e0, &up0])))
        }
        _ => panic!("oracle covers depths 1 to 3"),
    };
    conv_same(&top, store, &format!("{prefix}.out"))
}

pub fn pyramid(f: &Tensor, store: &ParamStore, kernels: &[usize], depth: usize) -> Tensor {
    let [_, _, h, w] = dims(f);
    let levels: Vec<Tensor> = kernels
        .iter()
        .enumerate()
        .map(|(l, &k)| bilinear(&unet(&avg_pool(f, k), store, &format!("pyr{l}"), depth), h, w))
        .collect();
    let refs: Vec<&Tensor> = levels.iter().collect();
    concat(&refs)
}

pub fn noise_estimation(x: &Tensor, cfg: &ModelConfig, store: &ParamStore) -> Tensor {
    let mut h = x.clone();
    for i in 0..cfg.est_depth - 1 {
        h = relu(&conv_same(&h, store, &format!("est.conv{i}")));
    }
    if cfg.channel_attention {
        h = channel_attention(&h, store, "ca");
    }
    relu(&conv_same(&h, store, &format!("est.conv{}", cfg.est_depth - 1)))
}

pub fn full_forward(x: &Tensor, cfg: &ModelConfig, store: &ParamStore) -> Tensor {
    let [_, _, h, w] = dims(x);
    let kmax = cfg.pyramid_kernels.iter().copied().max().unwrap();
    let m = kmax * (1 << (cfg.unet_depth - 1));
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let xp = pad_reflect(x, ph, pw);
    let est = noise_estimation(&xp, cfg, store);
    let s2 = concat(&[&est, &xp]);
    let pyr = pyramid(&s2, store, &cfg.pyramid_kernels, cfg.unet_depth);
    let fin = concat(&[&pyr, &s2]);
    let fused = if cfg.kernel_select {
        kernel_select(&fin, store, "sk")
    } else {
        fin
    };
    let mut y = conv_same(&fused, store, "out");
    if cfg.predict_residual {
        y = add(&y, &xp);
    }
    crop(&y, h, w)
}

/// Closed-form parameter count, derived independently of the model's
/// layout table.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;
    let (cin, w) = (cfg.in_channels, cfg.est_width);
    let mut total = conv(w, cin, 3) + (cfg.est_depth - 2) * conv(w, w, 3) + conv(cin, w, 3);
    if cfg.channel_attention {
        total += conv(cfg.ca_mid, w, 1) + conv(w, cfg.ca_mid, 1);
    }
    let c2 = 2 * cin;
    let b = cfg.unet_base_width;
    let mut unet = 0;
    for i in 0..cfg.unet_depth {
        let wi = b << i;
        let prev = if i == 0 { c2 } else { b << (i - 1) };
        unet += conv(wi, prev, 3) + conv(wi, wi, 3);
        if i + 1 < cfg.unet_depth {
            unet += conv(wi, b << (i + 1), 3) + conv(wi, 2 * wi, 3) + conv(wi, wi, 3);
        }
    }
    unet += conv(c2, b, 1);
    total += cfg.pyramid_kernels.len() * unet;
    let cf = (cfg.pyramid_kernels.len() + 1) * c2;
    if cfg.kernel_select {
        let mid = cfg.sk_mid.unwrap_or((cf / 8).max(4));
        total += conv(cf, cf, 3) + conv(cf, cf, 5) + conv(cf, cf, 7);
        total += conv(mid, cf, 1) + 3 * conv(cf, mid, 1);
    }
    total + conv(cin, cf, 1)
}

pub fn assert_close(a: &Tensor, b: &Tensor, tol: Real, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape");
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "{what}: max abs diff {d:e} > {tol:e}");
}
