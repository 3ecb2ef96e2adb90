//! Forward and adjoint kernels for every differentiable operator.
//!
//! These are plain functions over [`Tensor`]s. The graph layer in
//! [`crate::graph`] wires them together and records them for reverse mode.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Zero padding applied by [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` on every side.
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn amount(self, k: usize) -> usize {
        match self {
            Padding::Same => (k - 1) / 2,
            Padding::Explicit(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub fn conv_geometry(
    input: Shape,
    weight: Shape,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    let k = weight.h;
    if weight.h != weight.w || k % 2 == 0 || k == 0 {
        return shape_err("conv2d", format!("kernel must be square and odd, got {weight}"));
    }
    if weight.c != input.c {
        return shape_err(
            "conv2d",
            format!("input has {} channels but weight {weight} expects {}", input.c, weight.c),
        );
    }
    if stride == 0 {
        return Err(Error::Invalid("conv2d stride must be >= 1".into()));
    }
    let pad = padding.amount(k);
    if input.h + 2 * pad < k || input.w + 2 * pad < k {
        return shape_err("conv2d", format!("input {input} smaller than kernel {k} with pad {pad}"));
    }
    Ok(ConvGeometry {
        k,
        stride,
        pad,
        out_h: (input.h + 2 * pad - k) / stride + 1,
        out_w: (input.w + 2 * pad - k) / stride + 1,
    })
}

/// Range of output columns whose tap `kx` lands inside `[0, w)`.
#[inline]
fn valid_out_range(kx: usize, pad: usize, stride: usize, w: usize, out_w: usize) -> (usize, usize) {
    // ix = ox * stride + kx - pad
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi_num = w as isize - 1 + pad as isize - kx as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = ((hi_num as usize) / stride + 1).min(out_w);
    if lo >= hi {
        return (0, 0);
    }
    (lo, hi)
}

fn check_bias(bias: Option<&Tensor>, cout: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != cout {
            return shape_err(op, format!("bias has {} elements, expected {cout}", b.len()));
        }
    }
    Ok(())
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let is = input.shape();
    let ws = weight.shape();
    let g = conv_geometry(is, ws, stride, padding)?;
    check_bias(bias, ws.n, "conv2d")?;
    let (cout, cin, k) = (ws.n, ws.c, g.k);
    let mut out = Tensor::zeros([is.n, cout, g.out_h, g.out_w]);
    let wd = weight.data();
    for n in 0..is.n {
        for co in 0..cout {
            let plane = out.plane_mut(n, co);
            if let Some(b) = bias {
                plane.fill(b.data()[co]);
            }
            for ci in 0..cin {
                let src = input.plane(n, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wd[((co * cin + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_out_range(kx, g.pad, g.stride, is.w, g.out_w);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in 0..g.out_h {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= is.h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * is.w..(iy as usize + 1) * is.w];
                            let orow = &mut plane[oy * g.out_w..(oy + 1) * g.out_w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.pad;
                                let ix1 = ox1 + kx - g.pad;
                                for (o, &v) in orow[ox0..ox1].iter_mut().zip(&row[ix0..ix1]) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let is = input.shape();
    let ws = weight.shape();
    let g = conv_geometry(is, ws, stride, padding)?;
    let (cout, cin, k) = (ws.n, ws.c, g.k);
    let mut gin = Tensor::zeros(is);
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros([1, cout, 1, 1]);
    let wd = weight.data();
    for n in 0..is.n {
        for co in 0..cout {
            let gplane = grad_out.plane(n, co);
            gb.data_mut()[co] += gplane.iter().sum::<Real>();
            for ci in 0..cin {
                let src = input.plane(n, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((co * cin + ci) * k + ky) * k + kx;
                        let wv = wd[widx];
                        let (ox0, ox1) = valid_out_range(kx, g.pad, g.stride, is.w, g.out_w);
                        if ox0 == ox1 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in 0..g.out_h {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= is.h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let grow = &gplane[oy * g.out_w..(oy + 1) * g.out_w];
                            let row = &src[iy * is.w..(iy + 1) * is.w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.pad;
                                let ix1 = ox1 + kx - g.pad;
                                for (&go, &v) in grow[ox0..ox1].iter().zip(&row[ix0..ix1]) {
                                    acc += go * v;
                                }
                                if wv != 0.0 {
                                    let gi = gin.plane_mut(n, ci);
                                    let girow = &mut gi[iy * is.w..(iy + 1) * is.w];
                                    for (d, &go) in girow[ix0..ix1].iter_mut().zip(&grow[ox0..ox1]) {
                                        *d += wv * go;
                                    }
                                }
                            } else {
                                let gi = gin.plane_mut(n, ci);
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kx - g.pad;
                                    acc += grow[ox] * row[ix];
                                    gi[iy * is.w + ix] += wv * grow[ox];
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((gin, gw, gb))
}

/// Dense layer on 1×1 spatial maps. `weight` is `[Cout, C, 1, 1]`.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let is = input.shape();
    let ws = weight.shape();
    if is.h != 1 || is.w != 1 {
        return shape_err("fully_connected", format!("input must be Nx C x1x1, got {is}"));
    }
    if ws.c != is.c || ws.h != 1 || ws.w != 1 {
        return shape_err("fully_connected", format!("weight {ws} does not fit input {is}"));
    }
    check_bias(bias, ws.n, "fully_connected")?;
    let (cout, cin) = (ws.n, ws.c);
    let mut out = Tensor::zeros([is.n, cout, 1, 1]);
    let x = input.data();
    let w = weight.data();
    for n in 0..is.n {
        let xr = &x[n * cin..(n + 1) * cin];
        for o in 0..cout {
            let wr = &w[o * cin..(o + 1) * cin];
            let mut acc = bias.map_or(0.0, |b| b.data()[o]);
            for (a, b) in wr.iter().zip(xr) {
                acc += a * b;
            }
            out.data_mut()[n * cout + o] = acc;
        }
    }
    Ok(out)
}

pub fn fully_connected_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let is = input.shape();
    let (cout, cin) = (weight.shape().n, weight.shape().c);
    let mut gx = Tensor::zeros(is);
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros([1, cout, 1, 1]);
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    for n in 0..is.n {
        for o in 0..cout {
            let g = go[n * cout + o];
            gb.data_mut()[o] += g;
            for i in 0..cin {
                gw.data_mut()[o * cin + i] += g * x[n * cin + i];
                gx.data_mut()[n * cin + i] += g * w[o * cin + i];
            }
        }
    }
    (gx, gw, gb)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

#[inline]
pub fn sigmoid_scalar(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Adjoint of sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Softmax across a list of same-shaped tensors, independently at every
/// element position. For `[N, C, 1, 1]` gate logits this is a per-channel
/// softmax across branches.
pub fn softmax_over_branches(logits: &[&Tensor]) -> Result<Vec<Tensor>> {
    if logits.len() < 2 {
        return Err(Error::Invalid("softmax needs at least two branches".into()));
    }
    let shape = logits[0].shape();
    if let Some(bad) = logits.iter().find(|t| t.shape() != shape) {
        return shape_err("softmax_over_branches", format!("{} vs {shape}", bad.shape()));
    }
    let mut outs: Vec<Tensor> = logits.iter().map(|_| Tensor::zeros(shape)).collect();
    for i in 0..shape.numel() {
        let m = logits
            .iter()
            .map(|t| t.data()[i])
            .fold(Real::NEG_INFINITY, Real::max);
        let mut z = 0.0;
        for (o, t) in outs.iter_mut().zip(logits) {
            let e = (t.data()[i] - m).exp();
            o.data_mut()[i] = e;
            z += e;
        }
        for o in &mut outs {
            o.data_mut()[i] /= z;
        }
    }
    Ok(outs)
}

pub fn softmax_over_branches_backward(outputs: &[Tensor], grads: &[Tensor]) -> Vec<Tensor> {
    let shape = outputs[0].shape();
    let mut gin: Vec<Tensor> = outputs.iter().map(|_| Tensor::zeros(shape)).collect();
    for i in 0..shape.numel() {
        let dot: Real = outputs
            .iter()
            .zip(grads)
            .map(|(y, g)| y.data()[i] * g.data()[i])
            .sum();
        for ((gi, y), g) in gin.iter_mut().zip(outputs).zip(grads) {
            gi.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
        }
    }
    gin
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return shape_err("global_avg_pool", format!("empty plane in {s}"));
    }
    let count = s.plane() as Real;
    let mut out = Tensor::zeros([s.n, s.c, 1, 1]);
    for n in 0..s.n {
        for c in 0..s.c {
            out.data_mut()[n * s.c + c] = x.plane(n, c).iter().sum::<Real>() / count;
        }
    }
    Ok(out)
}

pub fn global_avg_pool_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let inv = 1.0 / s.plane() as Real;
    let mut g = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let v = grad_out.data()[n * s.c + c] * inv;
            g.plane_mut(n, c).fill(v);
        }
    }
    g
}

/// Non-overlapping `k`×`k` mean pooling.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let s = x.shape();
    if k == 0 || s.h % k != 0 || s.w % k != 0 {
        return shape_err("avg_pool", format!("{s} not divisible by kernel {k}"));
    }
    if k == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (s.h / k, s.w / k);
    let inv = 1.0 / (k * k) as Real;
    let mut out = Tensor::zeros([s.n, s.c, oh, ow]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                let orow = &mut dst[(y / k) * ow..(y / k + 1) * ow];
                let row = &src[y * s.w..(y + 1) * s.w];
                for (ox, chunk) in row.chunks_exact(k).enumerate() {
                    orow[ox] += chunk.iter().sum::<Real>();
                }
            }
            for v in dst.iter_mut() {
                *v *= inv;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_backward(input_shape: Shape, k: usize, grad_out: &Tensor) -> Tensor {
    if k == 1 {
        return grad_out.clone();
    }
    let s = input_shape;
    let ow = s.w / k;
    let inv = 1.0 / (k * k) as Real;
    let mut g = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let gi = g.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    gi[y * s.w + x] = go[(y / k) * ow + x / k] * inv;
                }
            }
        }
    }
    g
}

/// Per-axis interpolation taps: `(lower index, upper index, upper weight)`.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, Real)> {
    let scale = src as Real / dst as Real;
    (0..dst)
        .map(|d| {
            let pos = ((d as Real + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i1 == i0 { 0.0 } else { pos - i0 as Real };
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear upsampling with half-pixel centres.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = x.shape();
    if out_h < s.h || out_w < s.w || s.h == 0 || s.w == 0 {
        return shape_err("bilinear_upsample", format!("cannot resize {s} to {out_h}x{out_w}"));
    }
    if out_h == s.h && out_w == s.w {
        return Ok(x.clone());
    }
    let ty = bilinear_taps(s.h, out_h);
    let tx = bilinear_taps(s.w, out_w);
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * s.w + x0] * (1.0 - fx) + src[y0 * s.w + x1] * fx;
                    let bot = src[y1 * s.w + x0] * (1.0 - fx) + src[y1 * s.w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let gs = grad_out.shape();
    if gs.h == s.h && gs.w == s.w {
        return grad_out.clone();
    }
    let ty = bilinear_taps(s.h, gs.h);
    let tx = bilinear_taps(s.w, gs.w);
    let mut g = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let gi = g.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = go[oy * gs.w + ox];
                    gi[y0 * s.w + x0] += v * (1.0 - fy) * (1.0 - fx);
                    gi[y0 * s.w + x1] += v * (1.0 - fy) * fx;
                    gi[y1 * s.w + x0] += v * fy * (1.0 - fx);
                    gi[y1 * s.w + x1] += v * fy * fx;
                }
            }
        }
    }
    g
}

pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = inputs.first() else {
        return shape_err("concat_channels", "no inputs");
    };
    let s0 = first.shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return shape_err("concat_channels", format!("{s} vs {s0}"));
        }
        c_total += s.c;
    }
    let mut data = Vec::with_capacity(s0.n * c_total * s0.plane());
    for n in 0..s0.n {
        for t in inputs {
            let per = t.shape().c * s0.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec([s0.n, c_total, s0.h, s0.w], data)
}

/// Channels `start..start + len` of `x`.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape();
    if start + len > s.c {
        return shape_err("slice_channels", format!("{start}+{len} exceeds {} channels", s.c));
    }
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n * len * p);
    for n in 0..s.n {
        let base = (n * s.c + start) * p;
        data.extend_from_slice(&x.data()[base..base + len * p]);
    }
    Tensor::from_vec([s.n, len, s.h, s.w], data)
}

/// Adds `grad` into channels `start..` of a zero tensor shaped `full`.
pub fn slice_channels_backward(full: Shape, start: usize, grad: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(full);
    let gs = grad.shape();
    let p = full.plane();
    for n in 0..full.n {
        let dst = (n * full.c + start) * p;
        let src = n * gs.c * p;
        g.data_mut()[dst..dst + gs.c * p].copy_from_slice(&grad.data()[src..src + gs.c * p]);
    }
    g
}

/// Multiplies each `H×W` plane of `x` by the matching entry of `scale`
/// (`[N, C, 1, 1]`).
pub fn scale_channels(x: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let ss = scale.shape();
    if ss != Shape::new(s.n, s.c, 1, 1) {
        return shape_err("scale_channels", format!("scale {ss} does not fit {s}"));
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let f = scale.data()[n * s.c + c];
            for v in out.plane_mut(n, c) {
                *v *= f;
            }
        }
    }
    Ok(out)
}

pub fn scale_channels_backward(x: &Tensor, scale: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let s = x.shape();
    let gx = scale_channels(grad_out, scale).expect("validated in forward");
    let mut gs = Tensor::zeros(scale.shape());
    for n in 0..s.n {
        for c in 0..s.c {
            gs.data_mut()[n * s.c + c] = x
                .plane(n, c)
                .iter()
                .zip(grad_out.plane(n, c))
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    (gx, gs)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err("add", format!("{} vs {}", a.shape(), b.shape()));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Reflection index for position `i` on an axis of length `n`, repeating
/// the reflection as often as needed.
#[inline]
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Grows `x` to `out_h`×`out_w` by reflecting across the bottom and right
/// borders.
pub fn pad_reflect(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = x.shape();
    if out_h < s.h || out_w < s.w || s.h == 0 || s.w == 0 {
        return shape_err("pad_reflect", format!("cannot pad {s} to {out_h}x{out_w}"));
    }
    if out_h == s.h && out_w == s.w {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..out_h {
                let sy = reflect_index(y, s.h);
                for xx in 0..out_w {
                    dst[y * out_w + xx] = src[sy * s.w + reflect_index(xx, s.w)];
                }
            }
        }
    }
    Ok(out)
}

pub fn pad_reflect_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let gs = grad_out.shape();
    let mut g = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let gi = g.plane_mut(n, c);
            for y in 0..gs.h {
                let sy = reflect_index(y, s.h);
                for xx in 0..gs.w {
                    gi[sy * s.w + reflect_index(xx, s.w)] += go[y * gs.w + xx];
                }
            }
        }
    }
    g
}

/// Top-left `out_h`×`out_w` window of `x`.
pub fn crop(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = x.shape();
    if out_h > s.h || out_w > s.w {
        return shape_err("crop", format!("cannot crop {s} to {out_h}x{out_w}"));
    }
    if out_h == s.h && out_w == s.w {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..out_h {
                dst[y * out_w..(y + 1) * out_w].copy_from_slice(&src[y * s.w..y * s.w + out_w]);
            }
        }
    }
    Ok(out)
}

pub fn crop_backward(input_shape: Shape, grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let gs = grad_out.shape();
    let mut g = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let gi = g.plane_mut(n, c);
            for y in 0..gs.h {
                gi[y * s.w..y * s.w + gs.w].copy_from_slice(&go[y * gs.w..(y + 1) * gs.w]);
            }
        }
    }
    g
}

/// Mean absolute difference.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Real> {
    if pred.shape() != target.shape() {
        return shape_err("l1_loss", format!("{} vs {}", pred.shape(), target.shape()));
    }
    let total: Real = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / pred.len() as Real)
}

/// Adjoint of [`l1_loss`] w.r.t. `pred`, scaled by the upstream scalar `g`.
/// The subgradient at zero residual is taken as 0.
pub fn l1_loss_backward(pred: &Tensor, target: &Tensor, g: Real) -> Tensor {
    let inv = g / pred.len() as Real;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = a - b;
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape")
}
