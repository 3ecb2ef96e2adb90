//! Synthetic noisy/clean pairs, patch extraction and procedural test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    PoissonGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Gaussian standard deviation on the [0, 1] intensity scale.
    pub sigma: Real,
    /// Photon count at intensity 1 for the Poisson component.
    pub poisson_scale: Real,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            sigma: 0.1,
            poisson_scale: 100.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn gaussian(sigma: Real, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            sigma,
            seed,
            ..NoiseSpec::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseSpec { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::Invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.poisson_scale > 0.0) {
            return Err(Error::Invalid(format!(
                "poisson_scale must be > 0, got {}",
                self.poisson_scale
            )));
        }
        Ok(())
    }

    /// Noisy observation of `clean` before clipping to [0, 1].
    pub fn sample_unclamped(&self, clean: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = clean.clone();
        for v in out.data_mut() {
            let base = match self.kind {
                NoiseKind::Gaussian => *v,
                NoiseKind::PoissonGaussian => {
                    let lambda = (*v * self.poisson_scale) as f64;
                    let count = if lambda > 0.0 {
                        Poisson::new(lambda)
                            .map_err(|e| Error::Invalid(e.to_string()))?
                            .sample(&mut rng)
                    } else {
                        0.0
                    };
                    count as Real / self.poisson_scale
                }
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = base + self.sigma * z as Real;
        }
        Ok(out)
    }
}

/// Aligned noisy and clean patches with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub noisy: Tensor,
    pub clean: Tensor,
}

impl PatchPair {
    pub fn new(noisy: Tensor, clean: Tensor) -> Result<Self> {
        if noisy.shape() != clean.shape() {
            return shape_err("PatchPair", format!("{} vs {}", noisy.shape(), clean.shape()));
        }
        Ok(PatchPair { noisy, clean })
    }
}

/// Adds noise per `spec` and clips to [0, 1]. Deterministic in `spec.seed`.
pub fn synthesize_pair(clean: &Tensor, spec: &NoiseSpec) -> Result<PatchPair> {
    let noisy = spec.sample_unclamped(clean)?.map(|v| v.clamp(0.0, 1.0));
    PatchPair::new(noisy, clean.clone())
}

/// Row-major grid of `p`×`p` crops taken every `stride` pixels. Crops that
/// would run past the right or bottom edge are dropped.
pub fn extract_patches(image: &Tensor, p: usize, stride: usize) -> Result<Vec<Tensor>> {
    let s = image.shape();
    if p == 0 || stride == 0 {
        return Err(Error::Invalid("patch size and stride must be >= 1".into()));
    }
    if p > s.h || p > s.w {
        return shape_err("extract_patches", format!("patch {p} larger than image {s}"));
    }
    let mut out = Vec::new();
    for n in 0..s.n {
        for y0 in (0..=s.h - p).step_by(stride) {
            for x0 in (0..=s.w - p).step_by(stride) {
                out.push(Tensor::from_fn([1, s.c, p, p], |[_, c, y, x]| {
                    image.at(n, c, y0 + y, x0 + x)
                }));
            }
        }
    }
    Ok(out)
}

/// Patch pairs cut from the same grid positions of a noisy/clean pair.
pub fn extract_patch_pairs(pair: &PatchPair, p: usize, stride: usize) -> Result<Vec<PatchPair>> {
    let noisy = extract_patches(&pair.noisy, p, stride)?;
    let clean = extract_patches(&pair.clean, p, stride)?;
    noisy
        .into_iter()
        .zip(clean)
        .map(|(n, c)| PatchPair::new(n, c))
        .collect()
}

/// Synthesizes one noisy copy of every image (noise seed offset by image
/// index) and cuts all of them into patch pairs.
pub fn training_pairs(
    images: &[Tensor],
    noise: &NoiseSpec,
    patch: usize,
    stride: usize,
) -> Result<Vec<PatchPair>> {
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let pair = synthesize_pair(img, &noise.with_seed(noise.seed.wrapping_add(i as u64)))?;
        out.extend(extract_patch_pairs(&pair, patch, stride)?);
    }
    Ok(out)
}

fn smoothstep(e0: Real, e1: Real, x: Real) -> Real {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Procedural piecewise-smooth test image in [0.05, 0.95]: a tilted
/// gradient, a few soft-edged discs and rectangles, and a faint low
/// frequency ripple. Fully determined by `seed`.
pub fn fixture_image(seed: u64, channels: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1c7);
    let scale = h.max(w) as Real;
    let gx: Real = rng.random_range(-0.4..0.4);
    let gy: Real = rng.random_range(-0.4..0.4);
    let base: Vec<Real> = (0..channels).map(|_| rng.random_range(0.3..0.7)).collect();

    struct Blob {
        cx: Real,
        cy: Real,
        rx: Real,
        ry: Real,
        disc: bool,
        tint: Vec<Real>,
    }
    let blobs: Vec<Blob> = (0..rng.random_range(3..6))
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            rx: rng.random_range(0.08..0.3),
            ry: rng.random_range(0.08..0.3),
            disc: rng.random_bool(0.5),
            tint: (0..channels).map(|_| rng.random_range(-0.35..0.35)).collect(),
        })
        .collect();
    let freq: Real = rng.random_range(2.0..5.0);
    let phase: Real = rng.random_range(0.0..6.28);

    Tensor::from_fn(Shape::new(1, channels, h, w), |[_, c, y, x]| {
        let u = x as Real / scale;
        let v = y as Real / scale;
        let mut val = base[c] + gx * (u - 0.5) + gy * (v - 0.5);
        for b in &blobs {
            let dx = (u - b.cx) / b.rx;
            let dy = (v - b.cy) / b.ry;
            let d = if b.disc {
                (dx * dx + dy * dy).sqrt()
            } else {
                dx.abs().max(dy.abs())
            };
            val += b.tint[c] * (1.0 - smoothstep(0.9, 1.1, d));
        }
        val += 0.05 * (freq * (u + 0.5 * v) * std::f64::consts::TAU as Real + phase).sin();
        val.clamp(0.05, 0.95)
    })
}
