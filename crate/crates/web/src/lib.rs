//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Images cross the boundary as RGBA bytes, ready for `ImageData`.

use pridnet::data::{fixture_image, synthesize_pair, training_pairs, NoiseSpec, PatchPair};
use pridnet::metrics::{psnr, ssim};
use pridnet::model::ModelConfig;
use pridnet::ops::{avg_pool, bilinear_upsample};
use pridnet::train::{TrainPlan, Trainer};
use pridnet::{PridNet, Real, Tensor};
use wasm_bindgen::prelude::*;

fn js_err(e: pridnet::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Grayscale or RGB tensor (batch 1) to RGBA bytes.
pub fn to_rgba(t: &Tensor) -> Vec<u8> {
    let s = t.shape();
    let plane = s.h * s.w;
    let d = t.data();
    let byte = |v: Real| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut out = Vec::with_capacity(plane * 4);
    for i in 0..plane {
        for c in 0..3 {
            let ch = if s.c == 1 { 0 } else { c };
            out.push(byte(d[ch * plane + i]));
        }
        out.push(255);
    }
    out
}

/// A clean fixture, its noisy copy and their PSNR/SSIM.
#[wasm_bindgen]
pub struct NoisyPair {
    clean: Vec<u8>,
    noisy: Vec<u8>,
    psnr: f64,
    ssim: f64,
}

#[wasm_bindgen]
impl NoisyPair {
    pub fn clean(&self) -> Vec<u8> {
        self.clean.clone()
    }
    pub fn noisy(&self) -> Vec<u8> {
        self.noisy.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.psnr
    }
    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.ssim
    }
}

/// Synthesizes Gaussian noise of level `sigma` over fixture `seed`.
#[wasm_bindgen]
pub fn add_noise(seed: u32, size: usize, sigma: f64, channels: usize) -> Result<NoisyPair, JsError> {
    let clean = fixture_image(seed as u64, channels, size, size);
    let pair = synthesize_pair(&clean, &NoiseSpec::gaussian(sigma as Real, seed as u64 + 1)).map_err(js_err)?;
    Ok(NoisyPair {
        clean: to_rgba(&pair.clean),
        noisy: to_rgba(&pair.noisy),
        psnr: psnr(&pair.noisy, &pair.clean, 1.0).map_err(js_err)? as f64,
        ssim: ssim(&pair.noisy, &pair.clean).map_err(js_err)? as f64,
    })
}

/// One pyramid level: the pooled image, and the same image upsampled back.
#[wasm_bindgen]
pub struct PyramidLevel {
    pooled: Vec<u8>,
    pooled_size: usize,
    restored: Vec<u8>,
    psnr: f64,
}

#[wasm_bindgen]
impl PyramidLevel {
    pub fn pooled(&self) -> Vec<u8> {
        self.pooled.clone()
    }
    pub fn restored(&self) -> Vec<u8> {
        self.restored.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn pooled_size(&self) -> usize {
        self.pooled_size
    }
    /// Detail lost by the round trip, as PSNR against the input.
    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.psnr
    }
}

/// Average-pools fixture `seed` by `kernel` and upsamples it bilinearly.
#[wasm_bindgen]
pub fn pyramid_level(seed: u32, size: usize, kernel: usize) -> Result<PyramidLevel, JsError> {
    if kernel == 0 || size % kernel != 0 {
        return Err(JsError::new(&format!("kernel {kernel} must divide the size {size}")));
    }
    let img = fixture_image(seed as u64, 1, size, size);
    let pooled = avg_pool(&img, kernel).map_err(js_err)?;
    let restored = bilinear_upsample(&pooled, size, size).map_err(js_err)?;
    Ok(PyramidLevel {
        pooled: to_rgba(&pooled),
        pooled_size: size / kernel,
        restored: to_rgba(&restored),
        psnr: psnr(&restored, &img, 1.0).map_err(js_err)? as f64,
    })
}

/// A small grayscale model trained a batch at a time, so the page can
/// redraw between steps.
#[wasm_bindgen]
pub struct Session {
    model: PridNet,
    trainer: Trainer,
    data: Vec<PatchPair>,
    test: PatchPair,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, sigma: f64) -> Result<Session, JsError> {
        let seed = seed as u64;
        let noise = NoiseSpec::gaussian(sigma as Real, seed * 7919 + 1);
        let clean: Vec<Tensor> = (0..4).map(|i| fixture_image(seed * 100 + i, 1, 64, 64)).collect();
        let data = training_pairs(&clean, &noise, 32, 16).map_err(js_err)?;
        let test_clean = fixture_image(seed * 100 + 99, 1, 64, 64);
        let test = synthesize_pair(&test_clean, &noise.with_seed(noise.seed ^ 0xabcd)).map_err(js_err)?;
        let plan = TrainPlan {
            epochs: usize::MAX,
            lr_schedule: vec![(0, 1e-3)],
            rng_seed: seed,
            ..TrainPlan::default()
        };
        Ok(Session {
            model: PridNet::new(ModelConfig::micro(1), seed).map_err(js_err)?,
            trainer: Trainer::new(plan).map_err(js_err)?,
            data,
            test,
        })
    }

    /// Runs one pass over the training patches and returns its mean L1 loss.
    pub fn train_epoch(&mut self) -> Result<f64, JsError> {
        let rec = self.trainer.run_epoch(&mut self.model, &self.data).map_err(js_err)?;
        Ok(rec.mean_l1 as f64)
    }

    #[wasm_bindgen(getter)]
    pub fn patch_count(&self) -> usize {
        self.data.len()
    }

    /// Completed passes over the training patches.
    #[wasm_bindgen(getter)]
    pub fn epoch(&self) -> usize {
        self.trainer.epoch()
    }

    #[wasm_bindgen(getter)]
    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    pub fn noisy(&self) -> Vec<u8> {
        to_rgba(&self.test.noisy)
    }

    /// Denoises the held-out image. Returns RGBA; scores via `scores`.
    pub fn denoised(&self) -> Result<Vec<u8>, JsError> {
        Ok(to_rgba(&self.model.denoise(&self.test.noisy).map_err(js_err)?))
    }

    /// `[psnr_noisy, psnr_denoised, ssim_noisy, ssim_denoised]` on the held-out image.
    pub fn scores(&self) -> Result<Vec<f64>, JsError> {
        let out = self.model.denoise(&self.test.noisy).map_err(js_err)?;
        let t = &self.test;
        Ok(vec![
            psnr(&t.noisy, &t.clean, 1.0).map_err(js_err)? as f64,
            psnr(&out, &t.clean, 1.0).map_err(js_err)? as f64,
            ssim(&t.noisy, &t.clean).map_err(js_err)? as f64,
            ssim(&out, &t.clean).map_err(js_err)? as f64,
        ])
    }
}
