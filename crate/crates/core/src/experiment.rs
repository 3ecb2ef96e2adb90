//! Desk-scale denoising experiment and the component ablation built on it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{fixture_image, synthesize_pair, training_pairs, NoiseSpec, PatchPair};
use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::model::{Component, ModelConfig, PridNet};
use crate::tensor::{Real, Tensor};
use crate::train::{train, write_loss_csv, EpochRecord, TrainPlan};

/// Fixture seeds at or above this value are reserved for held-out images.
pub const HELD_OUT_SEED_BASE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskExperiment {
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub noise: NoiseSpec,
    pub train_images: usize,
    pub test_images: usize,
    pub image_size: usize,
    /// Seeds model initialisation; the plan and noise carry their own seeds.
    pub init_seed: u64,
}

impl Default for DeskExperiment {
    fn default() -> Self {
        DeskExperiment::standard(0)
    }
}

impl DeskExperiment {
    /// Micro grayscale model, 200 epochs on sixteen 64×64 fixtures cut into
    /// 64 patches of 32×32, AWGN with sigma 0.1, 1e-3 dropping to 1e-4.
    pub fn standard(seed: u64) -> Self {
        let mut plan = TrainPlan::desk(200);
        plan.rng_seed = seed;
        DeskExperiment {
            model: ModelConfig::micro(1),
            plan,
            noise: NoiseSpec::gaussian(0.1, seed.wrapping_mul(7919).wrapping_add(1)),
            train_images: 16,
            test_images: 4,
            image_size: 64,
            init_seed: seed,
        }
    }

    pub fn train_clean(&self) -> Vec<Tensor> {
        (0..self.train_images as u64)
            .map(|i| fixture_image(i, self.model.in_channels, self.image_size, self.image_size))
            .collect()
    }

    pub fn training_set(&self) -> Result<Vec<PatchPair>> {
        let p = self.plan.patch_size;
        training_pairs(&self.train_clean(), &self.noise, p, p)
    }

    /// Held-out noisy/clean image pairs; fixtures and noise streams are
    /// disjoint from training.
    pub fn test_set(&self) -> Result<Vec<PatchPair>> {
        (0..self.test_images as u64)
            .map(|i| {
                let clean = fixture_image(
                    HELD_OUT_SEED_BASE + i,
                    self.model.in_channels,
                    self.image_size,
                    self.image_size,
                );
                let noise = self
                    .noise
                    .with_seed(self.noise.seed ^ 0xdead_beef ^ (HELD_OUT_SEED_BASE + i));
                synthesize_pair(&clean, &noise)
            })
            .collect()
    }

    pub fn run(&self, label: &str, config: &ModelConfig) -> Result<RunResult> {
        let data = self.training_set()?;
        let mut model = PridNet::new(config.clone(), self.init_seed)?;
        let history = train(&mut model, &data, &self.plan)?;
        let scores = evaluate(&model, &self.test_set()?)?;
        Ok(RunResult {
            label: label.to_string(),
            model,
            history,
            scores,
        })
    }

    /// Full model followed by one run per disabled component.
    pub fn run_ablation(&self) -> Result<Vec<RunResult>> {
        let mut out = vec![self.run("full", &self.model)?];
        for c in Component::ALL {
            let label = format!("no_{}", c.label());
            out.push(self.run(&label, &self.model.without(c))?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub psnr_noisy: Real,
    pub psnr_denoised: Real,
    pub ssim_noisy: Real,
    pub ssim_denoised: Real,
}

impl Scores {
    pub fn gain_db(&self) -> Real {
        self.psnr_denoised - self.psnr_noisy
    }
}

/// Mean PSNR/SSIM of noisy inputs and model outputs against the clean
/// references.
pub fn evaluate(model: &PridNet, pairs: &[PatchPair]) -> Result<Scores> {
    let mut s = Scores {
        psnr_noisy: 0.0,
        psnr_denoised: 0.0,
        ssim_noisy: 0.0,
        ssim_denoised: 0.0,
    };
    for p in pairs {
        let out = model.denoise(&p.noisy)?;
        s.psnr_noisy += psnr(&p.noisy, &p.clean, 1.0)?;
        s.psnr_denoised += psnr(&out, &p.clean, 1.0)?;
        s.ssim_noisy += ssim(&p.noisy, &p.clean)?;
        s.ssim_denoised += ssim(&out, &p.clean)?;
    }
    let n = pairs.len().max(1) as Real;
    s.psnr_noisy /= n;
    s.psnr_denoised /= n;
    s.ssim_noisy /= n;
    s.ssim_denoised /= n;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub model: PridNet,
    pub history: Vec<EpochRecord>,
    pub scores: Scores,
}

impl RunResult {
    pub fn loss_csv(&self) -> String {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &self.history).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

/// One row per run: `variant,channel_attention,pyramid,kernel_select,
/// psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised`.
pub fn write_ablation_csv<W: Write>(mut w: W, runs: &[RunResult]) -> std::io::Result<()> {
    writeln!(
        w,
        "variant,channel_attention,pyramid,kernel_select,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised"
    )?;
    for r in runs {
        let c = &r.model.config;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.label,
            c.channel_attention,
            c.pyramid_kernels.len() > 1,
            c.kernel_select,
            r.scores.psnr_noisy,
            r.scores.psnr_denoised,
            r.scores.ssim_noisy,
            r.scores.ssim_denoised
        )?;
    }
    Ok(())
}
