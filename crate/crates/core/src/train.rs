//! L1 training with Adam and a piecewise-constant learning-rate schedule.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatchPair;
use crate::error::{Error, Result};
use crate::graph::{Graph, Gradients, Tape};
use crate::model::PridNet;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub use crate::ops::l1_loss;

pub const ADAM_BETA1: Real = 0.9;
pub const ADAM_BETA2: Real = 0.999;
pub const ADAM_EPS: Real = 1e-8;

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub t: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: Real,
) -> Result<()> {
    for name in params.names() {
        if grads.get(name).is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("gradient of `{name}` is {}, parameter is {}", g.shape(), p.shape()),
            });
        }
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
        for (((pv, mv), vv), &gv) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    pub epochs: usize,
    /// `(first epoch, learning rate)` pairs, epochs counted from 0.
    pub lr_schedule: Vec<(usize, Real)>,
    pub patch_size: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan::desk(100)
    }
}

impl TrainPlan {
    /// Desk-scale plan: 32×32 patches, batch 2, learning rate dropping from
    /// 1e-3 to 1e-4 for the last quarter of the run.
    pub fn desk(epochs: usize) -> Self {
        let drop = (epochs * 3 / 4).max(1);
        TrainPlan {
            epochs,
            lr_schedule: vec![(0, 1e-3), (drop, 1e-4)],
            patch_size: 32,
            batch_size: 2,
            rng_seed: 0,
        }
    }

    /// The full-size schedule: 4000 epochs at 256×256, 1e-4 then 1e-5 from
    /// epoch 1500.
    pub fn full_size() -> Self {
        TrainPlan {
            epochs: 4000,
            lr_schedule: vec![(0, 1e-4), (1500, 1e-5)],
            patch_size: 256,
            batch_size: 2,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        match self.lr_schedule.first() {
            None => return bad("lr_schedule is empty".into()),
            Some((0, _)) => {}
            Some((e, _)) => return bad(format!("lr_schedule must start at epoch 0, starts at {e}")),
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("lr_schedule thresholds must be strictly increasing".into());
        }
        if self.lr_schedule.iter().any(|(_, r)| !(*r > 0.0) || !r.is_finite()) {
            return bad("learning rates must be positive".into());
        }
        if self.patch_size == 0 || self.batch_size == 0 {
            return bad("patch_size and batch_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Real {
        self.lr_schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .or(self.lr_schedule.first())
            .map_or(0.0, |(_, r)| *r)
    }

    /// Replaces the base rate and scales later entries by the same factor.
    pub fn with_base_lr(mut self, lr: Real) -> Self {
        if let Some(&(_, base)) = self.lr_schedule.first() {
            let f = lr / base;
            for (_, r) in &mut self.lr_schedule {
                *r *= f;
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: Real,
    pub mean_l1: Real,
}

pub fn write_loss_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,mean_l1")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.lr, r.mean_l1)?;
    }
    Ok(())
}

/// Stateful training loop, usable one batch at a time.
#[derive(Debug)]
pub struct Trainer {
    pub plan: TrainPlan,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch_loss: Real,
    epoch_count: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(plan: TrainPlan) -> Result<Self> {
        plan.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
        Ok(Trainer {
            plan,
            adam: AdamState::new(),
            rng,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            epoch_loss: 0.0,
            epoch_count: 0,
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.plan.epochs
    }

    /// Trains on the next minibatch. Returns the completed epoch's record
    /// when this batch closes an epoch.
    pub fn step(&mut self, model: &mut PridNet, data: &[PatchPair]) -> Result<Option<EpochRecord>> {
        if data.is_empty() {
            return Err(Error::Invalid("training needs at least one patch pair".into()));
        }
        if self.cursor == 0 {
            self.order = (0..data.len()).collect();
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.cursor + self.plan.batch_size).min(data.len());
        let idx = &self.order[self.cursor..end];
        let noisy: Vec<&Tensor> = idx.iter().map(|&i| &data[i].noisy).collect();
        let clean: Vec<&Tensor> = idx.iter().map(|&i| &data[i].clean).collect();
        let lr = self.plan.lr_at(self.epoch);
        let loss = train_batch(model, &mut self.adam, &Tensor::stack(&noisy)?, &Tensor::stack(&clean)?, lr)?;
        self.epoch_loss += loss * idx.len() as Real;
        self.epoch_count += idx.len();
        self.cursor = end;
        if self.cursor < data.len() {
            return Ok(None);
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            lr,
            mean_l1: self.epoch_loss / self.epoch_count as Real,
        };
        self.history.push(rec);
        self.epoch += 1;
        self.cursor = 0;
        self.epoch_loss = 0.0;
        self.epoch_count = 0;
        Ok(Some(rec))
    }

    pub fn run_epoch(&mut self, model: &mut PridNet, data: &[PatchPair]) -> Result<EpochRecord> {
        loop {
            if let Some(rec) = self.step(model, data)? {
                return Ok(rec);
            }
        }
    }
}

/// Forward, L1 loss, backward and one Adam step on a stacked batch. Returns
/// the batch loss.
pub fn train_batch(
    model: &mut PridNet,
    adam: &mut AdamState,
    noisy: &Tensor,
    clean: &Tensor,
    lr: Real,
) -> Result<Real> {
    let mut tape = Tape::new();
    let x = tape.input(noisy.clone());
    let target = tape.input(clean.clone());
    let y = model.forward(&mut tape, &x)?;
    let loss = tape.l1_loss(&y, &target)?;
    let value = tape.value(&loss).item()?;
    if !value.is_finite() {
        let origin = tape
            .first_non_finite()
            .map(|(i, op)| format!("first produced by op #{i} ({op})"))
            .unwrap_or_default();
        return Err(Error::NonFinite(format!("loss is {value}; {origin}")));
    }
    let grads = tape.backward(loss)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
    }
    adam_step(&mut model.params, &grads, adam, lr)?;
    if let Some((name, _)) = model.params.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite(format!("parameter `{name}` after update")));
    }
    Ok(value)
}

/// Runs `plan.epochs` epochs and returns the per-epoch loss history.
pub fn train(model: &mut PridNet, data: &[PatchPair], plan: &TrainPlan) -> Result<Vec<EpochRecord>> {
    let mut trainer = Trainer::new(plan.clone())?;
    while !trainer.finished() {
        trainer.run_epoch(model, data)?;
    }
    Ok(trainer.history)
}
