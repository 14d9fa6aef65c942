//! Joint training of the initial predictor and the denoiser, the optimizer,
//! and checkpoint persistence.
//!
//! Per step the state's generator is consumed in this order: batch indices,
//! one flip decision per element, the diffusion draws of
//! [`make_training_example`], then dropout masks.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{adamw_update, AdamW, Moments};

use crate::data::{augment_hflip, ImageSample};
use crate::diffusion::{make_training_example, predict_training_noise};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Tape, Tensor, Var};

/// Mean absolute error between predicted and true noise.
pub fn l1_loss<'t>(eps: Var<'t>, f_out: Var<'t>) -> Result<Var<'t>> {
    Ok(f_out.sub(eps)?.abs().mean())
}

/// Tensor-level counterpart of [`l1_loss`].
pub fn l1_loss_value(eps: &Tensor, f_out: &Tensor) -> Result<f64> {
    let diff = f_out.zip_map(eps, |a, b| (a - b).abs())?;
    Ok(diff.sum() / diff.numel() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub count: u64,
    pub sum: f64,
    pub last: f64,
}

impl LossStats {
    pub fn record(&mut self, loss: f64) {
        self.count += 1;
        self.sum += loss;
        self.last = loss;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub moments: Moments,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: Rng,
    pub loss_stats: LossStats,
}

impl TrainState {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        let moments = Moments::zeros_like(&params);
        Self {
            params,
            moments,
            step: 0,
            rng: Rng::seed_from_u64(seed),
            loss_stats: LossStats::default(),
        }
    }
}

/// Stacks `[C, h, w]` images into a `[B, C, h, w]` batch.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let items = images
        .into_iter()
        .map(|t| {
            let mut shape = vec![1];
            shape.extend_from_slice(t.shape());
            t.clone().reshape(&shape)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_batch(&items)
}

/// Loss and parameter gradients for one batch. Flips are drawn from `rng`
/// before the diffusion draws. Parameters the loss does not reach get zero
/// gradients.
pub fn compute_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[ImageSample],
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    step: u64,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let batch: Vec<ImageSample> = batch.iter().map(|s| augment_hflip(s, rng)).collect();
    let x = stack_images(batch.iter().map(|s| &s.lr_up))?;
    let y = stack_images(batch.iter().map(|s| &s.hr))?;

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let ex = make_training_example(&tape, &bound, cfg, &x, &y, schedule, rng)?;
    let f_out = predict_training_noise(&bound, cfg, &ex, rng)?;
    let loss = l1_loss(tape.leaf(ex.eps.clone()), f_out)?;
    let value = loss.value().data()[0];
    if !value.is_finite() {
        let out = f_out.value();
        let per = out.numel() / batch.len();
        let batch_index = (0..batch.len())
            .find(|&i| out.data()[i * per..(i + 1) * per].iter().any(|v| !v.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFiniteLoss {
            step,
            gamma: ex.gammas[batch_index],
            batch_index,
        });
    }
    tape.backward(loss)?;
    let mut grads = bound.grads();
    for (name, t) in params.iter() {
        grads.entry(name.clone()).or_insert_with(|| Tensor::zeros(t.shape()));
    }
    Ok((value, grads))
}

/// One optimizer step on `batch`; returns the batch loss.
pub fn train_step(
    state: &mut TrainState,
    cfg: &ModelConfig,
    batch: &[ImageSample],
    schedule: &NoiseSchedule,
    hp: &AdamW,
) -> Result<f64> {
    let next = state.step + 1;
    let (loss, grads) = compute_gradients(&state.params, cfg, batch, schedule, &mut state.rng, next)?;
    adamw_update(&mut state.params, &mut state.moments, &grads, next, hp)?;
    state.step = next;
    state.loss_stats.record(loss);
    Ok(loss)
}

/// Draws `batch_size` dataset indices uniformly with replacement.
pub fn sample_batch(dataset: &[ImageSample], batch_size: usize, rng: &mut Rng) -> Vec<ImageSample> {
    (0..batch_size)
        .map(|_| dataset[rng.below(dataset.len() as u64) as usize].clone())
        .collect()
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub elapsed_s: f64,
}

impl StepRecord {
    pub const HEADER: &'static str = "step,loss,lr,elapsed_s";
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.8},{:e},{:.3}", self.step, self.loss, self.lr, self.elapsed_s)
    }
}

/// Trains until `state.step == until`, calling `on_step` after each step.
pub fn train_until(
    state: &mut TrainState,
    cfg: &ModelConfig,
    dataset: &[ImageSample],
    schedule: &NoiseSchedule,
    hp: &AdamW,
    batch_size: usize,
    until: u64,
    mut on_step: impl FnMut(&TrainState, &StepRecord) -> Result<()>,
) -> Result<()> {
    if dataset.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "training needs a non-empty dataset and batch size".into(),
        ));
    }
    let start = Instant::now();
    while state.step < until {
        let batch = sample_batch(dataset, batch_size, &mut state.rng);
        let loss = train_step(state, cfg, &batch, schedule, hp)?;
        let record = StepRecord {
            step: state.step,
            loss,
            lr: hp.lr,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_step(state, &record)?;
    }
    Ok(())
}
