//! Forward noising, the conditional reverse refinement, training-example
//! construction and the full sampling loop, all on residual sub-bands.
//!
//! Random draw order (one generator per call):
//! * training example: `t` for every batch element in index order, then the
//!   noise tensor of every element in index order;
//! * sampling: `z_T` first, then one noise tensor per refinement step that
//!   adds noise (steps `T..=2`, plus step 1 when the final step is noisy).

use crate::error::{Error, Result};
use crate::models::{
    apply_predictor, denoiser_forward, denoiser_forward_eval, init_predictor_forward, Bound, ModelConfig, ModelParams,
};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Tape, Tensor, Var};
use crate::wavelet::{self, WaveletSubbands};

/// i.i.d. standard normal noise with the shape of the diffused tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample(pub Tensor);

impl NoiseSample {
    pub fn draw(shape: &[usize], rng: &mut Rng) -> Self {
        Self(Tensor::randn(shape, rng))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self(Tensor::zeros(shape))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Current noisy residual and its step index (0 = fully denoised).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState {
    pub z: Tensor,
    pub t: usize,
}

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    a.expect_same_shape(b, op)
}

/// `sqrt(gamma_t) z0 + sqrt(1 - gamma_t) eps`.
pub fn forward_marginal_sample(z0: &Tensor, t: usize, schedule: &NoiseSchedule, eps: &NoiseSample) -> Result<Tensor> {
    same_shape(z0, &eps.0, "forward_marginal_sample")?;
    let g = schedule.gamma_at(t)?;
    let (a, b) = (g.sqrt(), (1.0 - g).sqrt());
    z0.zip_map(&eps.0, |z, e| a * z + b * e)
}

/// One forward step: `sqrt(alpha_t) z_{t-1} + sqrt(1 - alpha_t) eps`.
pub fn forward_step_sample(z_prev: &Tensor, t: usize, schedule: &NoiseSchedule, eps: &NoiseSample) -> Result<Tensor> {
    same_shape(z_prev, &eps.0, "forward_step_sample")?;
    let alpha = schedule.alpha(t)?;
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    z_prev.zip_map(&eps.0, |z, e| a * z + b * e)
}

/// Mean of the reverse transition given the noise prediction `f_out`:
/// `(z_t - (1 - alpha_t) / sqrt(1 - gamma_t) * f_out) / sqrt(alpha_t)`.
pub fn posterior_mean(z_t: &Tensor, t: usize, schedule: &NoiseSchedule, f_out: &Tensor) -> Result<Tensor> {
    same_shape(z_t, f_out, "posterior_mean")?;
    let alpha = schedule.alpha(t)?;
    let gamma = schedule.gamma_at(t)?;
    let coef = (1.0 - alpha) / (1.0 - gamma).sqrt();
    let inv = 1.0 / alpha.sqrt();
    z_t.zip_map(f_out, |z, f| inv * (z - coef * f))
}

/// Anything that predicts the injected noise from the condition, the noisy residual and `gamma_t`.
pub trait Denoise {
    fn predict_noise(&self, x_cond: &Tensor, z_t: &Tensor, gamma_t: f64) -> Result<Tensor>;
}

/// Trained networks in eval mode.
#[derive(Clone, Copy)]
pub struct Networks<'a> {
    pub params: &'a ModelParams,
    pub cfg: &'a ModelConfig,
}

impl Denoise for Networks<'_> {
    fn predict_noise(&self, x_cond: &Tensor, z_t: &Tensor, gamma_t: f64) -> Result<Tensor> {
        let batch = z_t.shape()[0];
        denoiser_forward_eval(self.params, self.cfg, x_cond, z_t, &vec![gamma_t.sqrt(); batch])
    }
}

/// One refinement step from `z_t` to `z_{t-1}`.
///
/// Noise `sqrt(1 - alpha_t) eps` is added when `add_noise` is set, except at
/// `t = 1` unless `final_noise` is also set.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    x_cond: &Tensor,
    z_t: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    f: &impl Denoise,
    eps: &NoiseSample,
    add_noise: bool,
    final_noise: bool,
) -> Result<Tensor> {
    let gamma = schedule.gamma_at(t)?;
    let f_out = f.predict_noise(x_cond, z_t, gamma)?;
    let mean = posterior_mean(z_t, t, schedule, &f_out)?;
    if add_noise && (t > 1 || final_noise) {
        same_shape(&mean, &eps.0, "reverse_step")?;
        let s = (1.0 - schedule.alpha(t)?).sqrt();
        mean.zip_map(&eps.0, |m, e| m + s * e)
    } else {
        Ok(mean)
    }
}

/// Maps images into the space the diffusion runs in: Haar sub-bands, or the
/// pixels themselves for image-space configurations.
pub fn to_domain(cfg: &ModelConfig, image: &Tensor) -> Result<Tensor> {
    if cfg.use_dwt {
        wavelet::dwt2d(image)
    } else {
        Ok(image.clone())
    }
}

pub fn from_domain(cfg: &ModelConfig, t: &Tensor) -> Result<Tensor> {
    if cfg.use_dwt {
        wavelet::idwt2d(t)
    } else {
        Ok(t.clone())
    }
}

/// A batch of noised residuals with the graph through the initial predictor kept on the tape.
pub struct TrainingExample<'t> {
    /// Transformed (upsampled) low-resolution input.
    pub x_cond: Var<'t>,
    pub z_t: Var<'t>,
    pub steps: Vec<usize>,
    pub gammas: Vec<f64>,
    pub eps: Tensor,
}

/// Builds `z_t = sqrt(gamma_t) (y̌ - g(x̌)) + sqrt(1 - gamma_t) eps` per batch element.
///
/// `x` is the low-resolution batch already upsampled to the size of `y`.
pub fn make_training_example<'t>(
    tape: &'t Tape,
    params: &Bound<'t>,
    cfg: &ModelConfig,
    x: &Tensor,
    y: &Tensor,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<TrainingExample<'t>> {
    if x.shape() != y.shape() {
        return Err(Error::InvalidShape {
            op: "make_training_example",
            msg: format!(
                "input {:?} and target {:?} differ; upsample the input first",
                x.shape(),
                y.shape()
            ),
        });
    }
    let x_cond = tape.leaf(to_domain(cfg, x)?);
    let y_t = tape.leaf(to_domain(cfg, y)?);
    let batch = x.shape()[0];
    let steps: Vec<usize> = (0..batch)
        .map(|_| 1 + rng.below(schedule.steps() as u64) as usize)
        .collect();
    let gammas = steps
        .iter()
        .map(|&t| schedule.gamma_at(t))
        .collect::<Result<Vec<_>>>()?;
    let dshape = x_cond.shape();
    let eps = Tensor::randn(&dshape, rng);

    let residual = y_t.sub(apply_predictor(params, cfg, x_cond)?)?;
    let signal: Vec<f64> = gammas.iter().map(|g| g.sqrt()).collect();
    let noise: Vec<f64> = gammas.iter().map(|g| (1.0 - g).sqrt()).collect();
    let z_t = residual
        .scale_per_sample(&signal)?
        .add(tape.leaf(eps.clone()).scale_per_sample(&noise)?)?;
    Ok(TrainingExample {
        x_cond,
        z_t,
        steps,
        gammas,
        eps,
    })
}

/// Noise prediction for a training example, with dropout masks drawn from `rng`.
pub fn predict_training_noise<'t>(
    params: &Bound<'t>,
    cfg: &ModelConfig,
    ex: &TrainingExample<'t>,
    rng: &mut Rng,
) -> Result<Var<'t>> {
    let sqrt_gammas: Vec<f64> = ex.gammas.iter().map(|g| g.sqrt()).collect();
    denoiser_forward(params, cfg, ex.x_cond, ex.z_t, &sqrt_gammas, Some(rng))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerOptions {
    /// Add noise at the last refinement step too (literal refinement rule).
    pub final_noise: bool,
}

/// Super-resolves a batch of upsampled low-resolution images `[B, C, H, W]`
/// by `schedule.steps()` refinement steps; returns images of the same shape.
pub fn sample(
    params: &ModelParams,
    cfg: &ModelConfig,
    x_up: &Tensor,
    schedule: &NoiseSchedule,
    seed: u64,
    opts: SamplerOptions,
) -> Result<Tensor> {
    let mut rng = Rng::seed_from_u64(seed);
    let x_cond = to_domain(cfg, x_up)?;
    let x_init = if cfg.use_dwt {
        init_predictor_forward(params, cfg, &WaveletSubbands::from_tensor(x_cond.clone())?)?.into_tensor()
    } else {
        let tape = Tape::new();
        let bound = params.bind_with(&tape, |_| false);
        let out = apply_predictor(&bound, cfg, tape.leaf(x_cond.clone()))?;
        let v = out.value();
        (*v).clone()
    };
    let nets = Networks { params, cfg };
    let shape = x_cond.shape().to_vec();
    let mut state = DiffusionState {
        z: Tensor::randn(&shape, &mut rng),
        t: schedule.steps(),
    };
    while state.t >= 1 {
        let t = state.t;
        let noisy = t > 1 || opts.final_noise;
        let eps = if noisy {
            NoiseSample::draw(&shape, &mut rng)
        } else {
            NoiseSample::zeros(&shape)
        };
        state.z = reverse_step(&x_cond, &state.z, t, schedule, &nets, &eps, noisy, opts.final_noise)?;
        state.t -= 1;
    }
    from_domain(cfg, &x_init.add(&state.z)?)
}
