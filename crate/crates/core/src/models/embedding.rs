use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Multiplier applied to `sqrt(gamma)` before the sinusoids, spreading the
/// unit interval over a range comparable to integer step indices.
pub const EMBED_SCALE: f64 = 1000.0;

/// Sinusoidal features of `sqrt(gamma_t)`: `dim/2` sines followed by `dim/2`
/// cosines at frequencies `10000^(-i / (dim/2))`.
pub fn noise_level_embedding(gamma_t: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding dim {dim} must be even and positive"
        )));
    }
    if !(gamma_t > 0.0 && gamma_t <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma_t} outside (0, 1]")));
    }
    Tensor::new(&[dim], sinusoids(gamma_t.sqrt(), dim))
}

pub(crate) fn sinusoids(sqrt_gamma: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let s = sqrt_gamma * EMBED_SCALE;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp())
        .collect();
    freqs
        .iter()
        .map(|f| (s * f).sin())
        .chain(freqs.iter().map(|f| (s * f).cos()))
        .collect()
}

/// `[B, dim]` features for a batch of noise levels given as `sqrt(gamma)`.
pub(crate) fn batch_embedding(sqrt_gammas: &[f64], dim: usize) -> Result<Tensor> {
    let data = sqrt_gammas.iter().flat_map(|&s| sinusoids(s, dim)).collect();
    Tensor::new(&[sqrt_gammas.len(), dim], data)
}
