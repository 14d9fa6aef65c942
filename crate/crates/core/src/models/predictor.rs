use super::{Bound, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::wavelet::WaveletSubbands;

/// `x + Δ(x)` where Δ is a stack of 3x3 same-padded convolutions with SiLU
/// between layers and a linear last layer.
pub fn predictor_forward<'t>(p: &Bound<'t>, cfg: &ModelConfig, x: Var<'t>) -> Result<Var<'t>> {
    let channels = x.shape()[1];
    if channels != cfg.data_channels() {
        return Err(Error::ShapeMismatch {
            op: "init_predictor",
            dim: "channels",
            expected: cfg.data_channels(),
            got: channels,
        });
    }
    let mut h = x;
    for i in 0..cfg.predictor_layers {
        let name = format!("g.conv{i:02}");
        h = h.conv2d(p.get(&format!("{name}.weight"))?, p.get(&format!("{name}.bias"))?, 1)?;
        if i + 1 < cfg.predictor_layers {
            h = h.silu();
        }
    }
    x.add(h)
}

/// `g(x)`, or `x` itself when the configuration has no learned predictor.
pub fn apply_predictor<'t>(p: &Bound<'t>, cfg: &ModelConfig, x: Var<'t>) -> Result<Var<'t>> {
    if cfg.use_init_predictor {
        predictor_forward(p, cfg, x)
    } else {
        Ok(x)
    }
}

/// Tape-free evaluation of the initial predictor on sub-bands.
pub fn init_predictor_forward(params: &ModelParams, cfg: &ModelConfig, x: &WaveletSubbands) -> Result<WaveletSubbands> {
    let tape = Tape::new();
    let bound = params.bind_with(&tape, |_| false);
    let xv = tape.leaf(x.tensor().clone());
    let out: Tensor = (*apply_predictor(&bound, cfg, xv)?.value()).clone();
    WaveletSubbands::from_tensor(out)
}
