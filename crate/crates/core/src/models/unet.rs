use super::embedding::batch_embedding;
use super::{norm_groups, Bound, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

struct Ctx<'a, 't> {
    p: &'a Bound<'t>,
    /// SiLU of the projected noise-level embedding, `[B, embed_dim]`.
    emb: Var<'t>,
    dropout: f64,
    rng: Option<&'a mut Rng>,
}

impl<'t> Ctx<'_, 't> {
    fn conv(&self, name: &str, x: Var<'t>, pad: usize) -> Result<Var<'t>> {
        x.conv2d(
            self.p.get(&format!("{name}.weight"))?,
            self.p.get(&format!("{name}.bias"))?,
            pad,
        )
    }

    fn norm_silu(&self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let c = x.shape()[1];
        let n = x.group_norm(
            self.p.get(&format!("{name}.gamma"))?,
            self.p.get(&format!("{name}.beta"))?,
            norm_groups(c),
        )?;
        Ok(n.silu())
    }

    /// Pre-activation residual block with an additive noise-level bias.
    fn resblock(&mut self, name: &str, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = self.norm_silu(&format!("{name}.norm1"), x)?;
        h = self.conv(&format!("{name}.conv1"), h, 1)?;
        let bias = self.emb.linear(
            self.p.get(&format!("{name}.emb.weight"))?,
            self.p.get(&format!("{name}.emb.bias"))?,
        )?;
        h = h.add_channel_bias(bias)?;
        h = self.norm_silu(&format!("{name}.norm2"), h)?;
        if let Some(rng) = self.rng.as_deref_mut() {
            if self.dropout > 0.0 {
                h = h.dropout(self.dropout, rng)?;
            }
        }
        h = self.conv(&format!("{name}.conv2"), h, 1)?;
        let skip = if self.p.get(&format!("{name}.skip.weight")).is_ok() {
            self.conv(&format!("{name}.skip"), x, 0)?
        } else {
            x
        };
        skip.add(h)
    }
}

/// Noise prediction `f(x_cond, z_t, gamma_t)`.
///
/// `x_cond` and `z_t` are `[B, D, S, S']` with `D = cfg.data_channels()`;
/// `sqrt_gammas[b]` is the noise level of batch element `b`. Passing an `rng`
/// selects training mode, which enables dropout with masks drawn from it.
pub fn denoiser_forward<'t>(
    p: &Bound<'t>,
    cfg: &ModelConfig,
    x_cond: Var<'t>,
    z_t: Var<'t>,
    sqrt_gammas: &[f64],
    rng: Option<&mut Rng>,
) -> Result<Var<'t>> {
    let tape = x_cond.tape();
    let zs = z_t.shape();
    let [batch, d, h, w] = zs[..] else {
        return Err(Error::InvalidShape {
            op: "denoiser",
            msg: format!("z_t must be 4-D, got {zs:?}"),
        });
    };
    if d != cfg.data_channels() {
        return Err(Error::ShapeMismatch {
            op: "denoiser",
            dim: "channels",
            expected: cfg.data_channels(),
            got: d,
        });
    }
    if x_cond.shape() != zs {
        return Err(Error::InvalidShape {
            op: "denoiser",
            msg: format!("condition {:?} and z_t {zs:?} differ", x_cond.shape()),
        });
    }
    if sqrt_gammas.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "denoiser",
            dim: "noise levels",
            expected: batch,
            got: sqrt_gammas.len(),
        });
    }
    let factor = 1usize << (cfg.levels() - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidShape {
            op: "denoiser",
            msg: format!("spatial size {h}x{w} not divisible by {factor}"),
        });
    }

    let feats = tape.leaf(batch_embedding(sqrt_gammas, cfg.embed_dim())?);
    let e = feats
        .linear(p.get("f.emb.lin1.weight")?, p.get("f.emb.lin1.bias")?)?
        .silu()
        .linear(p.get("f.emb.lin2.weight")?, p.get("f.emb.lin2.bias")?)?
        .silu();
    let mut ctx = Ctx {
        p,
        emb: e,
        dropout: cfg.dropout,
        rng,
    };

    let mut hcur = ctx.conv("f.conv_in", x_cond.concat_channels(z_t)?, 1)?;
    let mut skips = vec![hcur];
    for l in 0..cfg.levels() {
        for j in 0..cfg.n_blocks {
            hcur = ctx.resblock(&format!("f.down{l}.block{j}"), hcur)?;
            skips.push(hcur);
        }
        if l + 1 < cfg.levels() {
            hcur = ctx.conv(&format!("f.down{l}.resample"), hcur.down2x()?, 1)?;
            skips.push(hcur);
        }
    }
    for j in 0..2 {
        hcur = ctx.resblock(&format!("f.mid.block{j}"), hcur)?;
    }
    for l in (0..cfg.levels()).rev() {
        for j in 0..=cfg.n_blocks {
            let skip = skips.pop().expect("encoder pushed one skip per decoder block");
            hcur = ctx.resblock(&format!("f.up{l}.block{j}"), hcur.concat_channels(skip)?)?;
        }
        if l > 0 {
            hcur = ctx.conv(&format!("f.up{l}.resample"), hcur.up2x()?, 1)?;
        }
    }
    let out = ctx.norm_silu("f.out.norm", hcur)?;
    ctx.conv("f.out.conv", out, 1)
}

/// Eval-mode denoiser on plain tensors (no gradient tracking).
pub fn denoiser_forward_eval(
    params: &ModelParams,
    cfg: &ModelConfig,
    x_cond: &Tensor,
    z_t: &Tensor,
    sqrt_gammas: &[f64],
) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = params.bind_with(&tape, |_| false);
    let out = denoiser_forward(
        &bound,
        cfg,
        tape.leaf(x_cond.clone()),
        tape.leaf(z_t.clone()),
        sqrt_gammas,
        None,
    )?;
    let value = out.value();
    Ok((*value).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{param_specs, ModelParams};
    use crate::tensor::finite_diff_check_sampled;

    fn cfg(c: usize) -> ModelConfig {
        ModelConfig {
            image_channels: c,
            base_width: 8,
            channel_mults: vec![1, 2],
            n_blocks: 1,
            predictor_hidden: 4,
            ..ModelConfig::desk()
        }
    }

    fn randomize(params: &mut ModelParams, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += 0.2 * rng.normal();
            }
        }
    }

    #[test]
    fn shape_contract_desk() {
        let cfg = ModelConfig {
            image_channels: 2,
            ..ModelConfig::desk()
        };
        let mut params = ModelParams::init(&cfg, 1).unwrap();
        randomize(&mut params, 2);
        let mut rng = Rng::seed_from_u64(3);
        let x = Tensor::randn(&[1, 8, 16, 16], &mut rng);
        let z = Tensor::randn(&[1, 8, 16, 16], &mut rng);
        let out = denoiser_forward_eval(&params, &cfg, &x, &z, &[0.7]).unwrap();
        assert_eq!(out.shape(), &[1, 8, 16, 16]);
        assert!(out.all_finite());
    }

    #[test]
    fn zero_head_outputs_zero() {
        let cfg = cfg(1);
        let params = ModelParams::init(&cfg, 5).unwrap();
        let mut rng = Rng::seed_from_u64(6);
        let x = Tensor::randn(&[2, 4, 8, 8], &mut rng);
        let z = Tensor::randn(&[2, 4, 8, 8], &mut rng);
        let out = denoiser_forward_eval(&params, &cfg, &x, &z, &[0.3, 0.9]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_pure_and_dropout_varies() {
        let cfg = cfg(1);
        let mut params = ModelParams::init(&cfg, 7).unwrap();
        randomize(&mut params, 8);
        let mut rng = Rng::seed_from_u64(9);
        let x = Tensor::randn(&[1, 4, 8, 8], &mut rng);
        let z = Tensor::randn(&[1, 4, 8, 8], &mut rng);
        let a = denoiser_forward_eval(&params, &cfg, &x, &z, &[0.5]).unwrap();
        let b = denoiser_forward_eval(&params, &cfg, &x, &z, &[0.5]).unwrap();
        assert_eq!(a, b);

        let run = |seed: u64| {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let mut r = Rng::seed_from_u64(seed);
            let out = denoiser_forward(
                &bound,
                &cfg,
                tape.leaf(x.clone()),
                tape.leaf(z.clone()),
                &[0.5],
                Some(&mut r),
            )
            .unwrap();
            let v = out.value();
            (*v).clone()
        };
        assert_ne!(run(1), run(2));
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn rejects_indivisible_spatial() {
        let cfg = cfg(1);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let x = Tensor::zeros(&[1, 4, 6, 5]);
        assert!(denoiser_forward_eval(&params, &cfg, &x, &x, &[0.5]).is_err());
    }

    #[test]
    fn embedding_projection_gradient() {
        let cfg = cfg(1);
        let mut params = ModelParams::init(&cfg, 10).unwrap();
        randomize(&mut params, 11);
        let mut rng = Rng::seed_from_u64(12);
        let x = Tensor::randn(&[1, 4, 4, 4], &mut rng);
        let z = Tensor::randn(&[1, 4, 4, 4], &mut rng);
        let eps = Tensor::randn(&[1, 4, 4, 4], &mut rng);
        for name in ["f.emb.lin1.weight", "f.emb.lin2.weight"] {
            let point = params.get(name).unwrap().clone();
            let report = finite_diff_check_sampled(
                |tape: &Tape, w| {
                    let mut bound = params.bind_with(tape, |_| false);
                    bound.set(name, w);
                    let out = denoiser_forward(&bound, &cfg, tape.leaf(x.clone()), tape.leaf(z.clone()), &[0.6], None)?;
                    Ok(tape.leaf(eps.clone()).sub(out)?.abs().mean())
                },
                &point,
                1e-5,
                30,
                13,
            );
            assert!(report.passes(1e-4), "{name}: {report:?}");
        }
        assert!(param_specs(&cfg).iter().any(|s| s.name == "f.emb.lin1.weight"));
    }
}
