use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::tensor::Tensor;

/// AdamW hyper-parameters (decoupled weight decay).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Moments {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update with bias correction for optimizer step `t` (1-based):
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
///
/// Every parameter needs a gradient; a parameter the loss does not depend on
/// should be given an explicit zero gradient.
pub fn adamw_update(
    params: &mut ModelParams,
    moments: &mut Moments,
    grads: &BTreeMap<String, Tensor>,
    t: u64,
    hp: &AdamW,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("optimizer step index is 1-based".into()));
    }
    for (name, theta) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
        theta.expect_same_shape(g, "adamw_update")?;
        for store in [&moments.m, &moments.v] {
            let mo = store
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing optimizer moment for {name}")))?;
            theta.expect_same_shape(mo, "adamw_update")?;
        }
    }
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for (name, theta) in params.iter_mut() {
        let g = grads[name].data();
        let m = moments.m.get_mut(name).expect("checked above").data_mut();
        let v = moments.v.get_mut(name).expect("checked above").data_mut();
        for (i, p) in theta.data_mut().iter_mut().enumerate() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= hp.lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * *p);
        }
    }
    Ok(())
}
