use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamGrads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// One bias-corrected Adam update of every trainable parameter.
///
/// All gradients are checked before anything is modified, so a NaN leaves
/// both `params` and `state` untouched.
pub fn adam_step(params: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let trainable: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in &trainable {
        if let Some(g) = grads.get(name) {
            if g.shape() != params.get(name)?.shape() {
                return Err(Error::shape("adam_step", g.shape(), params.get(name)?.shape()));
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NanGradient(name.clone()));
            }
        }
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for name in trainable {
        let Some(g) = grads.get(&name) else { continue };
        let value = params.value_mut(&name).expect("listed above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
        let v = state.v.entry(name).or_insert_with(|| vec![0.0; g.numel()]);
        for (((p, &gi), mi), vi) in value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
