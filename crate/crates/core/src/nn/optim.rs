use super::graph::NamedTensors;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates mirroring the trainable weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: NamedTensors,
    pub v: NamedTensors,
    pub timestep: u64,
}

impl AdamState {
    pub fn for_weights<'a>(weights: impl Iterator<Item = (&'a String, &'a Tensor)>) -> Self {
        let mut m = NamedTensors::new();
        for (k, t) in weights {
            m.insert(k.clone(), Tensor::zeros(t.shape()));
        }
        AdamState { v: m.clone(), m, timestep: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a non-finite value; nothing was changed.
    SkippedNonFinite,
}

/// One bias-corrected Adam update of every weight that has a gradient.
pub fn adam_step(
    weights: &mut NamedTensors,
    grads: &NamedTensors,
    state: &mut AdamState,
    lr: f64,
) -> Result<StepOutcome> {
    if grads.values().any(|g| !g.all_finite()) {
        return Ok(StepOutcome::SkippedNonFinite);
    }
    for (k, g) in grads {
        let w = weights.get(k).ok_or_else(|| Error::Training(format!("gradient for unknown weight {k}")))?;
        if w.shape() != g.shape() {
            return Err(Error::shape(format!("gradient for {k} is misshapen")));
        }
        if !state.m.contains_key(k) {
            state.m.insert(k.clone(), Tensor::zeros(g.shape()));
            state.v.insert(k.clone(), Tensor::zeros(g.shape()));
        }
    }
    state.timestep += 1;
    let t = state.timestep as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (k, g) in grads {
        let w = weights.get_mut(k).expect("checked above").data_mut();
        let m = state.m.get_mut(k).expect("inserted above").data_mut();
        let v = state.v.get_mut(k).expect("inserted above").data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(StepOutcome::Applied)
}
