use crate::error::{Error, Result};
use crate::net::PpfNetParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: PpfNetParams,
    pub v: PpfNetParams,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &PpfNetParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub(crate) fn check_shape(&self, params: &PpfNetParams) -> Result<()> {
        if self.m.arch != params.arch || self.v.arch != params.arch {
            return Err(Error::shape("optimizer state does not match the parameter shapes"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update.
///
/// Parameters and moments are kept at `f32` precision after the update so a
/// checkpoint written at any point restores the exact same state.
pub fn adam_step(params: &mut PpfNetParams, grads: &PpfNetParams, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.arch != params.arch {
        return Err(Error::shape("gradient shapes do not match the parameters"));
    }
    state.check_shape(params)?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {lr} is not a finite nonnegative number")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut ps = params.tensors_mut();
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for (k, g) in grads.tensors().into_iter().enumerate() {
        let (p, m, v) = (&mut *ps[k], &mut *ms[k], &mut *vs[k]);
        for i in 0..g.len() {
            let mi = f64::from((ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i]) as f32);
            let vi = f64::from((ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i]) as f32);
            m[i] = mi;
            v[i] = vi;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPSILON);
            p[i] = f64::from((p[i] - update) as f32);
        }
    }
    Ok(())
}
