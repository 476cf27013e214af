//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers, one pair per parameter of the store they were built for.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One update of every parameter holding a gradient. Parameters without a
/// gradient (frozen or unused this step) are left untouched. All gradients
/// are checked before any value changes.
pub fn adamw_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut OptimizerState, opt: &AdamW) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidConfig(format!(
            "optimizer state has {} buffers for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    for (_, name, t) in store.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - opt.beta1.powf(t);
    let bc2 = 1.0 - opt.beta2.powf(t);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let i = id.index();
        let p = store.get_mut(id);
        let Some(g) = p.grad().map(|g| g.iter().map(|v| v.widen()).collect::<Vec<f64>>()) else {
            continue;
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let w0 = w.widen();
            *w = T::narrow(w0 - opt.lr * (m_hat / (v_hat.sqrt() + opt.eps)) - opt.lr * opt.weight_decay * w0);
        }
    }
    Ok(())
}
