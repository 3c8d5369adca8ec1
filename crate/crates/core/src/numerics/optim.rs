use serde::{Deserialize, Serialize};

use super::matrix::Scalar;
use super::param::ParamStore;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

impl AdamW {
    /// One update with the same learning rate for every trainable tensor.
    pub fn step<F: Scalar>(&self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        let lrs = vec![lr; store.len()];
        self.step_per_tensor(store, &lrs)
    }

    /// One update with a learning rate per tensor (indexed like the store).
    ///
    /// A tensor whose rate is exactly zero is skipped completely: value,
    /// moments and step counter stay bit-identical. Gradients are checked for
    /// non-finite values before anything is modified.
    pub fn step_per_tensor<F: Scalar>(&self, store: &mut ParamStore<F>, lrs: &[f64]) -> Result<()> {
        if lrs.len() != store.len() {
            return Err(Error::contract(format!(
                "{} learning rates for {} tensors",
                lrs.len(),
                store.len()
            )));
        }
        for (_, t) in store.iter() {
            if t.trainable() && !t.grad.all_finite() {
                return Err(Error::NonFiniteGradient(t.name().to_string()));
            }
        }
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (one, eps) = (F::one(), F::of(self.eps));
        for (t, &lr) in store.iter_mut().zip(lrs) {
            if lr == 0.0 || !t.trainable() {
                continue;
            }
            let state = t
                .state
                .as_mut()
                .expect("trainable tensors always carry optimizer state");
            state.step += 1;
            let bc1 = F::of(1.0 - self.beta1.powi(state.step as i32));
            let bc2 = F::of(1.0 - self.beta2.powi(state.step as i32));
            let lr_f = F::of(lr);
            let decay = F::of(lr * self.weight_decay);
            let values = t.value.data_mut();
            let m = state.m.data_mut();
            let v = state.v.data_mut();
            for (((w, &g), m), v) in values.iter_mut().zip(t.grad.data()).zip(m).zip(v) {
                *w = *w - decay * *w;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w = *w - lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
