//! Adam over a parameter store. Buffers (running statistics) are never
//! touched; they evolve through the explicit batch-norm updates instead.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::ops::c;
use crate::nn::{ParamStore, Scalar, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    /// The GAN-tuned setting: low first moment so stale momentum doesn't
    /// fight the adversary's latest move.
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the shared step counter.
pub struct AdamState<F> {
    m: ParamStore<F>,
    v: ParamStore<F>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(schema: &Schema) -> Self {
        Self {
            m: ParamStore::zeros(schema),
            v: ParamStore::zeros(schema),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` per trainable
    /// variable, with bias-corrected moments.
    pub fn step(
        &mut self,
        schema: &Schema,
        params: &mut ParamStore<F>,
        grads: &ParamStore<F>,
        hp: &AdamParams,
    ) {
        self.t += 1;
        let b1 = c::<F>(hp.beta1);
        let b2 = c::<F>(hp.beta2);
        let one = F::one();
        let bc1 = c::<F>(1.0 - hp.beta1.powi(self.t as i32));
        let bc2 = c::<F>(1.0 - hp.beta2.powi(self.t as i32));
        let lr = c::<F>(hp.lr);
        let eps = c::<F>(hp.eps);
        for (id, spec) in schema.iter() {
            if !spec.trainable {
                continue;
            }
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            ndarray::Zip::from(&mut *m).and(g).for_each(|me, &ge| {
                *me = b1 * *me + (one - b1) * ge;
            });
            let m_now = m.clone();
            let v = self.v.get_mut(id);
            ndarray::Zip::from(&mut *v).and(g).for_each(|ve, &ge| {
                *ve = b2 * *ve + (one - b2) * ge * ge;
            });
            let v_now = v.clone();
            let p = params.get_mut(id);
            ndarray::Zip::from(&mut *p)
                .and(&m_now)
                .and(&v_now)
                .for_each(|pe, &me, &ve| {
                    let m_hat = me / bc1;
                    let v_hat = ve / bc2;
                    *pe = *pe - lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }

    /// Raw moment arrays in schema order, for checkpointing.
    pub fn export(&self) -> (Vec<ArrayD<F>>, Vec<ArrayD<F>>, u64) {
        (
            self.m.iter().map(|(_, a)| a.clone()).collect(),
            self.v.iter().map(|(_, a)| a.clone()).collect(),
            self.t,
        )
    }

    pub fn import(
        schema: &Schema,
        m: Vec<ArrayD<F>>,
        v: Vec<ArrayD<F>>,
        t: u64,
    ) -> crate::error::Result<Self> {
        Ok(Self {
            m: ParamStore::from_arrays(schema, m)?,
            v: ParamStore::from_arrays(schema, v)?,
            t,
        })
    }
}
