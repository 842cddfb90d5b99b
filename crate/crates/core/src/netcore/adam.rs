use super::{ParamStore, Tensor};
use crate::{Error, Result};

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-4;
    pub const DEFAULT_BETA1: f64 = 0.5;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(store: &ParamStore) -> Self {
        Self::with_hyper(
            store,
            Self::DEFAULT_LR,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
        )
    }

    pub fn with_hyper(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .values()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        AdamState {
            lr,
            beta1,
            beta2,
            eps: Self::DEFAULT_EPS,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameters, {} gradients, {} moments",
                store.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (g, p)) in grads.iter().zip(store.values()).enumerate() {
            if !g.same_shape(p) || !self.m[i].same_shape(p) {
                return Err(Error::Shape(format!(
                    "adam: gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.names()[i],
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in store
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
