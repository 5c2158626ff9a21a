//! Adaptive-moment gradient descent.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{cst, Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Moment accumulators for every parameter the optimizer has touched.
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<usize, Vec<T>>,
    second: BTreeMap<usize, Vec<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        Ok(OptimizerState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    /// Written by the plateau scheduler between epochs.
    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        self.config.learning_rate = lr;
        Ok(())
    }

    /// One update of every parameter in `params` that has an entry in `grads`.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        ids: &[usize],
        grads: &BTreeMap<usize, Tensor<T>>,
    ) -> Result<()> {
        if params.len() != ids.len() {
            return Err(Error::Argument("one id per parameter required".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let b1 = cst::<T>(c.beta1);
        let b2 = cst::<T>(c.beta2);
        let one = T::one();
        let bc1 = cst::<T>(1.0 - c.beta1.powi(t));
        let bc2 = cst::<T>(1.0 - c.beta2.powi(t));
        let lr = cst::<T>(c.learning_rate);
        let eps = cst::<T>(c.epsilon);
        for (p, &id) in params.iter_mut().zip(ids) {
            let Some(g) = grads.get(&id) else { continue };
            if g.shape() != p.shape() {
                return Err(shape_err!(
                    "gradient {:?} does not match parameter {:?} (id {id})",
                    g.shape(),
                    p.shape()
                ));
            }
            let m = self.first.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.second.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
