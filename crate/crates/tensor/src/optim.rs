//! First-order optimizers over a [`ParamStore`].

use crate::graph::Gradients;
use crate::params::{Bound, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable entry that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, bound: &Bound<'_, T>, grads: &Gradients<T>) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::cast(self.beta1), T::cast(self.beta2));
        let step_size = T::cast(self.lr / bc1);
        let inv_bc2 = T::cast(1.0 / bc2);
        let eps = T::cast(self.eps);
        for (i, var) in bound.vars().iter().enumerate() {
            let entry = store.entry_mut(i);
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.wrt(*var) else { continue };
            let (m, v) = self.moments[i].get_or_insert_with(|| {
                (Tensor::zeros(entry.value.shape()), Tensor::zeros(entry.value.shape()))
            });
            let p = entry.value.data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let denom = (*v * inv_bc2).sqrt() + eps;
                *p -= step_size * *m / denom;
            }
        }
    }

    /// Flattened moment buffers, for checkpointing.
    pub fn state(&self) -> (u64, &[Option<(Tensor<T>, Tensor<T>)>]) {
        (self.step, &self.moments)
    }
}
