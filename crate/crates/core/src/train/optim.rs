//! Adam with bias correction, and the warmup-then-cosine learning-rate schedule.

use std::collections::BTreeMap;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Linear warmup from 0 to `lr` over `warmup_steps`, then a half cosine
/// down to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return if step >= self.total_steps { 0.0 } else { self.lr };
        }
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub cfg: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, moments: BTreeMap::new() }
    }

    /// Applies one update at learning rate `lr`. Returns `false` and leaves
    /// everything untouched when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> bool {
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            log::warn!("skipping update: non-finite gradient for {}", store.entry(*id).name);
            return false;
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        for (id, g) in grads {
            let name = store.entry(*id).name.clone();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.get_mut(*id);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = mi.to_f64_lossy() / c1;
                let vhat = vi.to_f64_lossy() / c2;
                *pi -= T::of(lr * mhat / (vhat.sqrt() + eps));
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use crate::tensor::Shape;

    #[test]
    fn schedule_boundaries() {
        let s = Schedule { lr: 4e-4, warmup_steps: 100, total_steps: 2000 };
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(100) - 4e-4).abs() < 1e-9);
        assert!(s.lr(2000).abs() < 1e-9);
        assert!((s.lr(50) - 2e-4).abs() < 1e-12);
    }

    #[test]
    fn zero_grads_and_zero_lr_leave_params() {
        let mut store = ParamStore::<f64>::new(0);
        let id = store.add("w", Tensor::full(Shape::matrix(2, 2), 0.7), ParamKind::Trainable).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(&mut store, &[(id, Tensor::zeros(Shape::matrix(2, 2)))], 1e-2));
        assert!(adam.step(&mut store, &[(id, Tensor::ones(Shape::matrix(2, 2)))], 0.0));
        assert!(store.get(id).data().iter().all(|&v| v == 0.7));
        let bad = Tensor::full(Shape::matrix(2, 2), f64::NAN);
        assert!(!adam.step(&mut store, &[(id, bad)], 1e-2));
        assert_eq!(adam.t, 2);
    }
}
