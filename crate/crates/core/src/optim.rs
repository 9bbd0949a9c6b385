//! AdamW with decoupled weight decay, global-norm clipping and a
//! warmup + cosine learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Real, Tensor};
use crate::error::Result;
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied to matrices and kernels only, not to biases or norms.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `grads` at learning rate `lr`.
    pub fn step<T: Real>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(String, Tensor<T>)],
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            let decay = if p.shape().len() >= 2 {
                self.cfg.weight_decay
            } else {
                0.0
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi.f64();
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.cfg.eps);
                let wf = w.f64();
                *w = T::of(wf - lr * decay * wf - lr * update);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [(String, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Linear warmup from `lr / 10` over `warmup` steps, then cosine decay to
/// `lr / 100` at `total`.
pub fn warmup_cosine(step: usize, total: usize, warmup: usize, lr: f64) -> f64 {
    if step < warmup {
        return lr * (0.1 + 0.9 * step as f64 / warmup as f64);
    }
    let span = total.saturating_sub(warmup).max(1);
    let t = ((step - warmup) as f64 / span as f64).min(1.0);
    let floor = lr * 0.01;
    floor + (lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..500 {
            let g = store.get("w").unwrap().clone();
            let g2 = Tensor::new(vec![1, 2], g.data().iter().map(|x| 2.0 * x).collect()).unwrap();
            opt.step(&mut store, &[("w".into(), g2)], 0.1).unwrap();
        }
        assert!(store
            .get("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn decay_is_decoupled_and_skips_vectors() {
        let mut store = ParamStore::<f64>::new();
        store.insert("m", Tensor::full(&[1, 1], 1.0));
        store.insert("b", Tensor::full(&[1], 1.0));
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        });
        let zero = |s: &[usize]| Tensor::zeros(s);
        opt.step(
            &mut store,
            &[("m".into(), zero(&[1, 1])), ("b".into(), zero(&[1]))],
            0.1,
        )
        .unwrap();
        assert!((store.get("m").unwrap().data()[0] - 0.95).abs() < 1e-12);
        assert_eq!(store.get("b").unwrap().data()[0], 1.0);
    }

    #[test]
    fn clipping_and_schedule() {
        let mut g = vec![(
            "a".to_string(),
            Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(),
        )];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1.data()[0] - 0.6_f64).abs() < 1e-12);
        assert!((warmup_cosine(0, 100, 10, 1.0) - 0.1).abs() < 1e-12);
        assert!((warmup_cosine(10, 100, 10, 1.0) - 1.0).abs() < 1e-12);
        assert!((warmup_cosine(100, 100, 10, 1.0) - 0.01).abs() < 1e-12);
    }
}
