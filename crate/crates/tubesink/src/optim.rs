//! Adam with decoupled weight decay, and the warmup + cosine learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::nets::params::ParamStore;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { weight_decay: 0.05, beta1: 0.9, beta2: 0.95, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("optimizer eps must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators, one tensor pair per parameter in store
/// order. Weight decay multiplies parameters directly instead of being
/// folded into the gradient.
pub struct AdamW {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Bias-correction step count (number of updates applied).
    pub updates: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamW { m: zeros.clone(), v: zeros, updates: 0 }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Tensor],
        lr: f64,
        config: &OptimizerConfig,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.updates += 1;
        let t = self.updates as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        let decay = 1.0 - lr * config.weight_decay;

        for ((param, grad), (m, v)) in store
            .tensors_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if param.shape() != grad.shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let ps = param.as_mut_slice();
            let gs = grad.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for i in 0..ps.len() {
                ms[i] = config.beta1 * ms[i] + (1.0 - config.beta1) * gs[i];
                vs[i] = config.beta2 * vs[i] + (1.0 - config.beta2) * gs[i] * gs[i];
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ps[i] = ps[i] * decay - lr * m_hat / (v_hat.sqrt() + config.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base`, then cosine decay to zero at the final step.
/// `step` is 0-based; the first step uses lr 0 and step `warmup_steps` uses
/// exactly `base`.
pub fn cosine_lr(step: u64, total_steps: u64, warmup_steps: u64, base: f64) -> f64 {
    if step < warmup_steps {
        return base * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps + 1 {
        return base;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - 1 - warmup_steps) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("p", Tensor::from_vec(1, values.len(), values));
        store
    }

    #[test]
    fn zero_gradients_and_zero_decay_leave_parameters_unchanged() {
        let mut store = store_with(vec![0.5, -1.5, 2.0]);
        let mut adam = AdamW::new(&store);
        let config = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        adam.step(&mut store, &[Tensor::zeros(1, 3)], 0.1, &config).unwrap();
        assert_eq!(store.get(store.id_of("p").unwrap()).as_slice(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn first_step_from_zero_moments_matches_the_closed_form() {
        // With zero moments, bias correction makes m_hat = g and
        // v_hat = g^2, so the update is -lr * g / (|g| + eps).
        let g = -0.73;
        let lr = 0.05;
        let config = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut store = store_with(vec![1.0]);
        let mut adam = AdamW::new(&store);
        adam.step(&mut store, &[Tensor::from_vec(1, 1, vec![g])], lr, &config).unwrap();
        let want = 1.0 - lr * g / (g.abs() + config.eps);
        let got = store.get(store.id_of("p").unwrap()).get(0, 0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_scales_parameters_multiplicatively() {
        let mut store = store_with(vec![2.0, -4.0]);
        let mut adam = AdamW::new(&store);
        let config = OptimizerConfig { weight_decay: 0.05, ..Default::default() };
        adam.step(&mut store, &[Tensor::zeros(1, 2)], 0.1, &config).unwrap();
        let got = store.get(store.id_of("p").unwrap()).as_slice().to_vec();
        assert!((got[0] - 2.0 * 0.995).abs() < 1e-12);
        assert!((got[1] + 4.0 * 0.995).abs() < 1e-12);
    }

    #[test]
    fn gradient_shape_mismatch_is_rejected() {
        let mut store = store_with(vec![1.0]);
        let mut adam = AdamW::new(&store);
        let config = OptimizerConfig::default();
        assert!(adam.step(&mut store, &[Tensor::zeros(2, 1)], 0.1, &config).is_err());
        assert!(adam.step(&mut store, &[], 0.1, &config).is_err());
    }

    #[test]
    fn schedule_hits_the_specified_endpoints() {
        let base = 3e-3;
        let total = 200;
        let warmup = 20;
        assert_eq!(cosine_lr(0, total, warmup, base), 0.0);
        assert_eq!(cosine_lr(warmup, total, warmup, base), base);
        assert!(cosine_lr(total - 1, total, warmup, base) <= 1e-3 * base);
        // monotone decay after warmup
        let mut prev = base;
        for step in warmup..total {
            let lr = cosine_lr(step, total, warmup, base);
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn schedule_without_warmup_starts_at_base() {
        assert_eq!(cosine_lr(0, 100, 0, 1e-3), 1e-3);
    }
}
