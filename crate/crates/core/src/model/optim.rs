//! Adam with decoupled weight decay. Decay applies only to matrices (two or
//! more dimensions); gains and biases are exempt.

use std::collections::HashMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::Param;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamWConfig {
    pub fn new(lr: f32, weight_decay: f32) -> Self {
        AdamWConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Optimizer state: first and second moment per parameter name.
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: HashMap<String, ArrayD<f32>>,
    v: HashMap<String, ArrayD<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over the given parameters using their accumulated
    /// gradients. Gradients are not cleared; callers zero them afterwards.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.step += 1;
        let t = self.step as f32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);
        for param in params.iter_mut() {
            let m = self
                .m
                .entry(param.name.clone())
                .or_insert_with(|| ArrayD::zeros(param.value.raw_dim()));
            let v = self
                .v
                .entry(param.name.clone())
                .or_insert_with(|| ArrayD::zeros(param.value.raw_dim()));
            ndarray::Zip::from(&mut *m)
                .and(&param.grad)
                .for_each(|m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            ndarray::Zip::from(&mut *v)
                .and(&param.grad)
                .for_each(|v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            if c.weight_decay > 0.0 && param.decays() {
                let shrink = 1.0 - c.lr * c.weight_decay;
                param.value.mapv_inplace(|w| w * shrink);
            }
            ndarray::Zip::from(&mut param.value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let m_hat = m / bias1;
                    let v_hat = v / bias2;
                    *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::IxDyn;

    fn param(name: &str, values: &[f32]) -> Param {
        Param::new(
            name,
            ArrayD::from_shape_vec(IxDyn(&[values.len()]), values.to_vec()).unwrap(),
        )
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut p = param("w", &[1.0, -2.0]);
        p.grad = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.5, -0.25]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0));
        opt.step(&mut [&mut p]);
        // With bias correction, the first update is lr * g / (|g| + eps).
        assert_abs_diff_eq!(p.value[[0]], 1.0 - 0.1, epsilon = 1e-5);
        assert_abs_diff_eq!(p.value[[1]], -2.0 + 0.1, epsilon = 1e-5);
    }

    #[test]
    fn weight_decay_skips_one_dimensional_params() {
        let mut bias = param("b", &[1.0]);
        let mut weight = Param::new(
            "w",
            ArrayD::from_shape_vec(IxDyn(&[1, 1]), vec![1.0]).unwrap(),
        );
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.5));
        opt.step(&mut [&mut bias, &mut weight]);
        // Zero gradients: the only movement is decay on the matrix.
        assert_eq!(bias.value[[0]], 1.0);
        assert_abs_diff_eq!(weight.value[[0, 0]], 1.0 - 0.1 * 0.5, epsilon = 1e-6);
    }

    #[test]
    fn converges_on_a_quadratic_bowl() {
        let mut p = param("w", &[3.0, -4.0, 0.5]);
        let mut opt = AdamW::new(AdamWConfig::new(0.05, 0.0));
        for _ in 0..2000 {
            p.grad = p.value.mapv(|w| 2.0 * w);
            opt.step(&mut [&mut p]);
            p.zero_grad();
        }
        for w in p.value.iter() {
            assert!(w.abs() < 1e-2, "failed to converge: {w}");
        }
    }

    #[test]
    fn moments_persist_across_steps_by_name() {
        let mut p = param("w", &[0.0]);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0));
        p.grad = ArrayD::from_shape_vec(IxDyn(&[1]), vec![1.0]).unwrap();
        opt.step(&mut [&mut p]);
        let after_one = p.value[[0]];
        // A second identical gradient keeps moving in the same direction.
        opt.step(&mut [&mut p]);
        assert!(p.value[[0]] < after_one);
        assert_eq!(opt.steps_taken(), 2);
    }
}
