//! Adaptive-moment optimizer.

use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over every parameter in the store, consuming
/// (and zeroing) the accumulated gradients.
pub fn adam_update(store: &mut ParamStore, cfg: &AdamConfig) {
    let t = store.advance_step();
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for p in store.iter_named_mut() {
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            grad[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_but_advances_step() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap());
        adam_update(&mut store, &AdamConfig::default());
        assert_eq!(store.value(id).data(), &[1.5, -0.5]);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With constant gradient g, the bias-corrected first step is
        // lr * g / (|g| + eps) ~ lr * sign(g).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        store.grad_mut(id).data_mut().copy_from_slice(&[0.3, -2.0]);
        let cfg = AdamConfig::with_lr(1e-2);
        adam_update(&mut store, &cfg);
        let v = store.value(id).data();
        assert!((v[0] + 1e-2).abs() < 1e-6, "got {}", v[0]);
        assert!((v[1] - 1e-2).abs() < 1e-6, "got {}", v[1]);
        // Gradients zeroed afterwards.
        assert!(store.grad(id).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
            for step in 0..20 {
                let g = (step as f64 * 0.1).sin();
                store.grad_mut(id).data_mut().iter_mut().for_each(|x| *x = g);
                adam_update(&mut store, &AdamConfig::default());
            }
            store.value(id).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "identical seeds and data give bitwise-identical parameters");
    }
}
