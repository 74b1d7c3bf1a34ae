//! Adam with bias correction and a halving step schedule.

use crate::nn::params::ParamStore;
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is multiplied by 0.5 every `decay_every` epochs.
    pub decay_every: u32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 20,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> crate::err::Result<()> {
        if self.lr <= 0.0 {
            return Err(crate::err::Error::Config("adam lr must be > 0".into()));
        }
        for (b, name) in [(self.beta1, "beta1"), (self.beta2, "beta2")] {
            if !(0.0..1.0).contains(&b) {
                return Err(crate::err::Error::Config(format!("adam {name} must be in [0,1)")));
            }
        }
        Ok(())
    }

    /// Stepped decay: halves exactly once at each multiple of `decay_every`.
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * 0.5f64.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let m = (0..params.len())
            .map(|i| Tensor::zeros(params.tensor(i).shape().to_vec()))
            .collect::<Vec<_>>();
        AdamState {
            step: 0,
            m: m.clone(),
            v: m,
        }
    }

    /// One Adam update over every param that has a gradient. `lr` is the
    /// schedule-resolved rate for the current epoch.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &HashMap<usize, Tensor<T>>,
        cfg: &AdamConfig,
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let eps = T::from_f64(cfg.eps);

        let mut ids: Vec<usize> = grads.keys().copied().collect();
        ids.sort_unstable();
        for pid in ids {
            let g = &grads[&pid];
            let m = self.m[pid].data_mut();
            let v = self.v[pid].data_mut();
            let p = params.tensor_mut(pid).data_mut();
            assert_eq!(g.len(), p.len(), "grad/param length mismatch");
            let gd = g.data();
            let lr_t = T::from_f64(lr / bc1);
            let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_m_b1 * gd[i];
                v[i] = b2 * v[i] + one_m_b2 * gd[i] * gd[i];
                let vhat_sqrt = T::from_f64(v[i].to_f64().sqrt() * inv_sqrt_bc2);
                p[i] -= lr_t * m[i] / (vhat_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        // one scalar param, grad 1: delta = -lr / (1 + eps') with bias correction
        // m_hat = 1, v_hat = 1 -> delta = -lr * 1/(sqrt(1)+eps)
        let cfg = AdamConfig::default();
        let mut params = ParamStore::<f64>::new();
        let pid = params.add("w", Tensor::scalar(0.0));
        let mut st = AdamState::new(&params);
        let mut grads = HashMap::new();
        grads.insert(pid, Tensor::scalar(1.0));
        st.step(&mut params, &grads, &cfg, cfg.lr);
        let got = params.tensor(pid).item();
        let expect = -cfg.lr / (1.0 + cfg.eps);
        assert!((got - expect).abs() < 1e-9, "got {got}, expect {expect}");
    }

    #[test]
    fn zero_grad_zero_moments_no_move() {
        let cfg = AdamConfig::default();
        let mut params = ParamStore::<f64>::new();
        let pid = params.add("w", Tensor::scalar(3.25));
        let mut st = AdamState::new(&params);
        let mut grads = HashMap::new();
        grads.insert(pid, Tensor::scalar(0.0));
        st.step(&mut params, &grads, &cfg, cfg.lr);
        assert_eq!(params.tensor(pid).item(), 3.25);
    }

    #[test]
    fn lr_halves_exactly_once_at_epoch_20() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.lr_at_epoch(0), 1e-4);
        assert_eq!(cfg.lr_at_epoch(19), 1e-4);
        assert_eq!(cfg.lr_at_epoch(20), 5e-5);
        assert_eq!(cfg.lr_at_epoch(39), 5e-5);
        assert_eq!(cfg.lr_at_epoch(40), 2.5e-5);
    }
}
