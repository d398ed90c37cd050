use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment buffers plus the shared step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<F: Real = f32> {
    pub first: Vec<Vec<F>>,
    pub second: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn for_params(params: &ParamSet<F>) -> Self {
        let zeros = |_| -> Vec<Vec<F>> {
            params.iter().map(|(_, _, t)| vec![F::zero(); t.numel()]).collect()
        };
        Self { first: zeros(()), second: zeros(()), step: 0 }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<F: Real = f32> {
    pub config: AdamWConfig,
    pub state: OptimizerState<F>,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &ParamSet<F>) -> Self {
        Self { config, state: OptimizerState::for_params(params) }
    }

    /// One update over the parameters where `trainable` is true. Others are
    /// left bitwise untouched, moments included. A trainable parameter with
    /// no gradient buffer is updated as if its gradient were zero.
    pub fn step(&mut self, params: &mut ParamSet<F>, trainable: &[bool]) -> Result<()> {
        if trainable.len() != params.len() || self.state.first.len() != params.len() {
            return Err(contract_err!(
                "optimizer state for {} params, mask of {}, given {} params",
                self.state.first.len(),
                trainable.len(),
                params.len()
            ));
        }
        for (id, _, t) in params.iter() {
            if self.state.first[id.index()].len() != t.numel() {
                return Err(contract_err!("moment buffer shape mismatch for {}", params.name(id)));
            }
        }
        self.state.step += 1;
        let c = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (lr, b1, b2, eps, wd) = (F::of(c.lr), F::of(c.beta1), F::of(c.beta2), F::of(c.eps), F::of(c.weight_decay));
        let (bc1, bc2) = (F::of(bc1), F::of(bc2));
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if !trainable[id.index()] {
                continue;
            }
            let tensor = params.get_mut(id);
            let grad = tensor.grad().map(<[F]>::to_vec);
            let m = &mut self.state.first[id.index()];
            let v = &mut self.state.second[id.index()];
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(F::zero(), |g| g[i]);
                *p = *p - lr * wd * *p;
                m[i] = b1 * m[i] + (F::one() - b1) * g;
                v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.register("w", Tensor::from_f64([1], &[value]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = one_param(0.7);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &p);
        p.get_mut(crate::tensor::ParamId(0)).accumulate_grad(&[0.0]).unwrap();
        opt.step(&mut p, &[true]).unwrap();
        assert_eq!(p.get(crate::tensor::ParamId(0)).data(), &[0.7]);
        assert_eq!(opt.state.step, 1);
    }

    #[test]
    fn scalar_step_matches_hand_computation() {
        // theta=0.5, g=0.2, lr=0.1, wd=0.1, betas (0.9, 0.999), eps 1e-8.
        // decay: 0.5 - 0.1*0.1*0.5 = 0.495
        // m = 0.02, v = 0.00004; m_hat = 0.2, v_hat = 0.04 -> sqrt 0.2
        // step: 0.1 * 0.2 / (0.2 + 1e-8) = 0.0999999950...
        let mut p = one_param(0.5);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.1, ..Default::default() };
        let mut opt = AdamW::new(cfg, &p);
        let id = crate::tensor::ParamId(0);
        p.get_mut(id).accumulate_grad(&[0.2]).unwrap();
        opt.step(&mut p, &[true]).unwrap();
        let expected = 0.495 - 0.1 * 0.2 / (0.2 + 1e-8);
        assert!((p.get(id).data()[0] - expected).abs() < 1e-12);

        // Second step with the same gradient: m = 0.038, v = 0.00007996.
        p.get_mut(id).zero_grad();
        p.get_mut(id).accumulate_grad(&[0.2]).unwrap();
        opt.step(&mut p, &[true]).unwrap();
        let theta1 = expected;
        let theta2 = theta1 - 0.01 * theta1;
        let m_hat = 0.038 / (1.0 - 0.81);
        let v_hat = 0.00007996 / (1.0 - 0.999f64 * 0.999);
        let theta2 = theta2 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.get(id).data()[0] - theta2).abs() < 1e-12);
    }

    #[test]
    fn frozen_parameter_is_bitwise_unchanged() {
        let mut p = one_param(0.3);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let id = crate::tensor::ParamId(0);
        p.get_mut(id).accumulate_grad(&[5.0]).unwrap();
        let before = p.get(id).data()[0].to_bits();
        opt.step(&mut p, &[false]).unwrap();
        assert_eq!(p.get(id).data()[0].to_bits(), before);
        assert!(opt.state.first[0].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn mask_length_is_checked() {
        let mut p = one_param(0.3);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        assert!(opt.step(&mut p, &[true, false]).is_err());
    }
}
