//! Adam optimizer with bias correction and per-parameter state.
//!
//! State is keyed by parameter name, so a parameter keeps its moment history
//! across steps regardless of registration order. Parameters whose gradient is
//! absent in a step are skipped entirely — their moments do not decay — and
//! frozen parameters are never touched.

use crate::error::{Error, Result};
use crate::math;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn new(lr: f32) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Slot {
    t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

/// One update to apply in an optimizer step.
pub struct ParamUpdate<'a> {
    pub name: &'a str,
    pub param: &'a mut [f32],
    /// `None` means the parameter took no part in this step's graph.
    pub grad: Option<&'a [f32]>,
    pub frozen: bool,
}

#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam { cfg, slots: BTreeMap::new() })
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Apply one Adam step to every live parameter in `updates`.
    pub fn step(&mut self, updates: &mut [ParamUpdate<'_>]) -> Result<()> {
        for u in updates.iter_mut() {
            if u.frozen {
                continue;
            }
            let Some(grad) = u.grad else { continue };
            if grad.len() != u.param.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has {} values but gradient has {}",
                    u.name,
                    u.param.len(),
                    grad.len()
                )));
            }
            let slot = self
                .slots
                .entry(u.name.to_string())
                .or_insert_with(|| Slot { t: 0, m: vec![0.0; grad.len()], v: vec![0.0; grad.len()] });
            if slot.m.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}` changed size from {} to {}",
                    u.name,
                    slot.m.len(),
                    grad.len()
                )));
            }
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "non-finite gradient for parameter `{}` (element {bad}) at optimizer step {}",
                    u.name,
                    slot.t + 1
                )));
            }
            slot.t += 1;
            let bc1 = (1.0 - math::pow(f64::from(self.cfg.beta1), slot.t as f64)) as f32;
            let bc2 = (1.0 - math::pow(f64::from(self.cfg.beta2), slot.t as f64)) as f32;
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            for i in 0..grad.len() {
                let g = grad[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                u.param[i] -= self.cfg.lr * m_hat / (math::sqrtf(v_hat) + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::bits_eq;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = Adam::new(AdamConfig::new(0.01)).unwrap();
        let mut p = [1.5f32, -2.25, 0.0];
        let before = p;
        let grad = [0.0f32; 3];
        adam.step(&mut [ParamUpdate { name: "w", param: &mut p, grad: Some(&grad), frozen: false }])
            .unwrap();
        assert!(bits_eq(&p, &before));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 0.01f32;
        for &g in &[1.0f32, -1.0, 0.5, -100.0, 0.003] {
            let mut adam = Adam::new(AdamConfig::new(lr)).unwrap();
            let mut p = [0.0f32];
            let grad = [g];
            adam.step(&mut [ParamUpdate {
                name: "w",
                param: &mut p,
                grad: Some(&grad),
                frozen: false,
            }])
            .unwrap();
            let expected = -lr * g.signum();
            assert!(
                (p[0] - expected).abs() < lr * 1e-2,
                "g={g}: got {} expected {expected}",
                p[0]
            );
        }
    }

    #[test]
    fn frozen_parameter_with_nonzero_grad_is_unchanged() {
        let mut adam = Adam::new(AdamConfig::new(0.1)).unwrap();
        let mut p = [3.0f32];
        let grad = [5.0f32];
        adam.step(&mut [ParamUpdate { name: "w", param: &mut p, grad: Some(&grad), frozen: true }])
            .unwrap();
        assert!(bits_eq(&p, &[3.0]));
    }

    #[test]
    fn missing_gradient_skips_parameter_and_its_state() {
        let mut adam = Adam::new(AdamConfig::new(0.1)).unwrap();
        let mut a = [0.0f32];
        let mut b = [0.0f32];
        let g = [1.0f32];
        // Step 1: only `a` participates.
        adam.step(&mut [
            ParamUpdate { name: "a", param: &mut a, grad: Some(&g), frozen: false },
            ParamUpdate { name: "b", param: &mut b, grad: None, frozen: false },
        ])
        .unwrap();
        assert!(bits_eq(&b, &[0.0]));
        // Step 2: `b` now participates for its own first step — it must see the
        // same first-step behavior `a` saw, proving its state never advanced.
        let a_after_one = a[0];
        adam.step(&mut [
            ParamUpdate { name: "a", param: &mut a, grad: None, frozen: false },
            ParamUpdate { name: "b", param: &mut b, grad: Some(&g), frozen: false },
        ])
        .unwrap();
        assert_eq!(a[0], a_after_one);
        assert_eq!(b[0], a_after_one);
    }

    #[test]
    fn non_finite_gradient_is_an_error_naming_the_parameter() {
        let mut adam = Adam::new(AdamConfig::new(0.1)).unwrap();
        let mut p = [0.0f32];
        let g = [f32::NAN];
        let err = adam
            .step(&mut [ParamUpdate { name: "w.up", param: &mut p, grad: Some(&g), frozen: false }])
            .unwrap_err();
        match err {
            Error::NonFinite(msg) => {
                assert!(msg.contains("w.up"), "{msg}");
                assert!(msg.contains("step 1"), "{msg}");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let mut adam = Adam::new(AdamConfig::new(0.01)).unwrap();
        let mut p = [1.0f32];
        let g = [1.0f32];
        let mut last = p[0];
        for _ in 0..20 {
            adam.step(&mut [ParamUpdate {
                name: "w",
                param: &mut p,
                grad: Some(&g),
                frozen: false,
            }])
            .unwrap();
            assert!(p[0] < last);
            last = p[0];
        }
    }

    #[test]
    fn identical_sequences_give_bitwise_identical_parameters() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::new(0.005)).unwrap();
            let mut p = [0.3f32, -0.7];
            for k in 0..50u32 {
                let g = [0.1 + k as f32 * 0.01, -0.2];
                adam.step(&mut [ParamUpdate {
                    name: "w",
                    param: &mut p,
                    grad: Some(&g),
                    frozen: false,
                }])
                .unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(bits_eq(&a, &b));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(Adam::new(AdamConfig::new(0.0)).is_err());
        assert!(Adam::new(AdamConfig { lr: 0.1, beta1: 1.0, beta2: 0.999, eps: 1e-8 }).is_err());
        assert!(Adam::new(AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 0.0 }).is_err());
    }
}
