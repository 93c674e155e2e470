use serde::{Deserialize, Serialize};

use super::{Network, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.to_f64();
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let update = cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        *p = T::from_f64(p.to_f64() - update);
    }
}

/// Adam optimizer state for every parameter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(cfg: AdamConfig, net: &Network<T>) -> Self {
        let zeros: Vec<Vec<f64>> = net.params_iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies the accumulated gradients, scaled by `grad_scale`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step<T: Real>(&mut self, net: &mut Network<T>, grad_scale: f64) -> Result<()> {
        if net.params_iter().count() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match network".into()));
        }
        for (i, p) in net.params_iter().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("parameter {i} changed size")));
            }
            if let Some(g) = &p.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(i));
                }
            }
        }
        self.step += 1;
        let scale = T::from_f64(grad_scale);
        for (i, p) in net.params_iter_mut().enumerate() {
            let Some(g) = p.grad.take() else { continue };
            let g: Vec<T> = g.iter().map(|&v| v * scale).collect();
            adam_update(&mut p.data, &g, &mut self.m[i], &mut self.v[i], self.step, &self.cfg);
            p.grad = Some(g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = [0.3f32, -1.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert_eq!(p, [0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = [2.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &cfg);
        // lr * g / (|g| + eps)
        assert!((p[0] - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected_atomically() {
        let mut net = Network::<f32>::sequential(
            vec![LayerSpec::Linear {
                in_features: 2,
                out_features: 1,
            }],
            3,
        )
        .unwrap();
        let before = net.clone();
        let mut adam = Adam::new(AdamConfig::default(), &net);
        net.params[0][0].grad = Some(vec![f32::NAN, 0.0]);
        net.params[0][1].grad = Some(vec![1.0]);
        assert!(matches!(adam.step(&mut net, 1.0), Err(Error::NonFiniteGradient(0))));
        assert_eq!(adam.step, 0);
        assert_eq!(net.params[0][1].data, before.params[0][1].data);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut net = Network::<f32>::sequential(
                vec![LayerSpec::Linear {
                    in_features: 3,
                    out_features: 2,
                }],
                9,
            )
            .unwrap();
            let mut adam = Adam::new(AdamConfig::default(), &net);
            for s in 0..5 {
                for p in net.params_iter_mut() {
                    let n = p.len();
                    *p.grad_mut() = (0..n).map(|i| ((i + s) as f32 * 0.7).sin()).collect();
                }
                adam.step(&mut net, 0.5).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }
}
