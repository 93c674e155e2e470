use serde::{Deserialize, Serialize};

use super::Real;
use crate::{Error, Result};

/// Per-example training objectives, averaged over frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFn {
    /// Weighted binary cross-entropy on probabilities: positives weigh
    /// `beta`, negatives `2 - beta`. Targets are 0 or 1.
    Wbce { beta: f64 },
    /// Categorical cross-entropy on `[n_classes, 1, T]` probabilities.
    /// Targets are class ids.
    CrossEntropy,
}

impl LossFn {
    pub fn wbce(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "beta {beta} outside (0, 2): the negative-class weight 2 - beta must stay positive"
            )));
        }
        Ok(LossFn::Wbce { beta })
    }

    /// Loss value and its gradient with respect to `output`.
    pub fn eval<T: Real>(&self, output: &[T], channels: usize, targets: &[T]) -> Result<(f64, Vec<T>)> {
        match *self {
            LossFn::Wbce { beta } => {
                if output.len() != targets.len() {
                    return Err(Error::Shape(format!(
                        "{} outputs vs {} targets",
                        output.len(),
                        targets.len()
                    )));
                }
                let n = output.len() as f64;
                let eps = T::PROB_EPS.to_f64();
                let mut total = 0.0;
                let mut grad = Vec::with_capacity(output.len());
                for (&x, &y) in output.iter().zip(targets) {
                    let x = x.to_f64().clamp(eps, 1.0 - eps);
                    let y = y.to_f64();
                    total += beta * y * x.ln() + (2.0 - beta) * (1.0 - y) * (1.0 - x).ln();
                    let d = beta * y / x - (2.0 - beta) * (1.0 - y) / (1.0 - x);
                    grad.push(T::from_f64(-d / n));
                }
                Ok((-total / n, grad))
            }
            LossFn::CrossEntropy => {
                if channels == 0 || output.len() != channels * targets.len() {
                    return Err(Error::Shape(format!(
                        "{} outputs for {channels} classes x {} frames",
                        output.len(),
                        targets.len()
                    )));
                }
                let t = targets.len();
                let eps = T::PROB_EPS.to_f64();
                let mut total = 0.0;
                let mut grad = vec![T::ZERO; output.len()];
                for (frame, &y) in targets.iter().enumerate() {
                    let class = y.to_f64() as usize;
                    if class >= channels || y.to_f64() != class as f64 {
                        return Err(Error::InvalidClass(class));
                    }
                    let p = output[class * t + frame].to_f64().max(eps);
                    total -= p.ln();
                    grad[class * t + frame] = T::from_f64(-1.0 / (p * t as f64));
                }
                Ok((total / t as f64, grad))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wbce_beta_range() {
        assert!(LossFn::wbce(0.0).is_err());
        assert!(LossFn::wbce(2.0).is_err());
        assert!(LossFn::wbce(1.94).is_ok());
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let probs = [0.5f64, 0.5, 0.5, 0.5];
        assert!(matches!(
            LossFn::CrossEntropy.eval(&probs, 2, &[0.0, 2.0]),
            Err(Error::InvalidClass(2))
        ));
        assert!(LossFn::CrossEntropy.eval(&probs, 3, &[0.0, 1.0]).is_err());
    }
}
