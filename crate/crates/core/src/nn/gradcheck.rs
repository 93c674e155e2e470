//! Central finite-difference verification of [`Network::backward`].

use super::{LossFn, Mode, Network, Tensor};
use crate::{Error, Result};

/// Scalar the check differentiates.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// `sum(probe * output)`: exercises the backward pass with an arbitrary
    /// upstream gradient.
    Probe(&'a [f64]),
    Loss { loss: &'a LossFn, targets: &'a [f64] },
}

impl Objective<'_> {
    fn value_and_grad(&self, out: &Tensor<f64>) -> Result<(f64, Vec<f64>)> {
        match *self {
            Objective::Probe(p) => {
                if p.len() != out.len() {
                    return Err(Error::Shape(format!(
                        "probe has {} values, output has {}",
                        p.len(),
                        out.len()
                    )));
                }
                Ok((p.iter().zip(&out.data).map(|(a, b)| a * b).sum(), p.to_vec()))
            }
            Objective::Loss { loss, targets } => loss.eval(&out.data, out.shape[0], targets),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Relative error of each parameter tensor, in declaration order.
    pub params: Vec<f64>,
    /// Relative error of the gradient with respect to the input.
    pub input: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().copied().fold(self.input, f64::max)
    }
}

/// `|a - b| / max(|a| + |b|, 1e-12)` over whole vectors (Euclidean norms).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic gradients of every parameter and of the input with
/// central differences of step `eps`. `mode` is fixed across all
/// evaluations, so dropout masks stay put.
pub fn check_gradients(
    net: &Network<f64>,
    input: &Tensor<f64>,
    objective: Objective<'_>,
    mode: Mode,
    eps: f64,
) -> Result<GradCheckReport> {
    let eval = |net: &Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        let tape = net.forward(x, mode)?;
        Ok(objective.value_and_grad(tape.output())?.0)
    };

    let mut analytic_net = net.clone();
    analytic_net.params_iter_mut().for_each(|p| p.grad = None);
    let tape = analytic_net.forward(input, mode)?;
    let (_, upstream) = objective.value_and_grad(tape.output())?;
    let input_grad = analytic_net.backward(&tape, upstream)?;

    let mut probe = net.clone();
    let mut params = Vec::new();
    let n_tensors = probe.params_iter().count();
    for k in 0..n_tensors {
        let analytic = analytic_net
            .params_iter()
            .nth(k)
            .and_then(|p| p.grad.clone())
            .unwrap_or_else(|| vec![0.0; probe.params_iter().nth(k).unwrap().len()]);
        let len = analytic.len();
        let mut numeric = Vec::with_capacity(len);
        for j in 0..len {
            let orig = probe.params_iter().nth(k).unwrap().data[j];
            probe.params_iter_mut().nth(k).unwrap().data[j] = orig + eps;
            let up = eval(&probe, input)?;
            probe.params_iter_mut().nth(k).unwrap().data[j] = orig - eps;
            let down = eval(&probe, input)?;
            probe.params_iter_mut().nth(k).unwrap().data[j] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        params.push(relative_error(&analytic, &numeric));
    }

    let mut x = input.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x.data[j];
        x.data[j] = orig + eps;
        let up = eval(net, &x)?;
        x.data[j] = orig - eps;
        let down = eval(net, &x)?;
        x.data[j] = orig;
        numeric.push((up - down) / (2.0 * eps));
    }
    Ok(GradCheckReport {
        params,
        input: relative_error(&input_grad, &numeric),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let net = Network::<f64>::sequential(
            vec![LayerSpec::Linear {
                in_features: 3,
                out_features: 2,
            }],
            1,
        )
        .unwrap();
        let x = Tensor::new(vec![3, 1, 2], vec![0.1, -0.4, 0.7, 0.2, 0.9, -0.3]).unwrap();
        let probe = [0.5, -1.0, 0.25, 2.0];
        let rep = check_gradients(&net, &x, Objective::Probe(&probe), Mode::Eval, 1e-4).unwrap();
        assert!(rep.max_error() < 1e-7, "{rep:?}");

        let mut wrong = [0.0; 4];
        wrong.copy_from_slice(&probe);
        wrong[0] *= 1.5;
        let a = {
            let mut n = net.clone();
            let tape = n.forward(&x, Mode::Eval).unwrap();
            n.backward(&tape, wrong.to_vec()).unwrap()
        };
        let b = {
            let mut n = net.clone();
            let tape = n.forward(&x, Mode::Eval).unwrap();
            n.backward(&tape, probe.to_vec()).unwrap()
        };
        assert!(relative_error(&a, &b) > 1e-3);
    }
}
