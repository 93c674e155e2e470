use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Detector;
use crate::nn::{forward_backward, Adam, AdamConfig, Mode, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// A normalized `[1, 128, T]` input with one target per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub input: Tensor<f32>,
    pub targets: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Held-out loss before the first update.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub steps: u64,
}

impl TrainReport {
    /// Per-epoch loss table with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{:.6},{}\n", e.epoch, e.train_loss, val));
        }
        s
    }
}

/// Mean evaluation-mode loss of `det` over `examples`.
pub fn mean_loss(det: &Detector, examples: &[TrainExample]) -> Result<f64> {
    let loss = det.config.loss();
    let mut total = 0.0;
    for ex in examples {
        let out = det.network.predict(&ex.input)?;
        total += loss.eval(&out.data, out.shape[0], &ex.targets)?.0;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Mini-batch Adam over `train`, shuffled each epoch. `on_epoch` sees every
/// epoch's log as soon as it is complete.
pub fn train(
    det: &mut Detector,
    train: &[TrainExample],
    val: &[TrainExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let loss = det.config.loss();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &det.network,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_val_loss = if val.is_empty() {
        None
    } else {
        Some(mean_loss(det, val)?)
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            det.network.zero_grad();
            let step = adam.step + 1;
            let mut batch_loss = 0.0;
            for (j, &i) in batch.iter().enumerate() {
                let ex = &train[i];
                let seed = cfg
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(step.wrapping_mul(1024) + j as u64);
                let l = forward_backward(&mut det.network, &ex.input, &loss, &ex.targets, Mode::Train { seed })?;
                if !l.is_finite() {
                    return Err(Error::Divergence { step, loss: l });
                }
                batch_loss += l;
            }
            adam.step(&mut det.network, 1.0 / batch.len() as f64)
                .map_err(|e| match e {
                    Error::NonFiniteGradient(_) => Error::Divergence {
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            epoch_loss += batch_loss;
        }
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss: if val.is_empty() {
                None
            } else {
                Some(mean_loss(det, val)?)
            },
        };
        on_epoch(&log);
        epochs.push(log);
    }
    Ok(TrainReport {
        initial_val_loss,
        epochs,
        steps: adam.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CnnTopology, InputNorm, ModelConfig, OnsetDetectorConfig};

    fn toy_examples(n: usize, t: usize) -> Vec<TrainExample> {
        // Onset at frames where a loud broadband column appears.
        (0..n)
            .map(|k| {
                let mut data = vec![-1.0f32; 128 * t];
                let mut targets = vec![0.0f32; t];
                for f in (k % 4..t).step_by(5) {
                    targets[f] = 1.0;
                    for m in 0..128 {
                        data[m * t + f] = 2.0;
                    }
                }
                TrainExample {
                    input: Tensor::new(vec![1, 128, t], data).unwrap(),
                    targets,
                }
            })
            .collect()
    }

    fn detector() -> Detector {
        let cfg = OnsetDetectorConfig {
            topology: CnnTopology {
                first_layer_channels: 2,
                conv_channels: [3, 3],
                hidden_fc: 6,
                ..CnnTopology::default()
            },
            beta: 1.0,
        };
        Detector::new(ModelConfig::Onset(cfg), InputNorm::default(), 5).unwrap()
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let data = toy_examples(8, 20);
        let cfg = TrainConfig {
            lr: 3e-3,
            batch_size: 4,
            epochs: 8,
            seed: 7,
        };
        let run = || {
            let mut d = detector();
            let r = train(&mut d, &data[..6], &data[6..], &cfg, |_| {}).unwrap();
            (d, r)
        };
        let (d1, r1) = run();
        let (d2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(d1, d2);
        assert_eq!(r1.steps, 16);
        assert_eq!(r1.epochs.len(), 8);
        let first = r1.initial_val_loss.unwrap();
        let last = r1.epochs.last().unwrap().val_loss.unwrap();
        assert!(last < 0.8 * first, "{first} -> {last}");
        assert_eq!(r1.to_csv().lines().count(), 9);
    }

    #[test]
    fn divergence_reports_step() {
        let mut data = toy_examples(2, 10);
        data[1].input.data[3] = f32::NAN;
        let mut d = detector();
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        let err = train(&mut d, &data, &[], &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert!(err.is_numeric());
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let mut d = detector();
        assert!(train(&mut d, &[], &[], &TrainConfig::default(), |_| {}).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut d, &toy_examples(1, 4), &[], &bad, |_| {}).is_err());
    }
}
