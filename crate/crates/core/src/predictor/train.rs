//! Mini-batch training of the predictor on the negative ELBO.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::types::SceneInput;

use super::{elbo_loss, param_gradient, PredictorParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    /// Fixed-step gradient descent, with optional heavy-ball momentum.
    Sgd { learning_rate: f64, momentum: f64 },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd {
            learning_rate: 0.01,
            momentum: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Rescale each batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            optimizer: Optimizer::default(),
            clip_norm: Some(10.0),
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    /// Recipe of the reference model the analyses run against.
    pub fn reference() -> Self {
        Self {
            epochs: 400,
            batch_size: 16,
            optimizer: Optimizer::Adam {
                learning_rate: 0.003,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            clip_norm: Some(10.0),
            lr_decay: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let lr = match self.optimizer {
            Optimizer::Sgd {
                learning_rate,
                momentum,
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config("momentum must be in [0, 1)".into()));
                }
                learning_rate
            }
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                    return Err(Error::Config("invalid Adam constants".into()));
                }
                learning_rate
            }
        };
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config("learning_rate must be nonnegative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PredictorParams,
    /// Mean total loss over the dataset before training and after each
    /// epoch, evaluated with the same per-scene latent noise every time.
    pub loss_curve: Vec<f64>,
}

fn mean_loss(dataset: &[SceneInput], params: &PredictorParams, seed: u64, epoch: usize) -> Result<f64> {
    let losses = dataset
        .par_iter()
        .enumerate()
        .map(|(i, s)| elbo_loss(s, params, derive_seed(seed, "eval", i as u64)).map(|l| l.total))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::NonFinite(_) | Error::Overflow { .. } | Error::Domain { .. } => Error::Diverged { epoch },
            other => other,
        })?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(Error::Diverged { epoch })
    }
}

/// Trains from `params0`. Per-scene gradients within a batch run in
/// parallel and are summed in scene order, so results do not depend on the
/// thread count.
pub fn train(dataset: &[SceneInput], params0: &PredictorParams, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    cfg.validate()?;
    for (i, s) in dataset.iter().enumerate() {
        params0
            .check_scene(s, true)
            .map_err(|e| e.context(format!("scene {i}")))?;
    }
    let mut params = params0.clone();
    let n = params.len();
    let mut first = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut step: i32 = 0;
    let mut curve = vec![mean_loss(dataset, &params, seed, 0)?];
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut lr_scale = 1.0;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            "shuffle",
            epoch as u64,
        )));
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let noise_seed = derive_seed(seed, "train", (epoch * dataset.len() + i) as u64);
                    param_gradient(&dataset[i], &params, noise_seed)
                })
                .collect::<Vec<_>>();
            let mut grad = vec![0.0; n];
            for r in results {
                let (loss, g) = r.map_err(|_| Error::Diverged { epoch })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if let Some(limit) = cfg.clip_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    let s = limit / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            step += 1;
            let w = &mut params.values;
            match cfg.optimizer {
                Optimizer::Sgd {
                    learning_rate,
                    momentum,
                } => {
                    for i in 0..n {
                        first[i] = momentum * first[i] + grad[i];
                        w[i] -= lr_scale * learning_rate * first[i];
                    }
                }
                Optimizer::Adam {
                    learning_rate,
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for i in 0..n {
                        first[i] = beta1 * first[i] + (1.0 - beta1) * grad[i];
                        second[i] = beta2 * second[i] + (1.0 - beta2) * grad[i] * grad[i];
                        w[i] -= lr_scale * learning_rate * (first[i] / c1) / ((second[i] / c2).sqrt() + epsilon);
                    }
                }
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
        }
        lr_scale *= cfg.lr_decay;
        curve.push(mean_loss(dataset, &params, seed, epoch)?);
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictorConfig;
    use crate::scenario::{generate_dataset, ScenarioConfig};

    fn setup() -> (Vec<SceneInput>, PredictorParams) {
        (
            generate_dataset(1, 12, &ScenarioConfig::default()).unwrap(),
            PredictorParams::init(PredictorConfig::default(), 2).unwrap(),
        )
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (d, p) = setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            optimizer: Optimizer::Sgd {
                learning_rate: 0.0,
                momentum: 0.0,
            },
            clip_norm: None,
            lr_decay: 1.0,
        };
        let out = train(&d, &p, &cfg, 0).unwrap();
        assert_eq!(out.params, p);
        assert!(out.loss_curve.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_same_result() {
        let (d, p) = setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            ..Default::default()
        };
        let a = train(&d, &p, &cfg, 4).unwrap();
        let b = train(&d, &p, &cfg, 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (_, p) = setup();
        assert!(matches!(
            train(&[], &p, &TrainConfig::default(), 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn huge_step_reports_divergence() {
        let (d, p) = setup();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            optimizer: Optimizer::Sgd {
                learning_rate: 1e300,
                momentum: 0.0,
            },
            clip_norm: None,
            lr_decay: 1.0,
        };
        assert!(matches!(train(&d, &p, &cfg, 0), Err(Error::Diverged { .. })));
    }
}
