//! Minibatch Adam ascent on the ELBO with linear KL annealing.

use super::{ClvmError, ClvmModel, ElboEstimate, Likelihood};
use crate::data::DatasetSplit;
use crate::nn::{adam_step, AdamCfg, AdamState};
use crate::scalar::Scalar;
use crate::{mix_seed, standard_normal_array};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hyperparameters for one training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig<S: Scalar> {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamCfg<S>,
    /// Monte-Carlo samples per datum, for both the training objective and
    /// the per-epoch history ELBO.
    pub mc_samples: usize,
    /// β ramps as `min(1, completed steps / annealing_steps)`. 0 means
    /// "one epoch's worth of steps", which keeps the ramp tied to the first
    /// epoch whatever the batch size.
    pub annealing_steps: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            adam: AdamCfg::default(),
            mc_samples: 1,
            annealing_steps: 0,
            seed: 0,
        }
    }
}

/// A numerical failure during training, carrying the most recent healthy
/// model snapshot (taken at epoch boundaries) and where the failure hit.
/// The batch index equals the epoch's step count when the per-epoch
/// history evaluation failed rather than an optimizer step.
#[derive(Debug, thiserror::Error)]
#[error("training failed at epoch {epoch}, batch {batch}: {source}")]
pub struct TrainError<S: Scalar> {
    pub epoch: usize,
    pub batch: usize,
    pub last_good: ClvmModel<S>,
    pub source: ClvmError,
}

/// Train `model` on `data`. Returns the trained model and the full-data
/// ELBO (at β = 1) after each epoch. Deterministic for a fixed
/// `cfg.seed`: minibatch order, reparameterization noise, and the history
/// evaluation draws are all derived from it through separate streams.
pub fn train<S: Scalar>(
    mut model: ClvmModel<S>,
    data: &DatasetSplit<S>,
    cfg: &TrainConfig<S>,
) -> Result<(ClvmModel<S>, Vec<ElboEstimate<S>>), Box<TrainError<S>>> {
    assert!(!data.is_empty(), "empty dataset");
    assert_eq!(data.nx(), model.nx, "condition width");
    assert_eq!(data.ny(), model.ny, "target width");
    assert!(cfg.batch_size >= 1 && cfg.mc_samples >= 1);
    if model.likelihood == Likelihood::Bernoulli {
        assert!(
            data.targets.iter().all(|&v| v == S::zero() || v == S::one()),
            "Bernoulli likelihood needs binary targets"
        );
    }

    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let annealing = if cfg.annealing_steps == 0 { steps_per_epoch } else { cfg.annealing_steps };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xA11));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xB22));
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_good = model.clone();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.conditions.select(Axis(0), chunk);
            let y = data.targets.select(Axis(0), chunk);
            let noise: Vec<Array2<S>> = (0..cfg.mc_samples)
                .map(|_| standard_normal_array(&mut noise_rng, (chunk.len(), model.nz)))
                .collect();
            let beta = S::c((step as f64 / annealing as f64).min(1.0));
            let (_, grads) = model.elbo_grad(&x, &y, &noise, beta).map_err(|source| {
                Box::new(TrainError { epoch, batch: batch_idx, last_good: last_good.clone(), source })
            })?;
            adam_step(&mut adam, &mut model.params, &grads, &cfg.adam);
            step += 1;
        }
        let est = model
            .dataset_elbo(data, cfg.mc_samples, mix_seed(cfg.seed, 0xE7A1 + epoch as u64), 256)
            .map_err(|source| {
                Box::new(TrainError {
                    epoch,
                    batch: steps_per_epoch,
                    last_good: last_good.clone(),
                    source,
                })
            })?;
        history.push(est);
        last_good = model.clone();
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_cfg;
    use super::*;
    use crate::clvm::{Likelihood, PriorKind};
    use crate::data::{gen_toy_structured, ToySpec};

    fn toy_data() -> DatasetSplit<f64> {
        let mut spec = ToySpec::default();
        spec.samples_per_interval = 16;
        gen_toy_structured(&spec, 7)
    }

    fn quick_cfg() -> TrainConfig<f64> {
        TrainConfig { epochs: 3, batch_size: 16, mc_samples: 1, seed: 11, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let data = toy_data();
        let model =
            ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 3, None);
        let before = model.params.clone();
        let cfg = TrainConfig { epochs: 0, ..quick_cfg() };
        let (trained, history) = train(model, &data, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(trained.params, before);
    }

    #[test]
    fn same_seed_gives_bit_identical_histories() {
        let data = toy_data();
        let cfg = quick_cfg();
        let run = || {
            let model =
                ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cdv, Likelihood::Gaussian), 5, None);
            train(model, &data, &cfg).unwrap().1
        };
        let (h1, h2) = (run(), run());
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.total, b.total);
            assert_eq!(a.reconstruction, b.reconstruction);
        }
    }

    #[test]
    fn training_improves_the_objective_on_a_tiny_problem() {
        let data = toy_data();
        let model =
            ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 1, None);
        let initial = model
            .dataset_elbo(&data, 1, 99, 256)
            .unwrap()
            .total;
        let cfg = TrainConfig { epochs: 40, ..quick_cfg() };
        let (_, history) = train(model, &data, &cfg).unwrap();
        let last = history.last().unwrap().total;
        assert!(last > initial, "no improvement: {initial} -> {last}");
    }

    #[test]
    fn numerical_failure_carries_location_and_snapshot() {
        let data = toy_data();
        let model =
            ClvmModel::<f64>::init(&tiny_cfg(PriorKind::Cmog, Likelihood::Gaussian), 1, None);
        let cfg = TrainConfig {
            epochs: 2,
            adam: AdamCfg { lr: f64::MAX, ..AdamCfg::default() },
            ..quick_cfg()
        };
        let err = train(model, &data, &cfg).unwrap_err();
        assert!(err.epoch == 0 || err.epoch == 1, "epoch {}", err.epoch);
        // The snapshot must itself be usable.
        err.last_good.dataset_elbo(&data, 1, 0, 64).unwrap();
        assert!(err.to_string().contains("non-finite"));
    }
}
