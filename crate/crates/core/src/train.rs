//! Mini-batch training loop for single RBMs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{minibatches, Dataset};
use crate::error::{check_len, Result};
use crate::math::clamped_logit;
use crate::optim::{apply_update, MomentumState, TrainConfig};
use crate::rbm::{RbmParams, VisibleType};
use crate::regularizer::{regularized_cd_step, Grouping};

/// Per-batch diagnostics handed to the training callback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub epoch: usize,
    pub batch: usize,
    pub reconstruction_error: f64,
    pub mean_penalty: f64,
    pub mean_hidden_activation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub reconstruction_error: f64,
    pub mean_penalty: f64,
    pub mean_hidden_activation: f64,
}

/// Shuffling seed for one epoch, independent of the sampling stream.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer over (seed, epoch)
    let mut z = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to resume RBM training bit-exactly.
#[derive(Clone, Debug)]
pub struct RbmTrainer {
    pub params: RbmParams,
    pub optimizer: MomentumState,
    pub grouping: Grouping,
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub rng: ChaCha8Rng,
}

impl RbmTrainer {
    /// Random `N(0, σ²)` weights, zero hidden biases, and (binary visibles)
    /// visible biases at the clamped logit of the per-pixel training mean.
    pub fn new(
        data: &Dataset,
        num_hidden: usize,
        visible_type: VisibleType,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = RbmParams::random(
            data.dim(),
            num_hidden,
            visible_type,
            config.weight_init_std,
            &mut rng,
        )?;
        if visible_type == VisibleType::Binary && !data.is_empty() {
            params.visible_bias = data.column_means().mapv(|p| clamped_logit(p, 4.0));
        }
        let grouping = Grouping::uniform(num_hidden, config.regularizer.group_size)?;
        Ok(RbmTrainer {
            optimizer: MomentumState::zeros_like(&params),
            params,
            grouping,
            config,
            epoch: 0,
            seed,
            rng,
        })
    }

    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        mut on_batch: impl FnMut(&BatchStats),
    ) -> Result<EpochStats> {
        check_len("dataset dimension", self.params.num_visible(), data.dim())?;
        let rule = self.config.update_rule(self.epoch);
        let batches = minibatches(
            data,
            self.config.batch_size,
            epoch_seed(self.seed, self.epoch),
        )?;
        let mut totals = (0.0, 0.0, 0.0);
        let mut count = 0usize;
        for (index, batch) in batches.enumerate() {
            let step = regularized_cd_step(
                &self.params,
                batch.view(),
                self.config.cd_steps,
                Some(&self.grouping),
                &self.config.regularizer,
                &mut self.rng,
            )?;
            self.params = apply_update(&self.params, &step.gradient, &mut self.optimizer, &rule)?;
            let stats = BatchStats {
                epoch: self.epoch,
                batch: index,
                reconstruction_error: step.reconstruction_error,
                mean_penalty: step.mean_penalty,
                mean_hidden_activation: step.mean_hidden_activation,
            };
            on_batch(&stats);
            totals.0 += stats.reconstruction_error;
            totals.1 += stats.mean_penalty;
            totals.2 += stats.mean_hidden_activation;
            count += 1;
        }
        let n = count.max(1) as f64;
        let stats = EpochStats {
            epoch: self.epoch,
            reconstruction_error: totals.0 / n,
            mean_penalty: totals.1 / n,
            mean_hidden_activation: totals.2 / n,
        };
        self.epoch += 1;
        log::debug!(
            "epoch {} recon {:.4} penalty {:.4} activation {:.4}",
            stats.epoch,
            stats.reconstruction_error,
            stats.mean_penalty,
            stats.mean_hidden_activation
        );
        Ok(stats)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn train(&mut self, data: &Dataset) -> Result<Vec<EpochStats>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            history.push(self.train_epoch(data, |_| {})?);
        }
        Ok(history)
    }
}

/// Trains an RBM from scratch with `config.epochs` epochs.
pub fn train_rbm(
    data: &Dataset,
    num_hidden: usize,
    visible_type: VisibleType,
    config: TrainConfig,
    seed: u64,
) -> Result<RbmParams> {
    let mut trainer = RbmTrainer::new(data, num_hidden, visible_type, config, seed)?;
    trainer.train(data)?;
    Ok(trainer.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;
    use crate::regularizer::RegularizerConfig;
    use ndarray::Array2;

    fn toy_data() -> Dataset {
        let items =
            Array2::from_shape_fn((40, 6), |(i, j)| if (i + j) % 3 == 0 { 1.0 } else { 0.0 });
        Dataset::new(
            items,
            None,
            DatasetMeta {
                source: "toy".into(),
                image_shape: Some((2, 3)),
                preprocessing: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn epoch_seeds_differ() {
        assert_ne!(epoch_seed(1, 0), epoch_seed(1, 1));
        assert_ne!(epoch_seed(1, 0), epoch_seed(2, 0));
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let data = toy_data();
        let mut config = TrainConfig::binary_default();
        config.epochs = 3;
        config.batch_size = 7;
        config.regularizer = RegularizerConfig::sparse_group(0.1, 2);
        let a = train_rbm(&data, 4, VisibleType::Binary, config.clone(), 17).unwrap();
        let b = train_rbm(&data, 4, VisibleType::Binary, config, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lambda_matches_unregularized_training() {
        let data = toy_data();
        let mut plain = TrainConfig::binary_default();
        plain.epochs = 2;
        plain.batch_size = 10;
        plain.regularizer.group_size = 2;
        let mut zero = plain.clone();
        zero.regularizer = RegularizerConfig::sparse_group(0.0, 2);
        let a = train_rbm(&data, 4, VisibleType::Binary, plain, 5).unwrap();
        let b = train_rbm(&data, 4, VisibleType::Binary, zero, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn visible_bias_initialized_from_means() {
        let data = toy_data();
        let trainer = RbmTrainer::new(
            &data,
            3,
            VisibleType::Binary,
            TrainConfig::binary_default(),
            0,
        )
        .unwrap();
        let means = data.column_means();
        for (b, p) in trainer.params.visible_bias.iter().zip(means.iter()) {
            assert!((b - clamped_logit(*p, 4.0)).abs() < 1e-12);
            assert!(b.abs() <= 4.0);
        }
        assert!(trainer.params.hidden_bias.iter().all(|&c| c == 0.0));
    }
}
