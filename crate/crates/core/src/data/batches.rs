use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// One epoch over a dataset in a seeded random order. The final batch may be
/// smaller than `batch_size`.
pub struct MiniBatches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl MiniBatches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for MiniBatches<'_> {
    type Item = Array2<f64>;

    fn next(&mut self) -> Option<Array2<f64>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self
            .dataset
            .items
            .select(Axis(0), &self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}

pub fn minibatches(
    dataset: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<MiniBatches<'_>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(MiniBatches {
        dataset,
        order,
        batch_size,
        cursor: 0,
    })
}
