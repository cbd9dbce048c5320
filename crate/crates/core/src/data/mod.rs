//! Dataset containers and loaders.

mod batches;
pub mod idx;
mod patches;
pub mod pgm;

pub use batches::{minibatches, MiniBatches};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use patches::{extract_patches, zca_whiten, PatchSpec, Whitening};
pub use pgm::GrayImage;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub source: String,
    /// Image geometry when each row is a flattened `rows × cols` image.
    pub image_shape: Option<(usize, usize)>,
    pub preprocessing: Vec<String>,
}

/// Immutable `(N, V)` matrix of examples with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Array2<f64>,
    pub labels: Option<Vec<u8>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(items: Array2<f64>, labels: Option<Vec<u8>>, meta: DatasetMeta) -> Result<Self> {
        if let Some(labels) = &labels {
            check_len("label count", items.nrows(), labels.len())?;
        }
        Ok(Dataset {
            items,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.items.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.items.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.items.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: self.items.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            meta: self.meta.clone(),
        }
    }

    /// The first `count` rows of a seeded permutation.
    pub fn subset(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count > self.len() {
            return Err(Error::Parameter(format!(
                "subset of {count} requested from {} items",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(count);
        let mut out = self.select(&order);
        out.meta
            .preprocessing
            .push(format!("subset(count={count}, seed={seed})"));
        Ok(out)
    }

    /// The leading `count` rows without shuffling.
    pub fn head(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        self.select(&(0..count).collect::<Vec<_>>())
    }

    pub fn column_means(&self) -> ndarray::Array1<f64> {
        self.items
            .mean_axis(Axis(0))
            .unwrap_or_else(|| ndarray::Array1::zeros(self.dim()))
    }
}
