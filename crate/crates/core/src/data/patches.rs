use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::Rng;

use super::{Dataset, DatasetMeta, GrayImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Whitening {
    /// ZCA on the sampled patch matrix, then per-dimension standardization.
    Zca,
    /// Pixels are used as-is after scaling to `[0, 1]`.
    AssumePrewhitened,
}

impl Whitening {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zca" => Some(Whitening::Zca),
            "assume-prewhitened" | "assume_prewhitened" => Some(Whitening::AssumePrewhitened),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub count: usize,
    pub whitening: Whitening,
    /// Eigenvalue floor for ZCA, relative to the mean eigenvalue.
    pub zca_epsilon: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            patch_size: 14,
            count: 100_000,
            whitening: Whitening::Zca,
            zca_epsilon: 1e-6,
        }
    }
}

/// Samples square patches at uniform positions from uniformly chosen images.
pub fn extract_patches<R: Rng + ?Sized>(
    spec: &PatchSpec,
    images: &[GrayImage],
    rng: &mut R,
) -> Result<Dataset> {
    if images.is_empty() {
        return Err(Error::Parameter("no source images".into()));
    }
    if spec.patch_size == 0 || spec.count == 0 {
        return Err(Error::Parameter(
            "patch size and count must be positive".into(),
        ));
    }
    let p = spec.patch_size;
    if let Some(img) = images.iter().find(|img| img.width < p || img.height < p) {
        return Err(Error::Parameter(format!(
            "{p}x{p} patch does not fit a {}x{} image",
            img.width, img.height
        )));
    }
    let mut items = Array2::zeros((spec.count, p * p));
    for mut row in items.outer_iter_mut() {
        let img = &images[rng.random_range(0..images.len())];
        let top = rng.random_range(0..=img.height - p);
        let left = rng.random_range(0..=img.width - p);
        for r in 0..p {
            for c in 0..p {
                row[r * p + c] = img.get(top + r, left + c) as f64 / 255.0;
            }
        }
    }
    let mut preprocessing = vec![format!("patches({p}x{p}, count={})", spec.count)];
    if spec.whitening == Whitening::Zca {
        items = zca_whiten(&items, spec.zca_epsilon)?;
        preprocessing.push(format!("zca(epsilon={})", spec.zca_epsilon));
        preprocessing.push("standardize".into());
    }
    Dataset::new(
        items,
        None,
        DatasetMeta {
            source: format!("{} images", images.len()),
            image_shape: Some((p, p)),
            preprocessing,
        },
    )
}

/// Centers, applies `U diag(1/sqrt(λ + ε)) Uᵀ`, then standardizes each column.
pub fn zca_whiten(items: &Array2<f64>, epsilon_rel: f64) -> Result<Array2<f64>> {
    let n = items.nrows();
    let d = items.ncols();
    if n < 2 {
        return Err(Error::Parameter("ZCA needs at least two samples".into()));
    }
    let mean = items.mean_axis(Axis(0)).expect("non-empty");
    let centered = items - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mean_eig = eig.eigenvalues.iter().sum::<f64>() / d as f64;
    let floor = epsilon_rel * mean_eig.max(f64::MIN_POSITIVE);
    let scale: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / (l.max(0.0) + floor).sqrt())
        .collect();
    let u = &eig.eigenvectors;
    let whitener = Array2::from_shape_fn((d, d), |(i, j)| {
        (0..d)
            .map(|k| u[(i, k)] * scale[k] * u[(j, k)])
            .sum::<f64>()
    });
    let mut out = centered.dot(&whitener);
    standardize_columns(&mut out);
    Ok(out)
}

fn standardize_columns(items: &mut Array2<f64>) {
    let n = items.nrows() as f64;
    for mut col in items.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        col -= mean;
        let std = (col.dot(&col) / n).sqrt();
        if std > 0.0 {
            col /= std;
        }
    }
}
