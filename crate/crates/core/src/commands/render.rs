use std::path::PathBuf;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::rbm::{sample_bernoulli, VisibleType};
use crate::regularizer::Grouping;

#[derive(Clone, Debug, Default)]
pub struct VisualizeOptions {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    /// Overrides the image shape stored in the checkpoint.
    pub shape: Option<(usize, usize)>,
}

/// Grayscale bytes of one filter, min-max scaled to `[0, 255]`; a constant
/// filter becomes mid-gray.
pub fn normalize_tile(values: ArrayView1<f64>) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (255.0 * (v - min) / (max - min)).round() as u8)
        .collect()
}

fn resolve_shape(dim: usize, declared: Option<(usize, usize)>) -> Result<(usize, usize)> {
    match declared {
        Some((r, c)) if r * c == dim => Ok((r, c)),
        Some((r, c)) => Err(Error::Parameter(format!(
            "image shape {r}x{c} does not match visible dimension {dim}"
        ))),
        None => {
            let side = (dim as f64).sqrt().round() as usize;
            if side * side == dim {
                Ok((side, side))
            } else {
                Err(Error::Parameter(format!(
                    "visible dimension {dim} is not square; declare an image shape"
                )))
            }
        }
    }
}

/// Lays out one tile per weight column. Each row of the grid holds
/// `ceil(sqrt(H) / g)` whole groups with the members of a group side by
/// side; tiles are separated by 1-pixel black lines.
pub fn filter_mosaic(
    weights: ArrayView2<f64>,
    grouping: &Grouping,
    shape: (usize, usize),
) -> Result<GrayImage> {
    let (rows, cols) = resolve_shape(weights.nrows(), Some(shape))?;
    let h = weights.ncols();
    if grouping.num_hidden() != h {
        return Err(Error::Dimension {
            context: "visualization grouping",
            expected: h,
            found: grouping.num_hidden(),
        });
    }
    let g = grouping.max_group_size();
    let groups_per_row = (((h as f64).sqrt() / g as f64).ceil() as usize).max(1);
    let tiles_across = groups_per_row * g;
    let tiles_down = grouping.num_groups().div_ceil(groups_per_row);
    let width = tiles_across * cols + tiles_across - 1;
    let height = tiles_down * rows + tiles_down - 1;
    let mut image = GrayImage::filled(width, height, 0);
    for (k, members) in grouping.groups().iter().enumerate() {
        let grid_row = k / groups_per_row;
        for (m, &unit) in members.iter().enumerate() {
            let grid_col = (k % groups_per_row) * g + m;
            let tile = normalize_tile(weights.column(unit));
            let top = grid_row * (rows + 1);
            let left = grid_col * (cols + 1);
            for r in 0..rows {
                for c in 0..cols {
                    image.set(top + r, left + c, tile[r * cols + c]);
                }
            }
        }
    }
    Ok(image)
}

/// Writes the first-layer filters of a checkpoint as a PGM mosaic.
pub fn cmd_visualize(options: &VisualizeOptions) -> Result<GrayImage> {
    let checkpoint = Checkpoint::load(&options.checkpoint)?;
    let declared = options.shape.or(checkpoint.image_shape());
    let (weights, grouping) = match &checkpoint {
        Checkpoint::Rbm(c) => (c.params.weights.view(), &c.grouping),
        Checkpoint::Dbm(c) => (c.params.w1.view(), &c.grouping1),
    };
    let shape = resolve_shape(weights.nrows(), declared)?;
    let image = filter_mosaic(weights, grouping, shape)?;
    image.write(&options.out)?;
    Ok(image)
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub chains: usize,
    pub steps: usize,
    pub thinning: usize,
    pub seed: u64,
    pub shape: Option<(usize, usize)>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            checkpoint: PathBuf::new(),
            out: PathBuf::from("samples.pgm"),
            chains: 10,
            steps: 1000,
            thinning: 100,
            seed: 0,
            shape: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// `(step, visible values)` for each snapshot, chains as rows.
    pub snapshots: Vec<(usize, Array2<f64>)>,
    pub image: GrayImage,
}

/// Runs Gibbs chains from uniform random binary states. Snapshots are taken
/// at step 0 (the initial states) and every `thinning` steps after it, and
/// laid out with one grid row per snapshot and one column per chain.
pub fn cmd_sample(options: &SampleOptions) -> Result<SampleOutput> {
    let checkpoint = Checkpoint::load(&options.checkpoint)?;
    let Checkpoint::Rbm(ckpt) = &checkpoint else {
        return Err(Error::Unsupported("sampling from DBM checkpoints".into()));
    };
    let params = &ckpt.params;
    if params.visible_type != VisibleType::Binary {
        return Err(Error::Unsupported(
            "sampling requires binary visible units".into(),
        ));
    }
    if options.chains == 0 || options.thinning == 0 {
        return Err(Error::Parameter(
            "chains and thinning must be positive".into(),
        ));
    }
    let (rows, cols) = resolve_shape(params.num_visible(), options.shape.or(ckpt.image_shape))?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut state = sample_bernoulli(
        &Array2::from_elem((options.chains, params.num_visible()), 0.5),
        &mut rng,
    );
    let mut snapshots = vec![(0, state.clone())];
    for step in 1..=options.steps {
        let hidden = sample_bernoulli(&params.hidden_probabilities_batch(state.view())?, &mut rng);
        let means = params.visible_means_batch(hidden.view())?;
        state = sample_bernoulli(&means, &mut rng);
        if step % options.thinning == 0 {
            snapshots.push((step, means));
        }
    }

    let across = options.chains;
    let down = snapshots.len();
    let mut image = GrayImage::filled(across * cols + across - 1, down * rows + down - 1, 0);
    for (s, (_, values)) in snapshots.iter().enumerate() {
        for (chain, row) in values.outer_iter().enumerate() {
            for r in 0..rows {
                for c in 0..cols {
                    let v = (row[r * cols + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                    image.set(s * (rows + 1) + r, chain * (cols + 1) + c, v);
                }
            }
        }
    }
    image.write(&options.out)?;
    Ok(SampleOutput { snapshots, image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tile_normalization() {
        assert_eq!(
            normalize_tile(array![0.0, 1.0, 2.0, 3.0].view()),
            vec![0, 85, 170, 255]
        );
        assert_eq!(normalize_tile(array![0.4, 0.4].view()), vec![128, 128]);
    }

    #[test]
    fn single_filter_is_the_whole_image() {
        let w = array![[0.0], [1.0], [2.0], [3.0]];
        let img = filter_mosaic(w.view(), &Grouping::uniform(1, 1).unwrap(), (2, 2)).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![0, 85, 170, 255]);
    }

    #[test]
    fn grid_keeps_groups_on_one_row() {
        // 8 units in groups of 2: ceil(sqrt(8)/2) = 2 groups per row
        let w = Array2::from_shape_fn((1, 8), |(_, j)| j as f64);
        let w = ndarray::concatenate![ndarray::Axis(0), w, w.mapv(|x| x + 1.0)];
        let img = filter_mosaic(w.view(), &Grouping::uniform(8, 2).unwrap(), (1, 2)).unwrap();
        assert_eq!(img.width, 4 * 2 + 3);
        assert_eq!(img.height, 2 + 1);
        assert_eq!(img.get(1, 0), 0);
    }

    #[test]
    fn shape_must_match() {
        assert!(resolve_shape(6, None).is_err());
        assert_eq!(resolve_shape(6, Some((2, 3))).unwrap(), (2, 3));
        assert!(resolve_shape(6, Some((2, 2))).is_err());
    }
}
