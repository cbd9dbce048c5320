//! Implementations behind the `sgrbm` subcommands.

mod eval;
mod render;
mod telemetry;
mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSection, DataSource};
use crate::data::{extract_patches, load_idx, Dataset, GrayImage};
use crate::error::{Error, Result};

pub use eval::{cmd_eval, EvalOptions};
pub use render::{
    cmd_sample, cmd_visualize, filter_mosaic, SampleOptions, SampleOutput, VisualizeOptions,
};
pub use telemetry::{TelemetryRecord, TelemetryWriter};
pub use train::{cmd_train, TrainOptions, TrainOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) | Error::Estimation(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Loads the training set described by a data section.
pub fn load_dataset(section: &DataSection) -> Result<Dataset> {
    let data = match &section.source {
        DataSource::Idx { images, labels } => load_idx(images, labels.as_deref())?,
        DataSource::Patches { image_dir, spec } => {
            let images = read_pgm_dir(image_dir)?;
            extract_patches(
                spec,
                &images,
                &mut ChaCha8Rng::seed_from_u64(section.subset_seed),
            )?
        }
    };
    match section.limit {
        Some(n) if n < data.len() => data.subset(n, section.subset_seed),
        _ => Ok(data),
    }
}

/// All `*.pgm` files in `dir`, in file-name order.
pub fn read_pgm_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .pgm images in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| GrayImage::read(p)).collect()
}

/// Replaces the input path of a data section (`--data`).
pub(crate) fn override_data_path(section: &mut DataSection, path: &Path) {
    match &mut section.source {
        DataSource::Idx { images, .. } => *images = path.to_path_buf(),
        DataSource::Patches { image_dir, .. } => *image_dir = path.to_path_buf(),
    }
}
