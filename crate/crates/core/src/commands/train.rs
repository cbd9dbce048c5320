use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{Checkpoint, DbmCheckpoint, RbmCheckpoint};
use crate::config::{ModelKind, RunConfig};
use crate::dbm::{greedy_pretrain, DbmTrainer};
use crate::error::{Error, Result};
use crate::train::RbmTrainer;

use super::telemetry::{TelemetryRecord, TelemetryWriter};
use super::{load_dataset, override_data_path};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub telemetry: PathBuf,
    /// Mean reconstruction error of each epoch (RBM runs only).
    pub epoch_reconstruction_errors: Vec<f64>,
}

/// Resolves a config file plus command-line overrides.
pub fn resolve_config(options: &TrainOptions) -> Result<RunConfig> {
    let mut config = RunConfig::load(&options.config)?;
    if let Some(seed) = options.seed_override {
        config.seed = seed;
    }
    if let Some(out) = &options.out {
        config.output = out.clone();
    }
    if let (Some(path), Some(section)) = (&options.data, config.data.as_mut()) {
        override_data_path(section, path);
    }
    config.check_paths()?;
    Ok(config)
}

/// Trains the configured model. A checkpoint is written before the first
/// epoch, every `save_every` epochs and at the end; a failure leaves the most
/// recent one in place.
pub fn cmd_train(options: &TrainOptions) -> Result<TrainOutput> {
    let config = resolve_config(options)?;
    let section = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("data.format: training needs a [data] section".into()))?;
    let data = load_dataset(section)?;
    log::info!(
        "loaded {} training items of dimension {}",
        data.len(),
        data.dim()
    );
    std::fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;
    let ckpt_path = config.output.join(CHECKPOINT_FILE);
    let telemetry_path = config.output.join(TELEMETRY_FILE);
    let mut telemetry = TelemetryWriter::create(&telemetry_path)?;
    let shape = data.meta.image_shape;
    let start = Instant::now();
    let mut write_error = None;
    let mut errors = Vec::new();

    match config.model.kind {
        ModelKind::Rbm => {
            let mut trainer = RbmTrainer::new(
                &data,
                config.model.hidden,
                config.model.visible_type,
                config.train.clone(),
                config.seed,
            )?;
            let save = |t: &RbmTrainer, path: &Path| {
                Checkpoint::Rbm(RbmCheckpoint::from_trainer(t, shape)).save(path)
            };
            save(&trainer, &ckpt_path)?;
            while trainer.epoch < config.train.epochs {
                let stats = trainer.train_epoch(&data, |b| {
                    let record = TelemetryRecord {
                        epoch: b.epoch,
                        batch: b.batch,
                        reconstruction_error: Some(b.reconstruction_error),
                        mean_penalty: b.mean_penalty,
                        mean_hidden_activation: b.mean_hidden_activation,
                        wall_time: start.elapsed().as_secs_f64(),
                        converged_fraction: None,
                    };
                    if let Err(e) = telemetry.write(&record) {
                        write_error.get_or_insert(e);
                    }
                })?;
                if let Some(e) = write_error.take() {
                    return Err(e);
                }
                log::info!(
                    "epoch {} reconstruction error {:.5}",
                    stats.epoch,
                    stats.reconstruction_error
                );
                errors.push(stats.reconstruction_error);
                if config.save_every > 0 && trainer.epoch % config.save_every == 0 {
                    save(&trainer, &ckpt_path)?;
                }
            }
            save(&trainer, &ckpt_path)?;
        }
        ModelKind::Dbm => {
            let mut pre = config.train.clone();
            pre.epochs = config.pretrain_epochs;
            let hidden2 = config.model.hidden2.expect("validated with the config");
            let params = greedy_pretrain(&data, (config.model.hidden, hidden2), &pre, config.seed)?;
            let mut trainer = DbmTrainer::new(params, config.dbm.clone(), config.seed)?;
            let save = |t: &DbmTrainer, path: &Path| {
                Checkpoint::Dbm(DbmCheckpoint::from_trainer(t, shape)).save(path)
            };
            save(&trainer, &ckpt_path)?;
            while trainer.epoch < config.dbm.epochs {
                trainer.train_epoch(&data, |b| {
                    let record = TelemetryRecord {
                        epoch: b.epoch,
                        batch: b.batch,
                        reconstruction_error: None,
                        mean_penalty: b.mean_penalty1 + b.mean_penalty2,
                        mean_hidden_activation: b.mean_hidden1_activation,
                        wall_time: start.elapsed().as_secs_f64(),
                        converged_fraction: Some(b.converged_fraction),
                    };
                    if let Err(e) = telemetry.write(&record) {
                        write_error.get_or_insert(e);
                    }
                })?;
                if let Some(e) = write_error.take() {
                    return Err(e);
                }
                if config.save_every > 0 && trainer.epoch % config.save_every == 0 {
                    save(&trainer, &ckpt_path)?;
                }
            }
            save(&trainer, &ckpt_path)?;
        }
    }
    Ok(TrainOutput {
        checkpoint: ckpt_path,
        telemetry: telemetry_path,
        epoch_reconstruction_errors: errors,
    })
}
