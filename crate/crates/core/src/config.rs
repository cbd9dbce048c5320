//! Run configuration files.
//!
//! The format is line-oriented UTF-8; see `docs/config.md` for the grammar.
//! Every key is addressed as `section.key` (top-level keys have no section),
//! unknown or duplicate keys are rejected, and relative paths are resolved
//! against the directory holding the config file.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{PatchSpec, Whitening};
use crate::dbm::DbmTrainConfig;
use crate::error::{Error, Result};
use crate::eval::{AisConfig, Schedule};
use crate::optim::TrainConfig;
use crate::rbm::VisibleType;
use crate::regularizer::{BaselineTarget, RegularizerKind};

/// Parsed `key = value` pairs, remembering line numbers for messages.
#[derive(Debug)]
pub struct ConfigTable {
    origin: String,
    entries: BTreeMap<String, (String, usize)>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigTable {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::Config(format!("{origin}:{line_no}: {msg}"));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| fail("section header is missing ']'".into()))?
                    .trim();
                if !valid_name(name) {
                    return Err(fail(format!("invalid section name '{name}'")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if !valid_name(key) {
                return Err(fail(format!("invalid key '{key}'")));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if let Some((_, first)) = entries.get(&full) {
                return Err(fail(format!(
                    "duplicate key {full} (first set on line {first})"
                )));
            }
            entries.insert(full, (value.trim().to_string(), line_no));
        }
        Ok(ConfigTable {
            origin: origin.to_string(),
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn error(&self, key: &str, line: Option<usize>, msg: impl std::fmt::Display) -> Error {
        match line {
            Some(l) => Error::Config(format!("{}:{l}: {key}: {msg}", self.origin)),
            None => Error::Config(format!("{}: {key}: {msg}", self.origin)),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                self.error(
                    key,
                    Some(line),
                    format!("cannot parse '{v}' as {}", std::any::type_name::<T>()),
                )
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| self.error(key, None, "required key is missing"))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((v, line)) => Err(self.error(
                key,
                Some(line),
                format!("expected true or false, got '{v}'"),
            )),
        }
    }

    fn get_choice<T>(
        &self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Option<T>,
        allowed: &str,
    ) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => parse(v).ok_or_else(|| {
                self.error(
                    key,
                    Some(line),
                    format!("expected one of {allowed}, got '{v}'"),
                )
            }),
        }
    }

    /// Fails on the first key not listed in `known`.
    pub fn reject_outside(&self, known: &[&str]) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|(k, _)| !known.contains(&k.as_str()))
        {
            Some((k, (_, line))) => Err(self.error(k, Some(*line), "unknown key")),
            None => Ok(()),
        }
    }

    /// Fails on the first key that was never looked up.
    pub fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (_, line))) => Err(self.error(k, Some(*line), "unknown key")),
            None => Ok(()),
        }
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Every key a run config may contain.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "output",
    "save_every",
    "model.type",
    "model.visible_type",
    "model.hidden",
    "model.hidden2",
    "regularizer.kind",
    "regularizer.lambda",
    "regularizer.group_size",
    "regularizer.epsilon",
    "regularizer.baseline_target",
    "regularizer.baseline_units",
    "regularizer.baseline_weight",
    "optimizer.learning_rate",
    "optimizer.initial_momentum",
    "optimizer.final_momentum",
    "optimizer.momentum_switch_epoch",
    "optimizer.weight_decay",
    "optimizer.cd_steps",
    "optimizer.epochs",
    "optimizer.batch_size",
    "optimizer.weight_init_std",
    "dbm.learning_rate",
    "dbm.particles",
    "dbm.lambda2",
    "dbm.group_size2",
    "dbm.mean_field_tolerance",
    "dbm.mean_field_max_iters",
    "dbm.pretrain_epochs",
    "data.format",
    "data.images",
    "data.labels",
    "data.image_dir",
    "data.patch_size",
    "data.patch_count",
    "data.whitening",
    "data.zca_epsilon",
    "data.limit",
    "data.subset_seed",
    "eval.exact",
    "eval.ais",
    "eval.ais_temperatures",
    "eval.ais_chains",
    "eval.ais_schedule",
    "eval.sparseness",
    "eval.probe",
    "eval.test_images",
    "eval.test_labels",
    "eval.test_limit",
    "eval.binarize",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Rbm,
    Dbm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub visible_type: VisibleType,
    pub hidden: usize,
    /// Second hidden layer width (DBM only).
    pub hidden2: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
    },
    /// A directory of P5 PGM images to cut patches from.
    Patches { image_dir: PathBuf, spec: PatchSpec },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    /// Train on a seeded random subset of this many items.
    pub limit: Option<usize>,
    pub subset_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub exact: bool,
    pub ais: bool,
    pub ais_config: AisConfig,
    pub sparseness: bool,
    pub probe: bool,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub test_limit: Option<usize>,
    /// Sample binary test vectors from the pixel intensities before
    /// computing log-probabilities.
    pub binarize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            exact: false,
            ais: false,
            ais_config: AisConfig::report_default(),
            sparseness: true,
            probe: false,
            test_images: None,
            test_labels: None,
            test_limit: None,
            binarize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub save_every: usize,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub dbm: DbmTrainConfig,
    /// Epochs of greedy RBM pretraining per layer before joint DBM training.
    pub pretrain_epochs: usize,
    pub data: Option<DataSection>,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let t = ConfigTable::parse(text, origin)?;
        t.reject_outside(KNOWN_KEYS)?;
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let path =
            |key: &str| -> Result<Option<PathBuf>> { Ok(t.get::<String>(key)?.map(resolve)) };

        let seed = t.require("seed")?;
        let output = path("output")?.unwrap_or_else(|| base.join("runs"));
        let save_every = t.get_or("save_every", 0)?;

        let kind = t.get_choice(
            "model.type",
            ModelKind::Rbm,
            |s| match s {
                "rbm" => Some(ModelKind::Rbm),
                "dbm" => Some(ModelKind::Dbm),
                _ => None,
            },
            "rbm, dbm",
        )?;
        let visible_type = t.get_choice(
            "model.visible_type",
            VisibleType::Binary,
            VisibleType::parse,
            "binary, gaussian",
        )?;
        let model = ModelSection {
            kind,
            visible_type,
            hidden: t.require("model.hidden")?,
            hidden2: t.get("model.hidden2")?,
        };
        if model.hidden == 0 {
            return Err(t.error("model.hidden", None, "must be at least 1"));
        }
        if kind == ModelKind::Dbm {
            if model.hidden2.unwrap_or(0) == 0 {
                return Err(t.error(
                    "model.hidden2",
                    None,
                    "a DBM needs a positive second layer width",
                ));
            }
            if visible_type != VisibleType::Binary {
                return Err(t.error(
                    "model.visible_type",
                    None,
                    "DBMs support binary visibles only",
                ));
            }
        }

        let mut train = match visible_type {
            VisibleType::Binary => TrainConfig::binary_default(),
            VisibleType::Gaussian => TrainConfig::gaussian_default(),
        };
        let reg = &mut train.regularizer;
        reg.kind = t.get_choice(
            "regularizer.kind",
            RegularizerKind::SparseGroup,
            RegularizerKind::parse,
            "none, sparse_group, sparse_rbm_baseline",
        )?;
        reg.lambda = t.get_or("regularizer.lambda", reg.lambda)?;
        reg.group_size = t.get_or("regularizer.group_size", reg.group_size)?;
        reg.epsilon = t.get_or("regularizer.epsilon", reg.epsilon)?;
        match (
            t.get::<f64>("regularizer.baseline_target")?,
            t.get::<f64>("regularizer.baseline_units")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(t.error(
                    "regularizer.baseline_target",
                    None,
                    "set either baseline_target or baseline_units, not both",
                ))
            }
            (Some(p), None) => reg.baseline_target = BaselineTarget::Probability(p),
            (None, Some(n)) => reg.baseline_target = BaselineTarget::UnitCount(n),
            (None, None) => {}
        }
        reg.baseline_weight = t.get_or("regularizer.baseline_weight", reg.baseline_weight)?;

        train.learning_rate = t.get_or("optimizer.learning_rate", train.learning_rate)?;
        train.initial_momentum = t.get_or("optimizer.initial_momentum", train.initial_momentum)?;
        train.final_momentum = t.get_or("optimizer.final_momentum", train.final_momentum)?;
        train.momentum_switch_epoch = t.get_or(
            "optimizer.momentum_switch_epoch",
            train.momentum_switch_epoch,
        )?;
        train.weight_decay = t.get_or("optimizer.weight_decay", train.weight_decay)?;
        train.cd_steps = t.get_or("optimizer.cd_steps", train.cd_steps)?;
        train.epochs = t.get_or("optimizer.epochs", train.epochs)?;
        train.batch_size = t.get_or("optimizer.batch_size", train.batch_size)?;
        train.weight_init_std = t.get_or("optimizer.weight_init_std", train.weight_init_std)?;
        train.validate()?;

        let mut dbm = DbmTrainConfig {
            epochs: train.epochs,
            batch_size: train.batch_size,
            weight_decay: train.weight_decay,
            initial_momentum: train.initial_momentum,
            final_momentum: train.final_momentum,
            momentum_switch_epoch: train.momentum_switch_epoch,
            lambda1: train.regularizer.lambda,
            group_size1: train.regularizer.group_size,
            epsilon: train.regularizer.epsilon,
            ..DbmTrainConfig::default()
        };
        let pretrain_epochs = if kind == ModelKind::Dbm {
            dbm.learning_rate = t.get_or("dbm.learning_rate", dbm.learning_rate)?;
            dbm.num_particles = t.get_or("dbm.particles", dbm.num_particles)?;
            dbm.lambda2 = t.get_or("dbm.lambda2", dbm.lambda1)?;
            dbm.group_size2 = t.get_or("dbm.group_size2", dbm.group_size1)?;
            dbm.mean_field.tolerance =
                t.get_or("dbm.mean_field_tolerance", dbm.mean_field.tolerance)?;
            dbm.mean_field.max_iters =
                t.get_or("dbm.mean_field_max_iters", dbm.mean_field.max_iters)?;
            if train.regularizer.kind != RegularizerKind::SparseGroup {
                dbm.lambda1 = 0.0;
                dbm.lambda2 = 0.0;
            }
            dbm.validate()?;
            t.get_or("dbm.pretrain_epochs", train.epochs)?
        } else {
            0
        };

        let data = match (t.get::<String>("data.format")?, t.raw("data.format")) {
            (None, _) => None,
            (Some(format), line) => {
                let line = line.map(|(_, l)| l);
                let source = match format.as_str() {
                    "idx" => DataSource::Idx {
                        images: path("data.images")?
                            .ok_or_else(|| t.error("data.images", None, "required for idx data"))?,
                        labels: path("data.labels")?,
                    },
                    "patches" => {
                        let defaults = PatchSpec::default();
                        DataSource::Patches {
                            image_dir: path("data.image_dir")?.ok_or_else(|| {
                                t.error("data.image_dir", None, "required for patch data")
                            })?,
                            spec: PatchSpec {
                                patch_size: t.get_or("data.patch_size", defaults.patch_size)?,
                                count: t.get_or("data.patch_count", defaults.count)?,
                                whitening: t.get_choice(
                                    "data.whitening",
                                    defaults.whitening,
                                    Whitening::parse,
                                    "zca, assume-prewhitened",
                                )?,
                                zca_epsilon: t.get_or("data.zca_epsilon", defaults.zca_epsilon)?,
                            },
                        }
                    }
                    other => {
                        return Err(t.error(
                            "data.format",
                            line,
                            format!("expected idx or patches, got '{other}'"),
                        ))
                    }
                };
                Some(DataSection {
                    source,
                    limit: t.get("data.limit")?,
                    subset_seed: t.get_or("data.subset_seed", seed)?,
                })
            }
        };

        let defaults = EvalSection::default();
        let eval = EvalSection {
            exact: t.get_bool("eval.exact", defaults.exact)?,
            ais: t.get_bool("eval.ais", defaults.ais)?,
            ais_config: AisConfig {
                num_temperatures: t.get_or(
                    "eval.ais_temperatures",
                    defaults.ais_config.num_temperatures,
                )?,
                num_chains: t.get_or("eval.ais_chains", defaults.ais_config.num_chains)?,
                schedule: t.get_choice(
                    "eval.ais_schedule",
                    Schedule::Linear,
                    Schedule::parse,
                    "linear, geometric-tail",
                )?,
                base_visible_bias: None,
            },
            sparseness: t.get_bool("eval.sparseness", defaults.sparseness)?,
            probe: t.get_bool("eval.probe", defaults.probe)?,
            test_images: path("eval.test_images")?,
            test_labels: path("eval.test_labels")?,
            test_limit: t.get("eval.test_limit")?,
            binarize: t.get_bool("eval.binarize", defaults.binarize)?,
        };
        if eval.ais_config.num_chains < 2 || eval.ais_config.num_temperatures < 2 {
            return Err(t.error(
                "eval.ais_chains",
                None,
                "AIS needs at least two chains and two temperatures",
            ));
        }

        t.reject_unknown()?;
        Ok(RunConfig {
            seed,
            output,
            save_every,
            model,
            train,
            dbm,
            pretrain_epochs,
            data,
            eval,
        })
    }

    /// Checks that every referenced input exists.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<(&str, &Path)> = Vec::new();
        if let Some(d) = &self.data {
            match &d.source {
                DataSource::Idx { images, labels } => {
                    paths.push(("data.images", images));
                    if let Some(l) = labels {
                        paths.push(("data.labels", l));
                    }
                }
                DataSource::Patches { image_dir, .. } => paths.push(("data.image_dir", image_dir)),
            }
        }
        if let Some(p) = &self.eval.test_images {
            paths.push(("eval.test_images", p));
        }
        if let Some(p) = &self.eval.test_labels {
            paths.push(("eval.test_labels", p));
        }
        match paths.into_iter().find(|(_, p)| !p.exists()) {
            Some((key, p)) => Err(Error::Config(format!(
                "{key}: {} does not exist",
                p.display()
            ))),
            None => Ok(()),
        }
    }
}
