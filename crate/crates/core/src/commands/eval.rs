use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::EvalSection;
use crate::data::{load_idx, Dataset};
use crate::dbm::mean_field_batch;
use crate::error::{Error, Result};
use crate::eval::{
    ais_log_partition, avg_test_log_prob, base_visible_bias_from_data, exact_log_partition,
    hoyer_sparseness, linear_probe, representation_sparseness, EvalReport, ProbeConfig,
    SparsenessReport, ENUMERATION_BUDGET,
};
use crate::rbm::{sample_bernoulli, VisibleType};

use super::{load_dataset, TrainOptions};

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    /// Run config whose `[eval]` and `[data]` sections are used.
    pub config: Option<PathBuf>,
    /// Test images (IDX), overriding `eval.test_images`.
    pub data: Option<PathBuf>,
    /// Report directory; defaults to the checkpoint's directory.
    pub out: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

/// Evaluates a checkpoint and writes `report.txt` and `report.kv`.
pub fn cmd_eval(options: &EvalOptions) -> Result<EvalReport> {
    let checkpoint = Checkpoint::load(&options.checkpoint)?;
    let config = match &options.config {
        Some(path) => Some(super::train::resolve_config(&TrainOptions {
            config: path.clone(),
            seed_override: options.seed_override,
            ..TrainOptions::default()
        })?),
        None => None,
    };
    let eval = match &config {
        Some(c) => c.eval.clone(),
        None => EvalSection {
            exact: match &checkpoint {
                Checkpoint::Rbm(c) => {
                    c.params.visible_type == VisibleType::Binary
                        && c.params.num_visible() + c.params.num_hidden() <= ENUMERATION_BUDGET
                }
                Checkpoint::Dbm(_) => false,
            },
            ..EvalSection::default()
        },
    };
    let seed = options
        .seed_override
        .or(config.as_ref().map(|c| c.seed))
        .unwrap_or(match &checkpoint {
            Checkpoint::Rbm(c) => c.seed,
            Checkpoint::Dbm(c) => c.seed,
        });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let test_images = options.data.clone().or(eval.test_images.clone());
    let test = match &test_images {
        Some(path) => {
            let labels = if options.data.is_some() {
                None
            } else {
                eval.test_labels.as_deref()
            };
            let data = load_idx(path, labels)?;
            Some(match eval.test_limit {
                Some(n) if n < data.len() => data.subset(n, seed)?,
                _ => data,
            })
        }
        None => None,
    };
    let train = match config.as_ref().and_then(|c| c.data.as_ref()) {
        Some(section) if eval.ais || eval.probe => Some(load_dataset(section)?),
        _ => None,
    };

    let mut report = EvalReport {
        num_examples: test.as_ref().map_or(0, Dataset::len),
        ..EvalReport::default()
    };
    match &checkpoint {
        Checkpoint::Rbm(c) => {
            let p = &c.params;
            report.model = format!(
                "rbm {}x{} {}",
                p.num_visible(),
                p.num_hidden(),
                p.visible_type.as_str()
            );
            if eval.exact {
                report.exact_log_z = Some(exact_log_partition(p)?);
            }
            if eval.ais {
                let mut ais = eval.ais_config.clone();
                let base_source = train.as_ref().or(test.as_ref());
                ais.base_visible_bias =
                    base_source.map(|d| base_visible_bias_from_data(d.items.view()));
                report.ais = Some(ais_log_partition(p, &ais, &mut rng)?);
            }
            if let (Some(test), Some(log_z)) = (&test, report.log_z()) {
                let items = if eval.binarize && p.visible_type == VisibleType::Binary {
                    sample_bernoulli(&test.items, &mut rng)
                } else {
                    test.items.clone()
                };
                report.avg_test_log_prob = Some(avg_test_log_prob(p, items.view(), log_z)?);
            }
            if let (true, Some(test)) = (eval.sparseness, &test) {
                report.sparseness = Some(representation_sparseness(
                    p,
                    test.items.view(),
                    Some(&c.grouping),
                )?);
            }
            if eval.probe {
                let features = |d: &Dataset| p.hidden_probabilities_batch(d.items.view());
                report.probe_accuracy =
                    Some(run_probe(train.as_ref(), test.as_ref(), features, seed)?);
            }
        }
        Checkpoint::Dbm(c) => {
            let (v, h1, h2) = c.params.dims();
            report.model = format!("dbm {v}x{h1}x{h2}");
            if eval.exact || eval.ais {
                return Err(Error::Unsupported(
                    "partition functions of DBM checkpoints".into(),
                ));
            }
            let mf = crate::dbm::MeanFieldConfig::default();
            let features = |d: &Dataset| Ok(mean_field_batch(&c.params, d.items.view(), &mf)?.0);
            if let (true, Some(test)) = (eval.sparseness, &test) {
                let mu1 = features(test)?;
                let values = mu1
                    .outer_iter()
                    .map(hoyer_sparseness)
                    .collect::<Result<Vec<_>>>()?;
                report.sparseness = Some(SparsenessReport::from_values(values)?);
            }
            if eval.probe {
                report.probe_accuracy =
                    Some(run_probe(train.as_ref(), test.as_ref(), features, seed)?);
            }
        }
    }

    let out = options.out.clone().unwrap_or_else(|| {
        options
            .checkpoint
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."))
    });
    report.write(&out)?;
    Ok(report)
}

fn run_probe(
    train: Option<&Dataset>,
    test: Option<&Dataset>,
    features: impl Fn(&Dataset) -> Result<Array2<f64>>,
    seed: u64,
) -> Result<f64> {
    let (Some(train), Some(test)) = (train, test) else {
        return Err(Error::Config(
            "eval.probe needs [data] and eval.test_images".into(),
        ));
    };
    let (Some(train_labels), Some(test_labels)) = (&train.labels, &test.labels) else {
        return Err(Error::Config(
            "eval.probe needs data.labels and eval.test_labels".into(),
        ));
    };
    let cfg = ProbeConfig {
        seed,
        ..ProbeConfig::default()
    };
    linear_probe(
        features(train)?.view(),
        train_labels,
        features(test)?.view(),
        test_labels,
        &cfg,
    )
}
