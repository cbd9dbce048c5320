//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the lines always reach the terminal. Pass
//! criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 4 11`.
//!
//! Criteria listed in `EXPECTED_FAILURES` still print FAIL with their
//! numbers but do not fail the process; the README explains each one.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgrbm::commands::{cmd_eval, cmd_train, EvalOptions, TrainOptions};
use sgrbm::dbm::{mean_field, MeanFieldConfig};
use sgrbm::eval::{
    ais_log_partition, exact_log_partition, exact_model_statistics, hoyer_sparseness, linear_probe,
    third_order_responsibility, AisConfig, EvalReport, ProbeConfig,
};
use sgrbm::optim::{apply_update, MomentumState, TrainConfig, UpdateRule};
use sgrbm::rbm::{data_statistics, GradientEstimate, RbmParams, VisibleType};
use sgrbm::regularizer::{
    group_norms, penalty_gradient, penalty_gradient_batch, Grouping, RegularizerConfig,
};
use sgrbm::train::RbmTrainer;

use common::{brute_log_likelihood, random_binary, random_dbm, random_rbm};

/// Likelihood non-inferiority does not hold at desk scale with three seeds;
/// see "Known deviations" in the README.
const EXPECTED_FAILURES: &[u32] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn finite_difference(p: &RbmParams, h: f64, f: impl Fn(&RbmParams) -> f64) -> GradientEstimate {
    let mut out = GradientEstimate::zeros_like(p, 0);
    let mut q = p.clone();
    let nh = p.num_hidden();
    let probe = |q: &mut RbmParams, slot: &mut dyn FnMut(&mut RbmParams) -> &mut f64| {
        let orig = *slot(q);
        *slot(q) = orig + h;
        let up = f(q);
        *slot(q) = orig - h;
        let down = f(q);
        *slot(q) = orig;
        (up - down) / (2.0 * h)
    };
    for idx in 0..p.weights.len() {
        let (i, j) = (idx / nh, idx % nh);
        out.d_weights[[i, j]] = probe(&mut q, &mut |q| &mut q.weights[[i, j]]);
    }
    for i in 0..p.num_visible() {
        out.d_visible_bias[i] = probe(&mut q, &mut |q| &mut q.visible_bias[i]);
    }
    for j in 0..nh {
        out.d_hidden_bias[j] = probe(&mut q, &mut |q| &mut q.hidden_bias[j]);
    }
    out
}

/// Data term minus the enumerated model expectation.
fn exact_gradient(p: &RbmParams, data: ndarray::ArrayView2<f64>) -> GradientEstimate {
    let positive = data_statistics(p, data).unwrap();
    let negative = exact_model_statistics(p).unwrap();
    GradientEstimate::from_statistics(&positive, &negative, data.nrows())
}

fn mean_penalty(
    p: &RbmParams,
    data: ndarray::ArrayView2<f64>,
    grouping: &Grouping,
    lambda: f64,
) -> f64 {
    let probs = p.hidden_probabilities_batch(data).unwrap();
    lambda
        * probs
            .outer_iter()
            .map(|r| group_norms(r, grouping).unwrap().sum())
            .sum::<f64>()
        / data.nrows() as f64
}

fn exact_gradient_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for m in 0..20u64 {
        let v = 3 + (m as usize % 5);
        let h = (12 - v).min(2 + (m as usize % 4));
        let p = random_rbm(v, h, 1.0, 1000 + m);
        let data = random_binary(6, v, 2000 + m);
        let analytic = exact_gradient(&p, data.view());
        let numeric = finite_difference(&p, 1e-5, |q| brute_log_likelihood(q, data.view()));
        worst = worst.max(analytic.max_abs_diff(&numeric));
    }
    outcome(
        worst <= 1e-6,
        format!("max abs error {worst:.2e} over 20 models"),
    )
}

fn penalty_gradient_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut smallest_norm = f64::INFINITY;
    for m in 0..20u64 {
        let (v, h, g) = (4 + m as usize % 4, 4 + m as usize % 5, 2 + m as usize % 2);
        let p = random_rbm(v, h, 1.0, 3000 + m);
        let grouping = Grouping::uniform(h, g).unwrap();
        let config = RegularizerConfig::sparse_group(0.5, g);
        let x = random_binary(1, v, 4000 + m);
        let probs = p.hidden_probabilities(x.row(0)).unwrap();
        smallest_norm = smallest_norm.min(
            group_norms(probs.view(), &grouping)
                .unwrap()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        );
        let analytic = penalty_gradient(&p, x.row(0), &grouping, &config).unwrap();
        let numeric = finite_difference(&p, 1e-5, |q| {
            mean_penalty(q, x.view(), &grouping, config.lambda)
        });
        worst = worst.max(analytic.max_abs_diff(&numeric));
    }
    outcome(
        worst <= 1e-6 && smallest_norm >= 1e-3,
        format!("max abs error {worst:.2e}, smallest group norm {smallest_norm:.3}"),
    )
}

fn objective_ascent() -> Outcome {
    let steps = [1e-3, 1e-4, 1e-5];
    let mut ascended = 0;
    let mut smallest_gain = f64::INFINITY;
    for seed in 0..10u64 {
        let p = random_rbm(6, 4, 1.0, 5000 + seed);
        let grouping = Grouping::uniform(4, 2).unwrap();
        let config = RegularizerConfig::sparse_group(0.1, 2);
        let data = random_binary(10, 6, 6000 + seed);
        let objective = |q: &RbmParams| {
            brute_log_likelihood(q, data.view())
                - mean_penalty(q, data.view(), &grouping, config.lambda)
        };
        let mut grad = exact_gradient(&p, data.view());
        grad.subtract(&penalty_gradient_batch(&p, data.view(), &grouping, &config).unwrap());
        let before = objective(&p);
        let mut all = true;
        for lr in steps {
            let rule = UpdateRule {
                learning_rate: lr,
                momentum: 0.0,
                weight_decay: 0.0,
            };
            let next = apply_update(&p, &grad, &mut MomentumState::zeros_like(&p), &rule).unwrap();
            let gain = objective(&next) - before;
            smallest_gain = smallest_gain.min(gain);
            all &= gain > 0.0;
        }
        ascended += all as usize;
    }
    outcome(
        ascended == 10,
        format!(
            "{ascended}/10 seeds ascend at step sizes {steps:?}; smallest gain {smallest_gain:.3e}"
        ),
    )
}

fn ais_accuracy() -> Outcome {
    let cfg = AisConfig {
        num_temperatures: 1000,
        num_chains: 100,
        ..AisConfig::default()
    };
    let mut errors = Vec::new();
    for seed in 0..5u64 {
        let p = random_rbm(10, 10, 1.0, 7000 + seed);
        let exact = exact_log_partition(&p).unwrap();
        let est = ais_log_partition(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        errors.push(est.log_z_mean - exact);
    }
    let good = errors.iter().filter(|e| e.abs() <= 0.1).count();
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:+.3}")).collect();
    outcome(
        good >= 4,
        format!(
            "{good}/5 seeds within 0.1 nats; errors [{}]",
            shown.join(", ")
        ),
    )
}

const DESK_SEEDS: [u64; 3] = [1, 2, 3];

/// Desk-scale MNIST run config: 64 hidden units, 10,000 training images,
/// 15 epochs, AIS evaluation on 1,000 test images.
fn desk_config(dir: &Path, seed: u64, sparse_group: bool) -> std::path::PathBuf {
    let mnist = common::mnist_dir();
    let kind = if sparse_group { "sparse_group" } else { "none" };
    let text = format!(
        "seed = {seed}\noutput = {out}\n\n[model]\ntype = rbm\nhidden = 64\n\n\
         [regularizer]\nkind = {kind}\nlambda = 0.1\ngroup_size = 4\n\n[optimizer]\nepochs = 15\n\n\
         [data]\nformat = idx\nimages = {ti}\nlabels = {tl}\nlimit = 10000\n\n\
         [eval]\nais = true\nais_temperatures = 10000\nais_chains = 100\n\
         test_images = {ei}\ntest_labels = {el}\ntest_limit = 1000\n",
        out = dir.join("run").display(),
        ti = mnist.join("train-images-idx3-ubyte").display(),
        tl = mnist.join("train-labels-idx1-ubyte").display(),
        ei = mnist.join("t10k-images-idx3-ubyte").display(),
        el = mnist.join("t10k-labels-idx1-ubyte").display(),
    );
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn desk_report(seed: u64, sparse_group: bool) -> EvalReport {
    let dir = tempfile::tempdir().unwrap();
    let config = desk_config(dir.path(), seed, sparse_group);
    let trained = cmd_train(&TrainOptions {
        config: config.clone(),
        ..TrainOptions::default()
    })
    .unwrap();
    cmd_eval(&EvalOptions {
        checkpoint: trained.checkpoint,
        config: Some(config),
        ..EvalOptions::default()
    })
    .unwrap()
}

/// Both desk-scale models for every seed, computed once and shared by the
/// sparseness and likelihood criteria.
fn desk_reports() -> &'static [(u64, EvalReport, EvalReport)] {
    static REPORTS: std::sync::OnceLock<Vec<(u64, EvalReport, EvalReport)>> =
        std::sync::OnceLock::new();
    REPORTS.get_or_init(|| {
        DESK_SEEDS
            .iter()
            .map(|&seed| (seed, desk_report(seed, true), desk_report(seed, false)))
            .collect()
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn sparseness_direction() -> Outcome {
    let reports = desk_reports();
    let sg = mean(
        reports
            .iter()
            .map(|(_, s, _)| s.sparseness.as_ref().unwrap().mean),
    );
    let plain = mean(
        reports
            .iter()
            .map(|(_, _, p)| p.sparseness.as_ref().unwrap().mean),
    );
    let per_seed: Vec<String> = reports
        .iter()
        .map(|(seed, s, p)| {
            format!(
                "seed {seed}: {:.3} vs {:.3}",
                s.sparseness.as_ref().unwrap().mean,
                p.sparseness.as_ref().unwrap().mean
            )
        })
        .collect();
    let in_range = (0.0..=1.0).contains(&sg) && (0.0..=1.0).contains(&plain);
    outcome(
        sg - plain >= 0.05 && in_range,
        format!(
            "sparse-group {sg:.3} vs plain {plain:.3} (gap {:.3}); {}",
            sg - plain,
            per_seed.join("; ")
        ),
    )
}

fn likelihood_direction() -> Outcome {
    let reports = desk_reports();
    let lp = |r: &EvalReport| r.avg_test_log_prob.unwrap();
    let sane = reports.iter().all(|(_, s, p)| {
        [s, p].iter().all(|r| {
            let a = r.ais.as_ref().unwrap();
            lp(r).is_finite()
                && a.log_z_mean.is_finite()
                && a.log_z_ci_high >= a.log_z_mean
                && a.log_z_mean >= a.log_z_ci_low
        })
    });
    assert!(
        sane,
        "AIS produced a non-finite estimate or an inverted interval"
    );
    let sg = mean(reports.iter().map(|(_, s, _)| lp(s)));
    let plain = mean(reports.iter().map(|(_, _, p)| lp(p)));
    let per_seed: Vec<String> = reports
        .iter()
        .map(|(seed, s, p)| format!("seed {seed}: {:.2} vs {:.2}", lp(s), lp(p)))
        .collect();
    outcome(
        sg >= plain - 1.0,
        format!(
            "sparse-group {sg:.2} vs plain {plain:.2} nats (margin {:+.2}); {}",
            sg - plain,
            per_seed.join("; ")
        ),
    )
}

fn hoyer_properties() -> Outcome {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    let mut worst_scale = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(2..64);
        let v = Array1::from_shape_fn(d, |_| rng.random_range(-5.0..5.0));
        let s = hoyer_sparseness(v.view()).unwrap();
        if !(0.0..=1.0).contains(&s) {
            failures += 1;
        }
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        worst_scale = worst_scale.max((hoyer_sparseness((&v * scale).view()).unwrap() - s).abs());

        let mut one_hot = Array1::zeros(d);
        one_hot[rng.random_range(0..d)] = rng.random_range(0.1..10.0);
        if (hoyer_sparseness(one_hot.view()).unwrap() - 1.0).abs() > 1e-12 {
            failures += 1;
        }
        let constant = Array1::from_elem(d, rng.random_range(0.1..10.0));
        if hoyer_sparseness(constant.view()).unwrap().abs() > 1e-12 {
            failures += 1;
        }
    }
    outcome(
        failures == 0 && worst_scale <= 1e-12,
        format!("{failures} range/extreme violations in 10,000 vectors; worst scale change {worst_scale:.1e}"),
    )
}

fn responsibility() -> Outcome {
    let components: Vec<RbmParams> = (0..5).map(|k| random_rbm(8, 6, 0.7, 8000 + k)).collect();
    let mut sum_err = 0.0f64;
    let mut form_err = 0.0f64;
    for seed in 0..200 {
        let x = random_binary(1, 8, 9000 + seed).row(0).to_owned();
        let r = third_order_responsibility(&components, x.view(), 1.0).unwrap();
        sum_err = sum_err.max((r.sum() - 1.0).abs());
        let scores: Vec<f64> = components
            .iter()
            .map(|c| {
                c.hidden_probabilities(x.view())
                    .unwrap()
                    .iter()
                    .map(|p| 1.0 / (1.0 - p))
                    .product()
            })
            .collect();
        let total: f64 = scores.iter().sum();
        for (a, s) in r.iter().zip(&scores) {
            form_err = form_err.max((a - s / total).abs());
        }
    }
    outcome(
        sum_err <= 1e-12 && form_err <= 1e-10,
        format!("sum error {sum_err:.1e}, product-form error {form_err:.1e}"),
    )
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn mean_field_consistency() -> Outcome {
    let config = MeanFieldConfig::default();
    let mut converged = 0;
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for seed in 0..100u64 {
        let p = random_dbm(8, 6, 5, 1.0, 10_000 + seed);
        let x = random_binary(1, 8, 11_000 + seed).row(0).to_owned();
        let s = mean_field(&p, x.view(), &config).unwrap();
        if s.converged {
            converged += 1;
            let t1 = (x.dot(&p.w1) + p.w2.dot(&s.mu2) + &p.hidden1_bias).mapv(sigmoid);
            let t2 = (s.mu1.dot(&p.w2) + &p.hidden2_bias).mapv(sigmoid);
            let r = (&t1 - &s.mu1)
                .iter()
                .chain((&t2 - &s.mu2).iter())
                .fold(0.0f64, |m, d| m.max(d.abs()));
            worst = worst.max(r);
        }

        let mut decoupled = p.clone();
        decoupled.w2.fill(0.0);
        let s = mean_field(&decoupled, x.view(), &config).unwrap();
        let rbm = RbmParams::new(
            p.w1.clone(),
            p.visible_bias.clone(),
            p.hidden1_bias.clone(),
            VisibleType::Binary,
        )
        .unwrap();
        bitwise &= s.mu1 == rbm.hidden_probabilities(x.view()).unwrap();
        // with W² = 0 the top layer sees only its bias
        let top = RbmParams::new(
            ndarray::Array2::zeros((6, 5)),
            p.hidden1_bias.clone(),
            p.hidden2_bias.clone(),
            VisibleType::Binary,
        )
        .unwrap();
        bitwise &= s.mu2 == top.hidden_probabilities(s.mu1.view()).unwrap();
    }
    outcome(
        converged > 0 && worst <= 1e-6 && bitwise,
        format!("{converged}/100 converged, worst residual {worst:.1e}, decoupled layers bitwise equal: {bitwise}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = desk_config(dir.path(), 1, true);
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let trained = cmd_train(&TrainOptions {
            config: config.clone(),
            out: Some(out),
            ..TrainOptions::default()
        })
        .unwrap();
        bytes.push(std::fs::read(trained.checkpoint).unwrap());
    }
    outcome(
        bytes[0] == bytes[1],
        format!(
            "two {}-byte checkpoints, identical: {}",
            bytes[0].len(),
            bytes[0] == bytes[1]
        ),
    )
}

fn idx_bit_exactness() -> Outcome {
    let failures = common::idx_fixture_failures();
    let detail = if failures.is_empty() {
        "fixture and all error cases behave".into()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn probe_direction() -> Outcome {
    let train = common::mnist_train();
    let test = common::mnist_test();
    let probe_train = train.subset(5000, 1).unwrap();
    let probe_test = test.subset(1000, 1).unwrap();
    let fit = train.subset(10_000, 1).unwrap();
    let config = TrainConfig {
        epochs: 15,
        regularizer: RegularizerConfig::sparse_group(0.1, 4),
        ..TrainConfig::binary_default()
    };
    let mut trainer = RbmTrainer::new(&fit, 256, VisibleType::Binary, config, 1).unwrap();
    trainer.train(&fit).unwrap();
    let cfg = ProbeConfig::default();
    let (ytr, yte) = (
        probe_train.labels.as_ref().unwrap(),
        probe_test.labels.as_ref().unwrap(),
    );
    let raw = linear_probe(
        probe_train.items.view(),
        ytr,
        probe_test.items.view(),
        yte,
        &cfg,
    )
    .unwrap();
    let ftr = trainer
        .params
        .hidden_probabilities_batch(probe_train.items.view())
        .unwrap();
    let fte = trainer
        .params
        .hidden_probabilities_batch(probe_test.items.view())
        .unwrap();
    let rbm = linear_probe(ftr.view(), ytr, fte.view(), yte, &cfg).unwrap();
    outcome(
        rbm > raw,
        format!("sparse-group RBM features {rbm:.3} vs raw pixels {raw:.3}"),
    )
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "exact-gradient oracle",
        budget: Duration::from_secs(60),
        run: exact_gradient_oracle,
    },
    Criterion {
        id: 2,
        name: "regularizer-gradient oracle",
        budget: Duration::from_secs(60),
        run: penalty_gradient_oracle,
    },
    Criterion {
        id: 3,
        name: "objective ascent",
        budget: Duration::from_secs(60),
        run: objective_ascent,
    },
    Criterion {
        id: 4,
        name: "AIS accuracy",
        budget: Duration::from_secs(300),
        run: ais_accuracy,
    },
    Criterion {
        id: 5,
        name: "sparseness direction",
        budget: Duration::from_secs(900),
        run: sparseness_direction,
    },
    Criterion {
        id: 6,
        name: "likelihood direction",
        budget: Duration::from_secs(900),
        run: likelihood_direction,
    },
    Criterion {
        id: 7,
        name: "Hoyer properties",
        budget: Duration::from_secs(10),
        run: hoyer_properties,
    },
    Criterion {
        id: 8,
        name: "third-order responsibility",
        budget: Duration::from_secs(10),
        run: responsibility,
    },
    Criterion {
        id: 9,
        name: "mean-field self-consistency",
        budget: Duration::from_secs(60),
        run: mean_field_consistency,
    },
    Criterion {
        id: 10,
        name: "training determinism",
        budget: Duration::from_secs(300),
        run: determinism,
    },
    Criterion {
        id: 11,
        name: "IDX bit-exactness",
        budget: Duration::from_secs(1),
        run: idx_bit_exactness,
    },
    Criterion {
        id: 12,
        name: "linear-probe direction",
        budget: Duration::from_secs(600),
        run: probe_direction,
    },
];

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut unexpected = Vec::new();
    for c in CRITERIA
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let pass = result.pass && in_budget;
        let mut line = format!(
            "criterion {:>2} {:<28} {}  {} [{:.1}s of {}s]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        if !in_budget {
            line.push_str(" over budget");
        }
        if !pass && EXPECTED_FAILURES.contains(&c.id) {
            line.push_str(" (known deviation)");
        } else if !pass {
            unexpected.push(c.id);
        }
        println!("{line}");
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
