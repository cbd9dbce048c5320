//! Shared helpers for the integration tests.
//!
//! The oracles here only call `energy()` and sum `exp(-E)` over every joint
//! configuration, so they share no code path with the library's closed-form
//! enumeration.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgrbm::data::{load_idx, Dataset};
use sgrbm::dbm::DbmParams;
use sgrbm::rbm::{RbmParams, VisibleType};

pub fn bits(code: usize, len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|i| ((code >> i) & 1) as f64))
}

fn lse(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * (rng.random::<f64>() * 2.0 - 1.0)
}

/// Binary RBM with every parameter uniform in `[-scale, scale]`.
pub fn random_rbm(v: usize, h: usize, scale: f64, seed: u64) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Array2::from_shape_fn((v, h), |_| uniform(&mut rng, scale));
    let b = Array1::from_shape_fn(v, |_| uniform(&mut rng, scale));
    let c = Array1::from_shape_fn(h, |_| uniform(&mut rng, scale));
    RbmParams::new(weights, b, c, VisibleType::Binary).unwrap()
}

pub fn random_dbm(v: usize, h1: usize, h2: usize, scale: f64, seed: u64) -> DbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DbmParams {
        w1: Array2::from_shape_fn((v, h1), |_| uniform(&mut rng, scale)),
        w2: Array2::from_shape_fn((h1, h2), |_| uniform(&mut rng, scale)),
        visible_bias: Array1::from_shape_fn(v, |_| uniform(&mut rng, scale)),
        hidden1_bias: Array1::from_shape_fn(h1, |_| uniform(&mut rng, scale)),
        hidden2_bias: Array1::from_shape_fn(h2, |_| uniform(&mut rng, scale)),
    }
}

pub fn random_binary(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn(
        (rows, cols),
        |_| if rng.random::<bool>() { 1.0 } else { 0.0 },
    )
}

/// `log Σ_{x,h} exp(-E(x, h))`.
pub fn brute_log_z(p: &RbmParams) -> f64 {
    let (v, h) = (p.num_visible(), p.num_hidden());
    let mut terms = Vec::with_capacity(1 << (v + h));
    for xc in 0..1usize << v {
        let x = bits(xc, v);
        for hc in 0..1usize << h {
            terms.push(-p.energy(x.view(), bits(hc, h).view()).unwrap());
        }
    }
    lse(&terms)
}

/// `log Σ_h exp(-E(x, h))`.
pub fn brute_log_unnormalized(p: &RbmParams, x: &Array1<f64>) -> f64 {
    let h = p.num_hidden();
    let terms: Vec<f64> = (0..1usize << h)
        .map(|hc| -p.energy(x.view(), bits(hc, h).view()).unwrap())
        .collect();
    lse(&terms)
}

/// Mean log-likelihood of the rows of `data`.
pub fn brute_log_likelihood(p: &RbmParams, data: ArrayView2<f64>) -> f64 {
    let log_z = brute_log_z(p);
    data.outer_iter()
        .map(|x| brute_log_unnormalized(p, &x.to_owned()) - log_z)
        .sum::<f64>()
        / data.nrows() as f64
}

/// `<x hᵀ>`, `<x>`, `<h>` under the joint distribution.
pub fn brute_model_statistics(p: &RbmParams) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let (v, h) = (p.num_visible(), p.num_hidden());
    let log_z = brute_log_z(p);
    let mut w = Array2::zeros((v, h));
    let mut bx = Array1::zeros(v);
    let mut bh = Array1::zeros(h);
    for xc in 0..1usize << v {
        let x = bits(xc, v);
        for hc in 0..1usize << h {
            let hv = bits(hc, h);
            let prob = (-p.energy(x.view(), hv.view()).unwrap() - log_z).exp();
            for i in 0..v {
                for j in 0..h {
                    w[[i, j]] += prob * x[i] * hv[j];
                }
            }
            bx.scaled_add(prob, &x);
            bh.scaled_add(prob, &hv);
        }
    }
    (w, bx, bh)
}

/// Exact `P(h¹_j = 1 | x)` and `P(h²_k = 1 | x)` by enumerating both layers.
pub fn brute_dbm_posterior(p: &DbmParams, x: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let (_, h1, h2) = p.dims();
    let mut log_w = Vec::new();
    let mut states = Vec::new();
    for a in 0..1usize << h1 {
        let ha = bits(a, h1);
        for b in 0..1usize << h2 {
            let hb = bits(b, h2);
            log_w.push(-p.energy(x.view(), ha.view(), hb.view()).unwrap());
            states.push((ha.clone(), hb));
        }
    }
    let norm = lse(&log_w);
    let mut m1 = Array1::zeros(h1);
    let mut m2 = Array1::zeros(h2);
    for (lw, (ha, hb)) in log_w.iter().zip(states) {
        let prob = (lw - norm).exp();
        m1.scaled_add(prob, &ha);
        m2.scaled_add(prob, &hb);
    }
    (m1, m2)
}

/// Directory holding the four MNIST IDX files: `$MNIST_DIR`, or `data/mnist`
/// at the workspace root.
pub fn mnist_dir() -> PathBuf {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let probe = dir.join("train-images-idx3-ubyte");
    if !probe.exists() {
        panic!(
            "MNIST not found at {}; run scripts/fetch_mnist.sh or set MNIST_DIR",
            dir.display()
        );
    }
    dir
}

pub fn mnist_train() -> Dataset {
    let dir = mnist_dir();
    load_idx(
        &dir.join("train-images-idx3-ubyte"),
        Some(&dir.join("train-labels-idx1-ubyte")),
    )
    .unwrap()
}

pub fn mnist_test() -> Dataset {
    let dir = mnist_dir();
    load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        Some(&dir.join("t10k-labels-idx1-ubyte")),
    )
    .unwrap()
}

/// Two 2x2 images, hand-assembled.
pub const IDX_IMAGES: [u8; 24] = [
    0x00, 0x00, 0x08, 0x03, // magic
    0x00, 0x00, 0x00, 0x02, // count
    0x00, 0x00, 0x00, 0x02, // rows
    0x00, 0x00, 0x00, 0x02, // cols
    0, 255, 128, 1, //
    10, 20, 30, 40,
];

pub const IDX_LABELS: [u8; 10] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3];

fn parse_offset(result: sgrbm::Result<impl std::fmt::Debug>) -> Option<usize> {
    match result {
        Err(sgrbm::Error::Parse { offset, .. }) => Some(offset),
        _ => None,
    }
}

/// Runs the IDX fixture through parsing, writing and every documented error
/// case. Returns a description of each check that failed.
pub fn idx_fixture_failures() -> Vec<String> {
    use sgrbm::data::{
        parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, DatasetMeta,
    };

    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    match parse_idx_images(&IDX_IMAGES) {
        Ok((items, shape)) => {
            let expected = [
                0.0,
                1.0,
                128.0 / 255.0,
                1.0 / 255.0,
                10.0 / 255.0,
                20.0 / 255.0,
                30.0 / 255.0,
                40.0 / 255.0,
            ];
            check(shape == (2, 2), "image shape");
            check(items.dim() == (2, 4), "image matrix shape");
            check(
                items.iter().zip(expected).all(|(a, b)| *a == b),
                "pixel values",
            );
            let dataset = Dataset::new(
                items,
                None,
                DatasetMeta {
                    source: "fixture".into(),
                    image_shape: Some(shape),
                    preprocessing: vec![],
                },
            )
            .unwrap();
            check(
                write_idx_images(&dataset).ok().as_deref() == Some(&IDX_IMAGES[..]),
                "image round trip",
            );
        }
        Err(e) => check(false, &format!("fixture images rejected: {e}")),
    }
    match parse_idx_labels(&IDX_LABELS) {
        Ok(labels) => {
            check(labels == vec![7, 3], "label values");
            check(write_idx_labels(&labels) == IDX_LABELS, "label round trip");
        }
        Err(e) => check(false, &format!("fixture labels rejected: {e}")),
    }

    check(
        parse_offset(parse_idx_images(&[])) == Some(0),
        "empty file fails at offset 0",
    );
    check(
        parse_offset(parse_idx_images(&IDX_LABELS)) == Some(0),
        "label magic in image parser fails at offset 0",
    );
    check(
        parse_offset(parse_idx_labels(&IDX_IMAGES)) == Some(0),
        "image magic in label parser fails at offset 0",
    );
    check(
        parse_offset(parse_idx_images(&IDX_IMAGES[..10])) == Some(8),
        "truncated header fails at the row count",
    );
    check(
        parse_offset(parse_idx_images(&IDX_IMAGES[..23])) == Some(16),
        "truncated pixels fail at the pixel data",
    );
    check(
        parse_offset(parse_idx_labels(&IDX_LABELS[..9])) == Some(8),
        "truncated labels fail at the label data",
    );
    let mut trailing = IDX_IMAGES.to_vec();
    trailing.push(0);
    check(
        parse_offset(parse_idx_images(&trailing)) == Some(24),
        "trailing byte fails at its offset",
    );

    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let labels = dir.path().join("labels");
    std::fs::write(&images, IDX_IMAGES).unwrap();
    let mut three = IDX_LABELS.to_vec();
    three[7] = 3;
    three.push(1);
    std::fs::write(&labels, &three).unwrap();
    check(
        parse_offset(load_idx(&images, Some(&labels))).is_some(),
        "label count mismatch is a parse error",
    );
    check(
        matches!(
            load_idx(&dir.path().join("missing"), None),
            Err(sgrbm::Error::Io { .. })
        ),
        "missing file is an i/o error",
    );
    std::fs::write(&labels, IDX_LABELS).unwrap();
    match load_idx(&images, Some(&labels)) {
        Ok(d) => check(
            d.len() == 2 && d.labels == Some(vec![7, 3]) && d.meta.image_shape == Some((2, 2)),
            "load_idx",
        ),
        Err(e) => check(false, &format!("load_idx failed: {e}")),
    }
    failures
}
