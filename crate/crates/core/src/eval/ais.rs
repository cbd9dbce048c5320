//! Annealed importance sampling estimate of `log Z` for binary RBMs.
//!
//! Intermediate unnormalized marginals over `x` bridge an independent
//! visible-bias model `b_A` (β = 0) to the target RBM (β = 1):
//!
//! ```text
//! log f_β(x) = (1 − β)·b_Aᵀx + β·bᵀx + Σ_j softplus(β·(xᵀw_j + c_j))
//! ```
//!
//! The base partition function is `2^H · Π_i (1 + exp(b_A,i))`. Each chain
//! accumulates `log f_{β_k}(x) − log f_{β_{k−1}}(x)` and then takes one Gibbs
//! transition that leaves `f_{β_k}` invariant.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{clamped_logit, sigmoid, softplus};
use crate::rbm::{RbmParams, VisibleType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Linear,
    /// Linear up to β = 0.9, then geometrically shrinking steps toward 1.
    GeometricTail,
}

impl Schedule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Schedule::Linear),
            "geometric-tail" | "geometric_tail" => Some(Schedule::GeometricTail),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AisConfig {
    /// Number of inverse temperatures, endpoints included.
    pub num_temperatures: usize,
    pub num_chains: usize,
    pub schedule: Schedule,
    /// Visible biases of the base model; zeros (uniform) when absent.
    pub base_visible_bias: Option<Array1<f64>>,
}

impl Default for AisConfig {
    fn default() -> Self {
        AisConfig {
            num_temperatures: 1_000,
            num_chains: 100,
            schedule: Schedule::Linear,
            base_visible_bias: None,
        }
    }
}

impl AisConfig {
    pub fn report_default() -> Self {
        AisConfig {
            num_temperatures: 10_000,
            ..AisConfig::default()
        }
    }
}

/// Base-model visible biases fitted to the per-dimension means of `data`.
pub fn base_visible_bias_from_data(data: ArrayView2<f64>) -> Array1<f64> {
    data.mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(data.ncols()))
        .mapv(|p| clamped_logit(p, 10.0))
}

/// Strictly increasing inverse temperatures from 0 to 1.
pub fn temperatures(count: usize, schedule: Schedule) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Parameter(
            "AIS needs at least two temperatures".into(),
        ));
    }
    let last = (count - 1) as f64;
    Ok(match schedule {
        Schedule::Linear => (0..count).map(|k| k as f64 / last).collect(),
        Schedule::GeometricTail => {
            if count < 4 {
                return temperatures(count, Schedule::Linear);
            }
            let head = count / 2;
            let tail = count - head;
            let ratio = 0.01f64.powf(1.0 / tail as f64);
            let mut betas: Vec<f64> = (0..head).map(|k| 0.9 * k as f64 / head as f64).collect();
            let norm = 1.0 - ratio.powi(tail as i32);
            betas.extend((1..=tail).map(|k| 0.9 + 0.1 * (1.0 - ratio.powi(k as i32)) / norm));
            betas[count - 1] = 1.0;
            betas
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AisEstimate {
    pub log_z_mean: f64,
    /// `log(r̂ − 3σ̂_r)`; `-inf` when the interval reaches zero.
    pub log_z_ci_low: f64,
    pub log_z_ci_high: f64,
    pub effective_sample_size: f64,
    /// Sample standard deviation of the per-chain log importance weights.
    pub log_weight_std: f64,
    pub log_z_base: f64,
}

/// Per-chain generator for `chain`, independent of the total chain count.
fn chain_rng(master: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(chain as u64);
    rng
}

fn sample_rows(probs: &Array2<f64>, rngs: &mut [ChaCha8Rng]) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p_row, mut o_row), rng) in probs
        .outer_iter()
        .zip(out.outer_iter_mut())
        .zip(rngs.iter_mut())
    {
        for (o, &p) in o_row.iter_mut().zip(p_row.iter()) {
            *o = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
    }
    out
}

pub fn ais_log_partition<R: Rng + ?Sized>(
    params: &RbmParams,
    config: &AisConfig,
    rng: &mut R,
) -> Result<AisEstimate> {
    if params.visible_type != VisibleType::Binary {
        return Err(Error::Unsupported(
            "AIS requires binary visible units".into(),
        ));
    }
    if config.num_chains < 2 {
        return Err(Error::Parameter("AIS needs at least two chains".into()));
    }
    let betas = temperatures(config.num_temperatures, config.schedule)?;
    let v = params.num_visible();
    let h = params.num_hidden();
    let base_bias = match &config.base_visible_bias {
        Some(b) if b.len() == v => b.clone(),
        Some(b) => {
            return Err(Error::Dimension {
                context: "AIS base visible bias",
                expected: v,
                found: b.len(),
            })
        }
        None => Array1::zeros(v),
    };
    let log_z_base = h as f64 * 2f64.ln() + base_bias.iter().map(|&b| softplus(b)).sum::<f64>();

    let master: u64 = rng.random();
    let mut rngs: Vec<ChaCha8Rng> = (0..config.num_chains)
        .map(|m| chain_rng(master, m))
        .collect();
    let m = config.num_chains;

    let base_probs = Array2::from_shape_fn((m, v), |(_, i)| sigmoid(base_bias[i]));
    let mut x = sample_rows(&base_probs, &mut rngs);
    let mut log_w = Array1::<f64>::zeros(m);

    for k in 1..betas.len() {
        let (prev, cur) = (betas[k - 1], betas[k]);
        let mut input = x.dot(&params.weights);
        input += &params.hidden_bias;
        let target_lin = x.dot(&params.visible_bias);
        let base_lin = x.dot(&base_bias);
        for (l, row) in input.outer_iter().enumerate() {
            let experts: f64 = row
                .iter()
                .map(|&t| softplus(cur * t) - softplus(prev * t))
                .sum();
            log_w[l] += (cur - prev) * (target_lin[l] - base_lin[l]) + experts;
        }
        if k + 1 < betas.len() {
            let hidden = sample_rows(&input.mapv(|t| sigmoid(cur * t)), &mut rngs);
            let mut vis_input = hidden.dot(&params.weights.t());
            vis_input += &params.visible_bias;
            vis_input *= cur;
            vis_input += &(&base_bias * (1.0 - cur));
            x = sample_rows(&vis_input.mapv_into(sigmoid), &mut rngs);
        }
    }
    summarize(&log_w, log_z_base)
}

fn summarize(log_w: &Array1<f64>, log_z_base: f64) -> Result<AisEstimate> {
    if log_w.iter().any(|w| w.is_nan()) {
        return Err(Error::Estimation("NaN importance weight".into()));
    }
    let max = log_w.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return Err(Error::Estimation(
            "all importance weights are degenerate".into(),
        ));
    }
    let m = log_w.len() as f64;
    let scaled = log_w.mapv(|w| (w - max).exp());
    let r = scaled.sum() / m;
    let var = scaled.iter().map(|s| (s - r) * (s - r)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let offset = log_z_base + max;
    let lw_mean = log_w.sum() / m;
    let lw_var = log_w
        .iter()
        .map(|w| (w - lw_mean) * (w - lw_mean))
        .sum::<f64>()
        / (m - 1.0);
    let low = r - 3.0 * se;
    Ok(AisEstimate {
        log_z_mean: offset + r.ln(),
        log_z_ci_low: if low > 0.0 {
            offset + low.ln()
        } else {
            f64::NEG_INFINITY
        },
        log_z_ci_high: offset + (r + 3.0 * se).ln(),
        effective_sample_size: scaled.sum().powi(2) / scaled.iter().map(|s| s * s).sum::<f64>(),
        log_weight_std: lw_var.sqrt(),
        log_z_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedules_are_strictly_increasing() {
        for schedule in [Schedule::Linear, Schedule::GeometricTail] {
            for count in [2, 3, 10, 1001] {
                let b = temperatures(count, schedule).unwrap();
                assert_eq!(b.len(), count);
                assert_eq!(b[0], 0.0);
                assert_eq!(*b.last().unwrap(), 1.0);
                assert!(b.windows(2).all(|w| w[0] < w[1]), "{schedule:?} {count}");
            }
        }
        assert!(temperatures(1, Schedule::Linear).is_err());
    }

    #[test]
    fn base_model_target_has_unit_weights() {
        let bias = array![0.3, -1.0, 2.0];
        let mut p = RbmParams::zeros(3, 4, VisibleType::Binary);
        p.visible_bias = bias.clone();
        let cfg = AisConfig {
            num_temperatures: 50,
            num_chains: 10,
            schedule: Schedule::Linear,
            base_visible_bias: Some(bias.clone()),
        };
        let est = ais_log_partition(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let closed = 4.0 * 2f64.ln() + bias.iter().map(|&b| softplus(b)).sum::<f64>();
        assert!((est.log_z_mean - closed).abs() < 1e-12);
        assert!(est.log_weight_std < 1e-12);
        assert!((est.log_z_ci_low - est.log_z_ci_high).abs() < 1e-12);
    }

    #[test]
    fn chain_streams_do_not_depend_on_chain_count() {
        let mut a = chain_rng(42, 3);
        let mut b = chain_rng(42, 3);
        let _ = chain_rng(42, 99);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        assert_ne!(
            chain_rng(42, 3).random::<u64>(),
            chain_rng(42, 4).random::<u64>()
        );
    }

    #[test]
    fn rejects_bad_configurations() {
        let p = RbmParams::zeros(2, 2, VisibleType::Gaussian);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            ais_log_partition(&p, &AisConfig::default(), &mut rng),
            Err(Error::Unsupported(_))
        ));
        let p = RbmParams::zeros(2, 2, VisibleType::Binary);
        let cfg = AisConfig {
            num_chains: 1,
            ..AisConfig::default()
        };
        assert!(ais_log_partition(&p, &cfg, &mut rng).is_err());
    }

    #[test]
    fn degenerate_weights_fail() {
        let w = array![f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!(matches!(summarize(&w, 0.0), Err(Error::Estimation(_))));
    }
}
