//! Exact quantities for binary RBMs small enough to enumerate.
//!
//! Only one layer is enumerated; the other is summed out in closed form.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sigmoid, softplus};
use crate::rbm::{RbmParams, SufficientStatistics, VisibleType};

/// Largest `V + H` accepted by the enumeration routines.
pub const ENUMERATION_BUDGET: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnumerationSide {
    Visible,
    Hidden,
}

/// Binary vector whose unit `i` is bit `i` of `code`.
pub fn configuration(code: u64, len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|i| ((code >> i) & 1) as f64))
}

/// All `2^len` configurations as rows, in code order.
pub fn all_configurations(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((1usize << len, len), |(code, i)| ((code >> i) & 1) as f64)
}

fn check_enumerable(params: &RbmParams) -> Result<()> {
    if params.visible_type != VisibleType::Binary {
        return Err(Error::Unsupported(
            "exact partition function requires binary visible units".into(),
        ));
    }
    let total = params.num_visible() + params.num_hidden();
    if total > ENUMERATION_BUDGET {
        return Err(Error::Budget(format!(
            "V + H = {total} exceeds the enumeration budget of {ENUMERATION_BUDGET}"
        )));
    }
    Ok(())
}

fn smaller_side(params: &RbmParams) -> EnumerationSide {
    if params.num_visible() <= params.num_hidden() {
        EnumerationSide::Visible
    } else {
        EnumerationSide::Hidden
    }
}

/// `log Σ_x exp(−E(x, h))` for each hidden configuration row.
fn hidden_log_marginals(params: &RbmParams, hiddens: ArrayView2<f64>) -> Array1<f64> {
    let mut input = hiddens.dot(&params.weights.t());
    input += &params.visible_bias;
    let bias = hiddens.dot(&params.hidden_bias);
    Array1::from_iter(
        input
            .outer_iter()
            .zip(bias.iter())
            .map(|(row, &hc)| hc + row.iter().map(|&t| softplus(t)).sum::<f64>()),
    )
}

/// `log Z`, enumerating whichever layer is smaller.
pub fn exact_log_partition(params: &RbmParams) -> Result<f64> {
    exact_log_partition_via(params, smaller_side(params))
}

pub fn exact_log_partition_via(params: &RbmParams, side: EnumerationSide) -> Result<f64> {
    check_enumerable(params)?;
    Ok(match side {
        EnumerationSide::Visible => {
            let xs = all_configurations(params.num_visible());
            let free = params.free_energy_batch(xs.view())?;
            log_sum_exp(free.iter().map(|f| -f))
        }
        EnumerationSide::Hidden => {
            let hs = all_configurations(params.num_hidden());
            log_sum_exp(hidden_log_marginals(params, hs.view()))
        }
    })
}

/// `log P(x)` for each row, given `log Z`.
pub fn log_probabilities(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    log_z: f64,
) -> Result<Array1<f64>> {
    Ok(params.free_energy_batch(batch)?.mapv(|f| -f - log_z))
}

/// Mean exact log-likelihood of the rows of `batch`.
pub fn exact_log_likelihood(params: &RbmParams, batch: ArrayView2<f64>) -> Result<f64> {
    let log_z = exact_log_partition(params)?;
    Ok(log_probabilities(params, batch, log_z)?
        .mean()
        .unwrap_or(f64::NAN))
}

/// Model expectations `<x hᵀ>`, `<x>`, `<h>` under `P(x, h)`.
pub fn exact_model_statistics(params: &RbmParams) -> Result<SufficientStatistics> {
    check_enumerable(params)?;
    let log_z = exact_log_partition(params)?;
    match smaller_side(params) {
        EnumerationSide::Visible => {
            let xs = all_configurations(params.num_visible());
            let weights = log_probabilities(params, xs.view(), log_z)?.mapv(f64::exp);
            let probs = params.hidden_probabilities_batch(xs.view())?;
            let weighted = &xs * &weights.view().insert_axis(ndarray::Axis(1));
            Ok(SufficientStatistics {
                weights: weighted.t().dot(&probs),
                visible: weighted.sum_axis(ndarray::Axis(0)),
                hidden: probs.t().dot(&weights),
            })
        }
        EnumerationSide::Hidden => {
            let hs = all_configurations(params.num_hidden());
            let weights = hidden_log_marginals(params, hs.view()).mapv(|l| (l - log_z).exp());
            let mut input = hs.dot(&params.weights.t());
            input += &params.visible_bias;
            let visible_means = input.mapv_into(sigmoid);
            let weighted = &hs * &weights.view().insert_axis(ndarray::Axis(1));
            Ok(SufficientStatistics {
                weights: visible_means.t().dot(&weighted),
                visible: visible_means.t().dot(&weights),
                hidden: weighted.sum_axis(ndarray::Axis(0)),
            })
        }
    }
}
