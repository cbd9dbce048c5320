//! Restricted Boltzmann machine with binary hidden units and either binary or
//! unit-variance Gaussian visible units.
//!
//! Energy (binary visibles):
//!
//! ```text
//! E(x, h) = -Σ_ij x_i h_j w_ij - Σ_i x_i b_i - Σ_j h_j c_j
//! ```
//!
//! Gaussian visibles replace `-Σ_i x_i b_i` with `½ Σ_i (x_i - b_i)²`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::math::{sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VisibleType {
    Binary,
    /// Unit-variance Gaussian visibles; data must be standardized.
    Gaussian,
}

impl VisibleType {
    pub fn as_str(self) -> &'static str {
        match self {
            VisibleType::Binary => "binary",
            VisibleType::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "binary" => Some(VisibleType::Binary),
            "gaussian" | "gaussian-unit-variance" => Some(VisibleType::Gaussian),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    /// `(V, H)`; column `j` is the receptive field of hidden unit `j`.
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub visible_type: VisibleType,
}

impl RbmParams {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        visible_type: VisibleType,
    ) -> Result<Self> {
        let params = RbmParams {
            weights,
            visible_bias,
            hidden_bias,
            visible_type,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(num_visible: usize, num_hidden: usize, visible_type: VisibleType) -> Self {
        RbmParams {
            weights: Array2::zeros((num_visible, num_hidden)),
            visible_bias: Array1::zeros(num_visible),
            hidden_bias: Array1::zeros(num_hidden),
            visible_type,
        }
    }

    /// Weights drawn from `N(0, weight_std²)`, biases zero.
    pub fn random<R: Rng + ?Sized>(
        num_visible: usize,
        num_hidden: usize,
        visible_type: VisibleType,
        weight_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, weight_std)
            .map_err(|e| Error::Parameter(format!("weight std {weight_std}: {e}")))?;
        let mut params = RbmParams::zeros(num_visible, num_hidden, visible_type);
        params
            .weights
            .iter_mut()
            .for_each(|w| *w = normal.sample(rng));
        Ok(params)
    }

    pub fn num_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_len(
            "weight rows vs visible bias",
            self.weights.nrows(),
            self.visible_bias.len(),
        )?;
        check_len(
            "weight columns vs hidden bias",
            self.weights.ncols(),
            self.hidden_bias.len(),
        )?;
        if !self.is_finite() {
            return Err(Error::Numerical("RBM parameters contain NaN or Inf".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
    }

    pub fn energy(&self, visible: ArrayView1<f64>, hidden: ArrayView1<f64>) -> Result<f64> {
        check_len("energy visible", self.num_visible(), visible.len())?;
        check_len("energy hidden", self.num_hidden(), hidden.len())?;
        let interaction = visible.dot(&self.weights.dot(&hidden));
        let hidden_term = hidden.dot(&self.hidden_bias);
        let visible_term = match self.visible_type {
            VisibleType::Binary => -visible.dot(&self.visible_bias),
            VisibleType::Gaussian => {
                0.5 * visible
                    .iter()
                    .zip(self.visible_bias.iter())
                    .map(|(x, b)| (x - b) * (x - b))
                    .sum::<f64>()
            }
        };
        Ok(-interaction + visible_term - hidden_term)
    }

    /// `xᵀW + c`, the total input to each hidden unit.
    pub fn hidden_input(&self, visible: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len("hidden input visible", self.num_visible(), visible.len())?;
        Ok(visible.dot(&self.weights) + &self.hidden_bias)
    }

    pub fn hidden_probabilities(&self, visible: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.hidden_input(visible)?.mapv_into(sigmoid))
    }

    /// Row `l` holds `P(h = 1 | x^(l))`.
    pub fn hidden_probabilities_batch(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("batch columns", self.num_visible(), batch.ncols())?;
        let mut input = batch.dot(&self.weights);
        input += &self.hidden_bias;
        Ok(input.mapv_into(sigmoid))
    }

    /// Binary visibles: `P(x_i = 1 | h)`. Gaussian visibles: the conditional mean.
    pub fn visible_probabilities(&self, hidden: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_len(
            "visible probabilities hidden",
            self.num_hidden(),
            hidden.len(),
        )?;
        let input = self.weights.dot(&hidden) + &self.visible_bias;
        Ok(match self.visible_type {
            VisibleType::Binary => input.mapv_into(sigmoid),
            VisibleType::Gaussian => input,
        })
    }

    pub fn visible_means_batch(&self, hidden: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("hidden batch columns", self.num_hidden(), hidden.ncols())?;
        let mut input = hidden.dot(&self.weights.t());
        input += &self.visible_bias;
        Ok(match self.visible_type {
            VisibleType::Binary => input.mapv_into(sigmoid),
            VisibleType::Gaussian => input,
        })
    }

    /// `-log Σ_h exp(-E(x, h))` in closed form.
    pub fn free_energy(&self, visible: ArrayView1<f64>) -> Result<f64> {
        let input = self.hidden_input(visible)?;
        Ok(self.visible_energy_term(visible) - input.iter().map(|&t| softplus(t)).sum::<f64>())
    }

    pub fn free_energy_batch(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_len("batch columns", self.num_visible(), batch.ncols())?;
        let mut input = batch.dot(&self.weights);
        input += &self.hidden_bias;
        Ok(Array1::from_iter(
            batch.outer_iter().zip(input.outer_iter()).map(|(x, t)| {
                self.visible_energy_term(x) - t.iter().map(|&v| softplus(v)).sum::<f64>()
            }),
        ))
    }

    fn visible_energy_term(&self, visible: ArrayView1<f64>) -> f64 {
        match self.visible_type {
            VisibleType::Binary => -visible.dot(&self.visible_bias),
            VisibleType::Gaussian => {
                0.5 * visible
                    .iter()
                    .zip(self.visible_bias.iter())
                    .map(|(x, b)| (x - b) * (x - b))
                    .sum::<f64>()
            }
        }
    }

    /// Draws visible states given their conditional means.
    pub fn sample_visible<R: Rng + ?Sized>(&self, means: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        match self.visible_type {
            VisibleType::Binary => sample_bernoulli(means, rng),
            VisibleType::Gaussian => {
                let noise: Vec<f64> = means
                    .iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + z
                    })
                    .collect();
                Array2::from_shape_vec(means.raw_dim(), noise).expect("shape preserved")
            }
        }
    }
}

/// Elementwise Bernoulli draws in row-major order.
pub fn sample_bernoulli<R: Rng + ?Sized>(probs: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    let draws: Vec<f64> = probs
        .iter()
        .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    Array2::from_shape_vec(probs.raw_dim(), draws).expect("shape preserved")
}

pub fn sample_bernoulli_vec<R: Rng + ?Sized>(probs: &Array1<f64>, rng: &mut R) -> Array1<f64> {
    probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

/// One point of an alternating Gibbs chain.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub visible: Array1<f64>,
    pub hidden: Array1<f64>,
    pub hidden_probs: Array1<f64>,
}

impl GibbsState {
    pub fn from_visible(params: &RbmParams, visible: Array1<f64>) -> Result<Self> {
        let hidden_probs = params.hidden_probabilities(visible.view())?;
        Ok(GibbsState {
            visible,
            hidden: Array1::zeros(params.num_hidden()),
            hidden_probs,
        })
    }
}

/// Samples `h ~ P(h | x)` then `x' ~ P(x | h)`.
pub fn gibbs_step<R: Rng + ?Sized>(
    params: &RbmParams,
    state: &GibbsState,
    rng: &mut R,
) -> Result<GibbsState> {
    let hidden_probs = params.hidden_probabilities(state.visible.view())?;
    let hidden = sample_bernoulli_vec(&hidden_probs, rng);
    let means = params.visible_probabilities(hidden.view())?;
    let means = means.insert_axis(Axis(0));
    let visible = params.sample_visible(&means, rng).remove_axis(Axis(0));
    Ok(GibbsState {
        visible,
        hidden,
        hidden_probs,
    })
}

/// Expected sufficient statistics `<x hᵀ>`, `<x>`, `<h>` under some distribution.
///
/// For Gaussian visibles the visible-bias statistic is `<x - b>`; since the
/// bias cancels in any data-minus-model difference, `<x>` is stored instead.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStatistics {
    pub weights: Array2<f64>,
    pub visible: Array1<f64>,
    pub hidden: Array1<f64>,
}

impl SufficientStatistics {
    /// Averages `xᵀ p` over rows of paired visible/hidden-probability matrices.
    pub fn from_batch(visible: ArrayView2<f64>, hidden_probs: ArrayView2<f64>) -> Self {
        let n = visible.nrows().max(1) as f64;
        SufficientStatistics {
            weights: visible.t().dot(&hidden_probs) / n,
            visible: visible.sum_axis(Axis(0)) / n,
            hidden: hidden_probs.sum_axis(Axis(0)) / n,
        }
    }
}

/// Data-dependent statistics with hidden units marginalized analytically.
pub fn data_statistics(params: &RbmParams, batch: ArrayView2<f64>) -> Result<SufficientStatistics> {
    let probs = params.hidden_probabilities_batch(batch)?;
    Ok(SufficientStatistics::from_batch(batch, probs.view()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub d_weights: Array2<f64>,
    pub d_visible_bias: Array1<f64>,
    pub d_hidden_bias: Array1<f64>,
    pub batch_size: usize,
}

impl GradientEstimate {
    pub fn zeros_like(params: &RbmParams, batch_size: usize) -> Self {
        GradientEstimate {
            d_weights: Array2::zeros(params.weights.raw_dim()),
            d_visible_bias: Array1::zeros(params.num_visible()),
            d_hidden_bias: Array1::zeros(params.num_hidden()),
            batch_size,
        }
    }

    /// `positive - negative`, the log-likelihood ascent direction.
    pub fn from_statistics(
        positive: &SufficientStatistics,
        negative: &SufficientStatistics,
        batch_size: usize,
    ) -> Self {
        GradientEstimate {
            d_weights: &positive.weights - &negative.weights,
            d_visible_bias: &positive.visible - &negative.visible,
            d_hidden_bias: &positive.hidden - &negative.hidden,
            batch_size,
        }
    }

    pub fn check_shape(&self, params: &RbmParams) -> Result<()> {
        check_len(
            "gradient rows",
            params.num_visible(),
            self.d_weights.nrows(),
        )?;
        check_len(
            "gradient columns",
            params.num_hidden(),
            self.d_weights.ncols(),
        )?;
        check_len(
            "gradient visible bias",
            params.num_visible(),
            self.d_visible_bias.len(),
        )?;
        check_len(
            "gradient hidden bias",
            params.num_hidden(),
            self.d_hidden_bias.len(),
        )
    }

    pub fn subtract(&mut self, other: &GradientEstimate) {
        self.d_weights -= &other.d_weights;
        self.d_visible_bias -= &other.d_visible_bias;
        self.d_hidden_bias -= &other.d_hidden_bias;
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|v| v.is_finite())
            && self.d_visible_bias.iter().all(|v| v.is_finite())
            && self.d_hidden_bias.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &GradientEstimate) -> f64 {
        let w = self
            .d_weights
            .iter()
            .zip(other.d_weights.iter())
            .map(|(a, b)| (a - b).abs());
        let b = self
            .d_visible_bias
            .iter()
            .zip(other.d_visible_bias.iter())
            .map(|(a, b)| (a - b).abs());
        let c = self
            .d_hidden_bias
            .iter()
            .zip(other.d_hidden_bias.iter())
            .map(|(a, b)| (a - b).abs());
        w.chain(b).chain(c).fold(0.0, f64::max)
    }
}

/// Intermediate quantities of one CD-k pass over a batch.
#[derive(Clone, Debug)]
pub struct CdPhases {
    pub positive_probs: Array2<f64>,
    pub negative_visible: Array2<f64>,
    pub negative_probs: Array2<f64>,
    /// Conditional visible means from the last reconstruction step.
    pub reconstruction_means: Array2<f64>,
}

impl CdPhases {
    pub fn gradient(&self, batch: ArrayView2<f64>) -> GradientEstimate {
        let positive = SufficientStatistics::from_batch(batch, self.positive_probs.view());
        let negative = SufficientStatistics::from_batch(
            self.negative_visible.view(),
            self.negative_probs.view(),
        );
        GradientEstimate::from_statistics(&positive, &negative, batch.nrows())
    }

    /// Mean over the batch of `Σ_i (x_i - x̂_i)²`.
    pub fn reconstruction_error(&self, batch: ArrayView2<f64>) -> f64 {
        let diff = &batch - &self.reconstruction_means;
        diff.mapv(|d| d * d).sum() / batch.nrows().max(1) as f64
    }
}

/// Runs the k-step chain started at the data. The final hidden pass keeps
/// probabilities rather than samples.
pub fn cd_phases<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut R,
) -> Result<CdPhases> {
    if k < 1 {
        return Err(Error::Parameter(
            "CD step count k must be at least 1".into(),
        ));
    }
    if batch.nrows() == 0 {
        return Err(Error::Parameter("empty batch".into()));
    }
    let positive_probs = params.hidden_probabilities_batch(batch)?;
    let mut hidden = sample_bernoulli(&positive_probs, rng);
    let mut step = 1;
    loop {
        let means = params.visible_means_batch(hidden.view())?;
        let visible = params.sample_visible(&means, rng);
        let probs = params.hidden_probabilities_batch(visible.view())?;
        if step == k {
            return Ok(CdPhases {
                positive_probs,
                negative_visible: visible,
                negative_probs: probs,
                reconstruction_means: means,
            });
        }
        hidden = sample_bernoulli(&probs, rng);
        step += 1;
    }
}

/// Contrastive-divergence estimate of the average log-likelihood gradient.
pub fn cd_gradient<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    Ok(cd_phases(params, batch, k, rng)?.gradient(batch))
}
