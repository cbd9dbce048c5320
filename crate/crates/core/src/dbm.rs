//! Two-layer deep Boltzmann machine with binary units.
//!
//! ```text
//! E(x, h¹, h²) = -xᵀW¹h¹ - (h¹)ᵀW²h² - bᵀx - c¹ᵀh¹ - c²ᵀh²
//! ```
//!
//! The data-dependent expectations use a damped mean-field fixed point; the
//! model expectations come from persistent Gibbs chains. The sparse-group
//! penalty is applied to the mean-field activations of both hidden layers,
//! treating each activation as the one-step sigmoid of its current input.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{minibatches, Dataset, DatasetMeta};
use crate::error::{check_len, Error, Result};
use crate::math::sigmoid;
use crate::optim::{momentum_step, TrainConfig, UpdateRule};
use crate::rbm::{sample_bernoulli, RbmParams, VisibleType};
use crate::regularizer::{penalty_coefficients, Grouping};
use crate::train::{epoch_seed, RbmTrainer};

#[derive(Clone, Debug, PartialEq)]
pub struct DbmParams {
    /// `(V, H1)`
    pub w1: Array2<f64>,
    /// `(H1, H2)`
    pub w2: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden1_bias: Array1<f64>,
    pub hidden2_bias: Array1<f64>,
}

impl DbmParams {
    pub fn zeros(num_visible: usize, num_hidden1: usize, num_hidden2: usize) -> Self {
        DbmParams {
            w1: Array2::zeros((num_visible, num_hidden1)),
            w2: Array2::zeros((num_hidden1, num_hidden2)),
            visible_bias: Array1::zeros(num_visible),
            hidden1_bias: Array1::zeros(num_hidden1),
            hidden2_bias: Array1::zeros(num_hidden2),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.visible_bias.len(),
            self.hidden1_bias.len(),
            self.hidden2_bias.len(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (v, h1, h2) = self.dims();
        check_len("W1 rows", v, self.w1.nrows())?;
        check_len("W1 columns", h1, self.w1.ncols())?;
        check_len("W2 rows", h1, self.w2.nrows())?;
        check_len("W2 columns", h2, self.w2.ncols())?;
        if !self.is_finite() {
            return Err(Error::Numerical("DBM parameters contain NaN or Inf".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.w2]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.visible_bias, &self.hidden1_bias, &self.hidden2_bias]
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn energy(
        &self,
        visible: ArrayView1<f64>,
        hidden1: ArrayView1<f64>,
        hidden2: ArrayView1<f64>,
    ) -> Result<f64> {
        let (v, h1, h2) = self.dims();
        check_len("energy visible", v, visible.len())?;
        check_len("energy hidden1", h1, hidden1.len())?;
        check_len("energy hidden2", h2, hidden2.len())?;
        Ok(-visible.dot(&self.w1.dot(&hidden1))
            - hidden1.dot(&self.w2.dot(&hidden2))
            - visible.dot(&self.visible_bias)
            - hidden1.dot(&self.hidden1_bias)
            - hidden2.dot(&self.hidden2_bias))
    }

    /// Composes two pretrained RBMs. Both weight matrices touching the middle
    /// layer are halved because that layer now receives input from both sides.
    pub fn from_rbms(lower: &RbmParams, upper: &RbmParams) -> Result<Self> {
        check_len(
            "stacked RBM widths",
            lower.num_hidden(),
            upper.num_visible(),
        )?;
        let params = DbmParams {
            w1: &lower.weights * 0.5,
            w2: &upper.weights * 0.5,
            visible_bias: lower.visible_bias.clone(),
            hidden1_bias: (&lower.hidden_bias + &upper.visible_bias) * 0.5,
            hidden2_bias: upper.hidden_bias.clone(),
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanFieldConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            tolerance: 1e-6,
            max_iters: 50,
            damping: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldState {
    pub mu1: Array1<f64>,
    pub mu2: Array1<f64>,
    /// Number of fixed-point evaluations performed.
    pub iterations_used: usize,
    pub converged: bool,
    /// `max |f(μ) − μ|` of the returned state.
    pub residual: f64,
}

fn layer1_targets(params: &DbmParams, bottom_up: &Array1<f64>, mu2: &Array1<f64>) -> Array1<f64> {
    let input = bottom_up + &params.w2.dot(mu2) + &params.hidden1_bias;
    input.mapv_into(sigmoid)
}

fn layer2_targets(params: &DbmParams, mu1: &Array1<f64>) -> Array1<f64> {
    (mu1.dot(&params.w2) + &params.hidden2_bias).mapv_into(sigmoid)
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Residual of the mean-field equations at `(mu1, mu2)`.
pub fn mean_field_residual(
    params: &DbmParams,
    visible: ArrayView1<f64>,
    mu1: &Array1<f64>,
    mu2: &Array1<f64>,
) -> Result<f64> {
    check_len(
        "mean-field visible",
        params.visible_bias.len(),
        visible.len(),
    )?;
    let bottom_up = visible.dot(&params.w1);
    let t1 = layer1_targets(params, &bottom_up, mu2);
    let t2 = layer2_targets(params, mu1);
    Ok(max_abs_diff(&t1, mu1).max(max_abs_diff(&t2, mu2)))
}

/// Damped fixed-point iteration for `q(h¹) q(h²)`, started from the
/// bottom-up pass `μ¹ = σ(xᵀW¹ + c¹)`, `μ² = σ(μ¹ᵀW² + c²)`.
///
/// Each iteration first evaluates the residual at the current state and stops
/// if it is within tolerance, so a converged state satisfies its own
/// equations to `tolerance`.
pub fn mean_field(
    params: &DbmParams,
    visible: ArrayView1<f64>,
    config: &MeanFieldConfig,
) -> Result<MeanFieldState> {
    if !(config.tolerance > 0.0) {
        return Err(Error::Parameter(
            "mean-field tolerance must be positive".into(),
        ));
    }
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::Parameter(
            "mean-field damping must lie in (0, 1]".into(),
        ));
    }
    check_len(
        "mean-field visible",
        params.visible_bias.len(),
        visible.len(),
    )?;
    let bottom_up = visible.dot(&params.w1);
    let mut mu1 = (&bottom_up + &params.hidden1_bias).mapv_into(sigmoid);
    let mut mu2 = layer2_targets(params, &mu1);
    let d = config.damping;
    let mut residual = f64::INFINITY;
    for iteration in 1..=config.max_iters.max(1) {
        let t1 = layer1_targets(params, &bottom_up, &mu2);
        let t2 = layer2_targets(params, &mu1);
        residual = max_abs_diff(&t1, &mu1).max(max_abs_diff(&t2, &mu2));
        if residual <= config.tolerance {
            return Ok(MeanFieldState {
                mu1,
                mu2,
                iterations_used: iteration,
                converged: true,
                residual,
            });
        }
        mu1.zip_mut_with(&t1, |m, &t| *m += d * (t - *m));
        let t2 = layer2_targets(params, &mu1);
        mu2.zip_mut_with(&t2, |m, &t| *m += d * (t - *m));
    }
    Ok(MeanFieldState {
        mu1,
        mu2,
        iterations_used: config.max_iters.max(1),
        converged: false,
        residual,
    })
}

/// [`mean_field`] with damping 0.5.
pub fn mean_field_posterior(
    params: &DbmParams,
    visible: ArrayView1<f64>,
    tolerance: f64,
    max_iters: usize,
) -> Result<MeanFieldState> {
    mean_field(
        params,
        visible,
        &MeanFieldConfig {
            tolerance,
            max_iters,
            damping: 0.5,
        },
    )
}

/// Mean-field activations for every row. Returns `(μ¹, μ², converged rows)`.
pub fn mean_field_batch(
    params: &DbmParams,
    batch: ArrayView2<f64>,
    config: &MeanFieldConfig,
) -> Result<(Array2<f64>, Array2<f64>, usize)> {
    let (_, h1, h2) = params.dims();
    let mut mu1 = Array2::zeros((batch.nrows(), h1));
    let mut mu2 = Array2::zeros((batch.nrows(), h2));
    let mut converged = 0;
    for (l, x) in batch.outer_iter().enumerate() {
        let state = mean_field(params, x, config)?;
        mu1.row_mut(l).assign(&state.mu1);
        mu2.row_mut(l).assign(&state.mu2);
        converged += state.converged as usize;
    }
    Ok((mu1, mu2, converged))
}

/// Persistent chains `(x, h¹, h²)` used for the model expectation.
#[derive(Clone, Debug, PartialEq)]
pub struct FantasyParticles {
    pub visible: Array2<f64>,
    pub hidden1: Array2<f64>,
    pub hidden2: Array2<f64>,
}

impl FantasyParticles {
    /// Uniform random binary states.
    pub fn random<R: Rng + ?Sized>(params: &DbmParams, count: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(Error::Parameter(
                "need at least one fantasy particle".into(),
            ));
        }
        let (v, h1, h2) = params.dims();
        Ok(FantasyParticles {
            visible: sample_bernoulli(&Array2::from_elem((count, v), 0.5), rng),
            hidden1: sample_bernoulli(&Array2::from_elem((count, h1), 0.5), rng),
            hidden2: sample_bernoulli(&Array2::from_elem((count, h2), 0.5), rng),
        })
    }

    pub fn len(&self) -> usize {
        self.visible.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.nrows() == 0
    }

    /// One sweep: `h¹ | x, h²`, then `x | h¹` and `h² | h¹`.
    pub fn advance<R: Rng + ?Sized>(&mut self, params: &DbmParams, rng: &mut R) {
        let mut input1 = self.visible.dot(&params.w1);
        input1 += &self.hidden2.dot(&params.w2.t());
        input1 += &params.hidden1_bias;
        self.hidden1 = sample_bernoulli(&input1.mapv_into(sigmoid), rng);
        let mut input_v = self.hidden1.dot(&params.w1.t());
        input_v += &params.visible_bias;
        self.visible = sample_bernoulli(&input_v.mapv_into(sigmoid), rng);
        let mut input2 = self.hidden1.dot(&params.w2);
        input2 += &params.hidden2_bias;
        self.hidden2 = sample_bernoulli(&input2.mapv_into(sigmoid), rng);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbmGradient {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden1_bias: Array1<f64>,
    pub hidden2_bias: Array1<f64>,
}

impl DbmGradient {
    fn zeros_like(params: &DbmParams) -> Self {
        DbmGradient {
            w1: Array2::zeros(params.w1.raw_dim()),
            w2: Array2::zeros(params.w2.raw_dim()),
            visible_bias: Array1::zeros(params.visible_bias.len()),
            hidden1_bias: Array1::zeros(params.hidden1_bias.len()),
            hidden2_bias: Array1::zeros(params.hidden2_bias.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbmTrainConfig {
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_epoch: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub num_particles: usize,
    /// Penalty weight on the first hidden layer.
    pub lambda1: f64,
    /// Penalty weight on the second hidden layer.
    pub lambda2: f64,
    pub group_size1: usize,
    pub group_size2: usize,
    pub epsilon: f64,
    pub mean_field: MeanFieldConfig,
}

impl Default for DbmTrainConfig {
    fn default() -> Self {
        DbmTrainConfig {
            learning_rate: 0.01,
            initial_momentum: 0.5,
            final_momentum: 0.9,
            momentum_switch_epoch: 5,
            weight_decay: 2e-4,
            batch_size: 100,
            epochs: 10,
            num_particles: 100,
            lambda1: 0.1,
            lambda2: 0.1,
            group_size1: 10,
            group_size2: 10,
            epsilon: 1e-8,
            mean_field: MeanFieldConfig::default(),
        }
    }
}

impl DbmTrainConfig {
    pub fn update_rule(&self, epoch: usize) -> UpdateRule {
        UpdateRule {
            learning_rate: self.learning_rate,
            momentum: if epoch < self.momentum_switch_epoch {
                self.initial_momentum
            } else {
                self.final_momentum
            },
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("dbm learning rate must be positive".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(
                "dbm penalty weights must be non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.num_particles == 0 {
            return Err(Error::Config(
                "dbm batch size and particle count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient plus batch diagnostics for one DBM update.
#[derive(Clone, Debug)]
pub struct DbmStep {
    pub gradient: DbmGradient,
    pub mean_penalty1: f64,
    pub mean_penalty2: f64,
    pub converged_rows: usize,
}

/// Stochastic-approximation gradient. Advances `particles` by one sweep.
pub fn dbm_gradient<R: Rng + ?Sized>(
    params: &DbmParams,
    batch: ArrayView2<f64>,
    particles: &mut FantasyParticles,
    grouping1: &Grouping,
    grouping2: &Grouping,
    config: &DbmTrainConfig,
    rng: &mut R,
) -> Result<DbmStep> {
    let (v, h1, h2) = params.dims();
    check_len("batch columns", v, batch.ncols())?;
    check_len("grouping1 size", h1, grouping1.num_hidden())?;
    check_len("grouping2 size", h2, grouping2.num_hidden())?;
    if batch.nrows() == 0 {
        return Err(Error::Parameter("empty batch".into()));
    }
    let n = batch.nrows() as f64;
    let (mu1, mu2, converged_rows) = mean_field_batch(params, batch, &config.mean_field)?;

    particles.advance(params, rng);
    let m = particles.len() as f64;

    let mut grad = DbmGradient::zeros_like(params);
    grad.w1 = batch.t().dot(&mu1) / n - particles.visible.t().dot(&particles.hidden1) / m;
    grad.w2 = mu1.t().dot(&mu2) / n - particles.hidden1.t().dot(&particles.hidden2) / m;
    grad.visible_bias = batch.sum_axis(Axis(0)) / n - particles.visible.sum_axis(Axis(0)) / m;
    grad.hidden1_bias = mu1.sum_axis(Axis(0)) / n - particles.hidden1.sum_axis(Axis(0)) / m;
    grad.hidden2_bias = mu2.sum_axis(Axis(0)) / n - particles.hidden2.sum_axis(Axis(0)) / m;

    let (coeffs1, mean_penalty1) =
        penalty_coefficients(mu1.view(), grouping1, config.lambda1, config.epsilon)?;
    if config.lambda1 != 0.0 {
        grad.w1 -= &(batch.t().dot(&coeffs1) / n);
        grad.hidden1_bias -= &(coeffs1.sum_axis(Axis(0)) / n);
    }
    let (coeffs2, mean_penalty2) =
        penalty_coefficients(mu2.view(), grouping2, config.lambda2, config.epsilon)?;
    if config.lambda2 != 0.0 {
        grad.w2 -= &(mu1.t().dot(&coeffs2) / n);
        grad.hidden2_bias -= &(coeffs2.sum_axis(Axis(0)) / n);
    }
    Ok(DbmStep {
        gradient: grad,
        mean_penalty1,
        mean_penalty2,
        converged_rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbmMomentum {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden1_bias: Array1<f64>,
    pub hidden2_bias: Array1<f64>,
}

impl DbmMomentum {
    pub fn zeros_like(params: &DbmParams) -> Self {
        let g = DbmGradient::zeros_like(params);
        DbmMomentum {
            w1: g.w1,
            w2: g.w2,
            visible_bias: g.visible_bias,
            hidden1_bias: g.hidden1_bias,
            hidden2_bias: g.hidden2_bias,
        }
    }
}

/// Momentum SGD step; leaves `params` and `momentum` untouched on failure.
pub fn apply_dbm_update(
    params: &DbmParams,
    grad: &DbmGradient,
    momentum: &mut DbmMomentum,
    rule: &UpdateRule,
) -> Result<DbmParams> {
    let (w1, vw1) = momentum_step("W1", &params.w1, &momentum.w1, &grad.w1, rule, true)?;
    let (w2, vw2) = momentum_step("W2", &params.w2, &momentum.w2, &grad.w2, rule, true)?;
    let (b, vb) = momentum_step(
        "b",
        &params.visible_bias,
        &momentum.visible_bias,
        &grad.visible_bias,
        rule,
        false,
    )?;
    let (c1, vc1) = momentum_step(
        "c1",
        &params.hidden1_bias,
        &momentum.hidden1_bias,
        &grad.hidden1_bias,
        rule,
        false,
    )?;
    let (c2, vc2) = momentum_step(
        "c2",
        &params.hidden2_bias,
        &momentum.hidden2_bias,
        &grad.hidden2_bias,
        rule,
        false,
    )?;
    *momentum = DbmMomentum {
        w1: vw1,
        w2: vw2,
        visible_bias: vb,
        hidden1_bias: vc1,
        hidden2_bias: vc2,
    };
    Ok(DbmParams {
        w1,
        w2,
        visible_bias: b,
        hidden1_bias: c1,
        hidden2_bias: c2,
    })
}

/// One regularized update. Returns the new parameters and advanced chains.
#[allow(clippy::too_many_arguments)]
pub fn dbm_train_step<R: Rng + ?Sized>(
    params: &DbmParams,
    batch: ArrayView2<f64>,
    particles: &FantasyParticles,
    grouping1: &Grouping,
    grouping2: &Grouping,
    config: &DbmTrainConfig,
    momentum: &mut DbmMomentum,
    rule: &UpdateRule,
    rng: &mut R,
) -> Result<(DbmParams, FantasyParticles, DbmStep)> {
    let mut next = particles.clone();
    let step = dbm_gradient(params, batch, &mut next, grouping1, grouping2, config, rng)?;
    let updated = apply_dbm_update(params, &step.gradient, momentum, rule)?;
    Ok((updated, next, step))
}

#[derive(Clone, Debug)]
pub struct DbmTrainer {
    pub params: DbmParams,
    pub momentum: DbmMomentum,
    pub particles: FantasyParticles,
    pub grouping1: Grouping,
    pub grouping2: Grouping,
    pub config: DbmTrainConfig,
    pub epoch: usize,
    pub seed: u64,
    pub rng: ChaCha8Rng,
}

/// Per-batch DBM diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbmBatchStats {
    pub epoch: usize,
    pub batch: usize,
    pub mean_penalty1: f64,
    pub mean_penalty2: f64,
    pub mean_hidden1_activation: f64,
    pub converged_fraction: f64,
}

impl DbmTrainer {
    pub fn new(params: DbmParams, config: DbmTrainConfig, seed: u64) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = FantasyParticles::random(&params, config.num_particles, &mut rng)?;
        let (_, h1, h2) = params.dims();
        Ok(DbmTrainer {
            momentum: DbmMomentum::zeros_like(&params),
            grouping1: Grouping::uniform(h1, config.group_size1)?,
            grouping2: Grouping::uniform(h2, config.group_size2)?,
            particles,
            params,
            config,
            epoch: 0,
            seed,
            rng,
        })
    }

    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        mut on_batch: impl FnMut(&DbmBatchStats),
    ) -> Result<()> {
        let rule = self.config.update_rule(self.epoch);
        let batches = minibatches(
            data,
            self.config.batch_size,
            epoch_seed(self.seed, self.epoch),
        )?;
        for (index, batch) in batches.enumerate() {
            let (params, particles, step) = dbm_train_step(
                &self.params,
                batch.view(),
                &self.particles,
                &self.grouping1,
                &self.grouping2,
                &self.config,
                &mut self.momentum,
                &rule,
                &mut self.rng,
            )?;
            self.params = params;
            self.particles = particles;
            on_batch(&DbmBatchStats {
                epoch: self.epoch,
                batch: index,
                mean_penalty1: step.mean_penalty1,
                mean_penalty2: step.mean_penalty2,
                mean_hidden1_activation: self.particles.hidden1.mean().unwrap_or(0.0),
                converged_fraction: step.converged_rows as f64 / batch.nrows() as f64,
            });
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn train(&mut self, data: &Dataset) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch(data, |_| {})?;
        }
        Ok(())
    }
}

/// Layer-2 training data: hidden probabilities of the trained layer-1 RBM.
pub fn hidden_representation(rbm: &RbmParams, data: &Dataset) -> Result<Dataset> {
    let items = rbm.hidden_probabilities_batch(data.items.view())?;
    let mut preprocessing = data.meta.preprocessing.clone();
    preprocessing.push(format!("rbm_hidden_probabilities({})", rbm.num_hidden()));
    Dataset::new(
        items,
        data.labels.clone(),
        DatasetMeta {
            source: data.meta.source.clone(),
            image_shape: None,
            preprocessing,
        },
    )
}

/// Greedy layerwise pretraining of two sparse group RBMs, composed into a DBM.
/// Layer 1 uses `seed`, layer 2 uses `seed + 1`.
pub fn greedy_pretrain(
    data: &Dataset,
    sizes: (usize, usize),
    config: &TrainConfig,
    seed: u64,
) -> Result<DbmParams> {
    let mut lower = RbmTrainer::new(data, sizes.0, VisibleType::Binary, config.clone(), seed)?;
    lower.train(data)?;
    let layer2_data = hidden_representation(&lower.params, data)?;
    let mut upper = RbmTrainer::new(
        &layer2_data,
        sizes.1,
        VisibleType::Binary,
        config.clone(),
        seed.wrapping_add(1),
    )?;
    upper.train(&layer2_data)?;
    DbmParams::from_rbms(&lower.params, &upper.params)
}
