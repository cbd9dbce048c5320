//! Mixed-norm (l1/l2) penalty on hidden activation probabilities.
//!
//! Hidden units are partitioned into non-overlapping groups `G_k`. For one
//! input `x` the group norm is `N_k = sqrt(Σ_{m∈G_k} P(h_m=1|x)²)` and the
//! penalty is `Σ_k N_k`. Its derivative through `P_j = sigmoid(xᵀw_j + c_j)`
//! gives the per-unit coefficient
//!
//! ```text
//! a_j = λ · P_j² (1 − P_j) / max(N_k, ε)
//! ```
//!
//! which is subtracted from the data term of the CD update: `a_j · x` for the
//! weight column and `a_j` for the hidden bias. The negative phase is left
//! untouched.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::rbm::{cd_phases, GradientEstimate, RbmParams};

/// Group sizes above this tend to let the regularizer go slack.
pub const RECOMMENDED_MAX_GROUP_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl Grouping {
    /// Contiguous blocks of `group_size`; the last block may be smaller.
    pub fn uniform(num_hidden: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::Config("group size must be at least 1".into()));
        }
        if num_hidden == 0 {
            return Err(Error::Config("cannot group zero hidden units".into()));
        }
        if group_size > RECOMMENDED_MAX_GROUP_SIZE {
            log::warn!(
                "group size {group_size} exceeds the recommended bound of {RECOMMENDED_MAX_GROUP_SIZE}"
            );
        }
        if num_hidden % group_size != 0 {
            log::warn!(
                "{num_hidden} hidden units do not divide into groups of {group_size}; last group has {} units",
                num_hidden % group_size
            );
        }
        Self::from_assignment((0..num_hidden).map(|j| j / group_size).collect())
    }

    /// Builds a grouping from a hidden-index → group-id map. Ids must cover
    /// `0..K` with no empty group.
    pub fn from_assignment(group_of: Vec<usize>) -> Result<Self> {
        if group_of.is_empty() {
            return Err(Error::Config("grouping over zero hidden units".into()));
        }
        let num_groups = group_of.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); num_groups];
        for (j, &k) in group_of.iter().enumerate() {
            groups[k].push(j);
        }
        if let Some(k) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("group {k} has no members")));
        }
        Ok(Grouping { group_of, groups })
    }

    pub fn from_groups(num_hidden: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut group_of = vec![usize::MAX; num_hidden];
        for (k, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Config(format!("group {k} has no members")));
            }
            for &j in members {
                if j >= num_hidden {
                    return Err(Error::Config(format!(
                        "hidden index {j} out of range in group {k}"
                    )));
                }
                if group_of[j] != usize::MAX {
                    return Err(Error::Config(format!(
                        "hidden unit {j} belongs to groups {} and {k}",
                        group_of[j]
                    )));
                }
                group_of[j] = k;
            }
        }
        if let Some(j) = group_of.iter().position(|&k| k == usize::MAX) {
            return Err(Error::Config(format!(
                "hidden unit {j} is not in any group"
            )));
        }
        Ok(Grouping { group_of, groups })
    }

    pub fn num_hidden(&self) -> usize {
        self.group_of.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, hidden: usize) -> usize {
        self.group_of[hidden]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.group_of
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularizerKind {
    None,
    SparseGroup,
    SparseRbmBaseline,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::SparseGroup => "sparse_group",
            RegularizerKind::SparseRbmBaseline => "sparse_rbm_baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(RegularizerKind::None),
            "sparse_group" => Some(RegularizerKind::SparseGroup),
            "sparse_rbm_baseline" => Some(RegularizerKind::SparseRbmBaseline),
            _ => None,
        }
    }
}

/// Target mean activation for the sparse-RBM baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineTarget {
    /// A probability in `(0, 1)`.
    Probability(f64),
    /// Expected number of active units; divided by the hidden-layer width.
    UnitCount(f64),
}

impl BaselineTarget {
    pub fn resolve(self, num_hidden: usize) -> f64 {
        match self {
            BaselineTarget::Probability(p) => p,
            BaselineTarget::UnitCount(n) => n / num_hidden as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub lambda: f64,
    pub group_size: usize,
    pub epsilon: f64,
    pub baseline_target: BaselineTarget,
    pub baseline_weight: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            kind: RegularizerKind::None,
            lambda: 0.1,
            group_size: 5,
            epsilon: 1e-8,
            baseline_target: BaselineTarget::UnitCount(50.0),
            baseline_weight: 0.02,
        }
    }
}

impl RegularizerConfig {
    pub fn sparse_group(lambda: f64, group_size: usize) -> Self {
        RegularizerConfig {
            kind: RegularizerKind::SparseGroup,
            lambda,
            group_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "regularizer.lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.group_size == 0 {
            return Err(Error::Config(
                "regularizer.group_size must be at least 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "regularizer.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.baseline_weight >= 0.0 && self.baseline_weight.is_finite()) {
            return Err(Error::Config(format!(
                "regularizer.baseline_weight must be non-negative, got {}",
                self.baseline_weight
            )));
        }
        Ok(())
    }
}

pub fn group_norms(probs: ArrayView1<f64>, grouping: &Grouping) -> Result<Array1<f64>> {
    check_len("group norms", grouping.num_hidden(), probs.len())?;
    Ok(grouping
        .groups()
        .iter()
        .map(|members| {
            members
                .iter()
                .map(|&m| probs[m] * probs[m])
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Row-wise group norms, shape `(L, K)`.
pub fn group_norms_batch(probs: ArrayView2<f64>, grouping: &Grouping) -> Result<Array2<f64>> {
    check_len("group norms", grouping.num_hidden(), probs.ncols())?;
    let mut out = Array2::zeros((probs.nrows(), grouping.num_groups()));
    for (row, mut norms) in probs.outer_iter().zip(out.outer_iter_mut()) {
        for (k, members) in grouping.groups().iter().enumerate() {
            norms[k] = members.iter().map(|&m| row[m] * row[m]).sum::<f64>().sqrt();
        }
    }
    Ok(out)
}

/// `Σ_k N_k`.
pub fn mixed_norm_penalty(probs: ArrayView1<f64>, grouping: &Grouping) -> Result<f64> {
    Ok(group_norms(probs, grouping)?.sum())
}

/// Per-unit coefficients `λ P²(1−P) / max(N_k, ε)` for a batch of hidden
/// probabilities. Also returns the mean penalty `Σ_k N_k` over rows.
pub fn penalty_coefficients(
    probs: ArrayView2<f64>,
    grouping: &Grouping,
    lambda: f64,
    epsilon: f64,
) -> Result<(Array2<f64>, f64)> {
    let norms = group_norms_batch(probs, grouping)?;
    let mut coeffs = Array2::zeros(probs.raw_dim());
    for ((row, norm_row), mut out) in probs
        .outer_iter()
        .zip(norms.outer_iter())
        .zip(coeffs.outer_iter_mut())
    {
        for (j, &p) in row.iter().enumerate() {
            let n = norm_row[grouping.group_of(j)].max(epsilon);
            out[j] = lambda * p * p * (1.0 - p) / n;
        }
    }
    let mean_penalty = norms.sum() / probs.nrows().max(1) as f64;
    Ok((coeffs, mean_penalty))
}

fn correction_from_coefficients(batch: ArrayView2<f64>, coeffs: &Array2<f64>) -> GradientEstimate {
    let n = batch.nrows().max(1) as f64;
    GradientEstimate {
        d_weights: batch.t().dot(coeffs) / n,
        d_visible_bias: Array1::zeros(batch.ncols()),
        d_hidden_bias: coeffs.sum_axis(Axis(0)) / n,
        batch_size: batch.nrows(),
    }
}

fn require_sparse_group(config: &RegularizerConfig) -> Result<()> {
    if config.kind != RegularizerKind::SparseGroup {
        return Err(Error::Parameter(format!(
            "penalty gradient requested for regularizer kind {}",
            config.kind.as_str()
        )));
    }
    Ok(())
}

/// Penalty correction for a single input; to be subtracted from the
/// positive phase.
pub fn penalty_gradient(
    params: &RbmParams,
    visible: ArrayView1<f64>,
    grouping: &Grouping,
    config: &RegularizerConfig,
) -> Result<GradientEstimate> {
    penalty_gradient_batch(params, visible.insert_axis(Axis(0)), grouping, config)
}

/// Batch average of [`penalty_gradient`].
pub fn penalty_gradient_batch(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    grouping: &Grouping,
    config: &RegularizerConfig,
) -> Result<GradientEstimate> {
    require_sparse_group(config)?;
    check_len("grouping size", params.num_hidden(), grouping.num_hidden())?;
    let probs = params.hidden_probabilities_batch(batch)?;
    let (coeffs, _) = penalty_coefficients(probs.view(), grouping, config.lambda, config.epsilon)?;
    Ok(correction_from_coefficients(batch, &coeffs))
}

/// Gradient of `weight · Σ_j (p − mean_l P(h_j=1|x^(l)))²`; to be subtracted.
pub fn sparse_rbm_baseline_gradient(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    target: f64,
    weight: f64,
) -> Result<GradientEstimate> {
    let probs = params.hidden_probabilities_batch(batch)?;
    baseline_from_probs(batch, &probs, target, weight)
}

fn baseline_from_probs(
    batch: ArrayView2<f64>,
    probs: &Array2<f64>,
    target: f64,
    weight: f64,
) -> Result<GradientEstimate> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Parameter(format!(
            "sparse RBM target activation must lie in (0, 1), got {target}"
        )));
    }
    let n = batch.nrows().max(1) as f64;
    let mean = probs.sum_axis(Axis(0)) / n;
    // d/dθ of weight·(p − q_j)² = 2·weight·(q_j − p)·dq_j/dθ
    let scale = mean.mapv(|q| 2.0 * weight * (q - target));
    let mut local = probs.mapv(|p| p * (1.0 - p));
    local *= &scale;
    Ok(GradientEstimate {
        d_weights: batch.t().dot(&local) / n,
        d_visible_bias: Array1::zeros(batch.ncols()),
        d_hidden_bias: local.sum_axis(Axis(0)) / n,
        batch_size: batch.nrows(),
    })
}

/// Outcome of one (possibly regularized) CD step, with batch diagnostics.
#[derive(Clone, Debug)]
pub struct CdStep {
    pub gradient: GradientEstimate,
    pub reconstruction_error: f64,
    /// Mean of `Σ_k N_k` over the batch; zero when no grouping is supplied.
    pub mean_penalty: f64,
    pub mean_hidden_activation: f64,
}

/// CD-k with the configured regularizer applied to the data-dependent term.
pub fn regularized_cd_step<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    k: usize,
    grouping: Option<&Grouping>,
    config: &RegularizerConfig,
    rng: &mut R,
) -> Result<CdStep> {
    let phases = cd_phases(params, batch, k, rng)?;
    let mut gradient = phases.gradient(batch);
    let probs = &phases.positive_probs;
    let mut mean_penalty = 0.0;
    if let Some(g) = grouping {
        check_len("grouping size", params.num_hidden(), g.num_hidden())?;
    }
    match config.kind {
        RegularizerKind::None => {
            if let Some(g) = grouping {
                mean_penalty = penalty_coefficients(probs.view(), g, 0.0, config.epsilon)?.1;
            }
        }
        RegularizerKind::SparseGroup => {
            let g = grouping.ok_or_else(|| {
                Error::Config("sparse group regularizer requires a grouping".into())
            })?;
            let (coeffs, penalty) =
                penalty_coefficients(probs.view(), g, config.lambda, config.epsilon)?;
            mean_penalty = penalty;
            if config.lambda != 0.0 {
                gradient.subtract(&correction_from_coefficients(batch, &coeffs));
            }
        }
        RegularizerKind::SparseRbmBaseline => {
            if let Some(g) = grouping {
                mean_penalty = penalty_coefficients(probs.view(), g, 0.0, config.epsilon)?.1;
            }
            if config.baseline_weight != 0.0 {
                let target = config.baseline_target.resolve(params.num_hidden());
                gradient.subtract(&baseline_from_probs(
                    batch,
                    probs,
                    target,
                    config.baseline_weight,
                )?);
            }
        }
    }
    Ok(CdStep {
        reconstruction_error: phases.reconstruction_error(batch),
        mean_penalty,
        mean_hidden_activation: probs.mean().unwrap_or(0.0),
        gradient,
    })
}

pub fn regularized_cd_gradient<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    k: usize,
    grouping: Option<&Grouping>,
    config: &RegularizerConfig,
    rng: &mut R,
) -> Result<GradientEstimate> {
    Ok(regularized_cd_step(params, batch, k, grouping, config, rng)?.gradient)
}
