use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::rbm::RbmParams;
use crate::regularizer::{group_norms, Grouping};

/// Hoyer's measure `(√D − ‖v‖₁/‖v‖₂) / (√D − 1)`: 1 for a one-hot vector,
/// 0 for a constant one.
pub fn hoyer_sparseness(v: ArrayView1<f64>) -> Result<f64> {
    let d = v.len();
    if d < 2 {
        return Err(Error::Undefined(format!(
            "sparseness needs at least two dimensions, got {d}"
        )));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.dot(&v).sqrt();
    if l2 == 0.0 {
        return Err(Error::Undefined("sparseness of an all-zero vector".into()));
    }
    let root = (d as f64).sqrt();
    Ok(((root - l1 / l2) / (root - 1.0)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsenessReport {
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Mean sparseness of the group-norm vectors, when a grouping was given.
    pub group_mean: Option<f64>,
}

impl SparsenessReport {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("no sparseness values".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(SparsenessReport {
            values,
            min,
            max,
            mean,
            group_mean: None,
        })
    }
}

/// Hoyer sparseness of each example's hidden-probability vector.
pub fn representation_sparseness(
    params: &RbmParams,
    data: ArrayView2<f64>,
    grouping: Option<&Grouping>,
) -> Result<SparsenessReport> {
    let probs = params.hidden_probabilities_batch(data)?;
    let values = probs
        .outer_iter()
        .map(hoyer_sparseness)
        .collect::<Result<Vec<_>>>()?;
    let mut report = SparsenessReport::from_values(values)?;
    if let Some(g) = grouping {
        if g.num_groups() >= 2 {
            let mut total = 0.0;
            for row in probs.outer_iter() {
                total += hoyer_sparseness(group_norms(row, g)?.view())?;
            }
            report.group_mean = Some(total / probs.nrows() as f64);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::VisibleType;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn reference_values() {
        assert_eq!(
            hoyer_sparseness(array![0.0, 0.0, 3.0, 0.0].view()).unwrap(),
            1.0
        );
        assert!(
            hoyer_sparseness(array![0.7, 0.7, 0.7].view())
                .unwrap()
                .abs()
                < 1e-12
        );
        let half = hoyer_sparseness(array![1.0, 1.0, 0.0, 0.0].view()).unwrap();
        assert!((half - (2.0 - 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn undefined_inputs_are_errors() {
        assert!(matches!(
            hoyer_sparseness(array![0.0, 0.0].view()),
            Err(Error::Undefined(_))
        ));
        assert!(matches!(
            hoyer_sparseness(array![4.0].view()),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn zero_model_has_zero_sparseness() {
        let p = RbmParams::zeros(4, 6, VisibleType::Binary);
        let data = Array2::from_elem((5, 4), 1.0);
        let r = representation_sparseness(&p, data.view(), None).unwrap();
        assert!(r.mean.abs() < 1e-12 && r.max.abs() < 1e-12);
    }

    #[test]
    fn one_active_unit_per_example() {
        // unit j fires only for input j; every other unit is driven far off
        let mut p = RbmParams::zeros(3, 3, VisibleType::Binary);
        p.weights = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 800.0 } else { 0.0 });
        p.hidden_bias = Array1::from_elem(3, -400.0);
        let data = Array2::from_shape_fn((3, 3), |(l, i)| if l == i { 1.0 } else { 0.0 });
        let g = Grouping::uniform(3, 1).unwrap();
        let r = representation_sparseness(&p, data.view(), Some(&g)).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.group_mean, Some(1.0));
    }
}
