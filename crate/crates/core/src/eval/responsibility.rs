use ndarray::{Array1, ArrayView1};

use crate::error::{check_len, Error, Result};
use crate::math::{softmax, softplus};
use crate::rbm::RbmParams;

/// Unnormalized log responsibilities `Σ_j softplus(xᵀw^k_j + c^k_j) / T`,
/// i.e. `log Π_j 1/(1 − P(h^k_j = 1 | x))` scaled by the temperature.
pub fn responsibility_logits(
    components: &[RbmParams],
    visible: ArrayView1<f64>,
    temperature: f64,
) -> Result<Array1<f64>> {
    if components.is_empty() {
        return Err(Error::Parameter("need at least one component".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let v = components[0].num_visible();
    let mut logits = Array1::zeros(components.len());
    for (k, c) in components.iter().enumerate() {
        check_len("component visible dimension", v, c.num_visible())?;
        logits[k] = c
            .hidden_input(visible)?
            .iter()
            .map(|&t| softplus(t))
            .sum::<f64>()
            / temperature;
    }
    Ok(logits)
}

/// `P(z_k = 1 | x)` for a mixture of component RBMs.
pub fn third_order_responsibility(
    components: &[RbmParams],
    visible: ArrayView1<f64>,
    temperature: f64,
) -> Result<Array1<f64>> {
    Ok(softmax(
        responsibility_logits(components, visible, temperature)?.view(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::VisibleType;
    use ndarray::array;

    #[test]
    fn identical_components_share_evenly() {
        let c = RbmParams::new(
            array![[0.5, -1.0], [2.0, 0.1]],
            array![0.0, 0.0],
            array![0.2, -0.3],
            VisibleType::Binary,
        )
        .unwrap();
        let r =
            third_order_responsibility(&[c.clone(), c.clone(), c], array![1.0, 0.0].view(), 1.0)
                .unwrap();
        for v in r.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_empty_and_bad_temperature() {
        assert!(third_order_responsibility(&[], array![1.0].view(), 1.0).is_err());
        let c = RbmParams::zeros(1, 1, VisibleType::Binary);
        assert!(third_order_responsibility(&[c.clone()], array![1.0].view(), 0.0).is_err());
        let d = RbmParams::zeros(2, 1, VisibleType::Binary);
        assert!(third_order_responsibility(&[c, d], array![1.0].view(), 1.0).is_err());
    }

    #[test]
    fn high_temperature_flattens() {
        let a =
            RbmParams::new(array![[3.0]], array![0.0], array![0.0], VisibleType::Binary).unwrap();
        let b = RbmParams::zeros(1, 1, VisibleType::Binary);
        let x = array![1.0];
        let cold = third_order_responsibility(&[a.clone(), b.clone()], x.view(), 1.0).unwrap();
        let hot = third_order_responsibility(&[a, b], x.view(), 100.0).unwrap();
        assert!(cold[0] > hot[0] && hot[0] > 0.5);
    }
}
