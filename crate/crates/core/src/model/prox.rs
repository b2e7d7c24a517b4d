use ndarray::{Array, Array1, Dimension};

use crate::error::{Error, Result};

/// Elementwise `sign(x)·max(|x| − eta, 0)`, the proximal map of `eta·‖·‖₁`.
pub fn soft_threshold<D: Dimension>(x: &Array<f64, D>, eta: f64) -> Result<Array<f64, D>> {
    if !(eta >= 0.0) {
        return Err(Error::config(format!("threshold {eta} must be nonnegative")));
    }
    Ok(x.mapv(|v| shrink(v, eta)))
}

pub(crate) fn shrink(v: f64, eta: f64) -> f64 {
    let m = v.abs() - eta;
    if m > 0.0 {
        v.signum() * m
    } else {
        0.0
    }
}

/// Projection onto the nonnegative orthant.
pub fn nonneg_project(s: &Array1<f64>) -> Array1<f64> {
    s.mapv(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn threshold_examples() {
        let out = soft_threshold(&array![0.0, 5.0, -1.5, -5.0], 2.0).unwrap();
        assert_eq!(out, array![0.0, 3.0, 0.0, -3.0]);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(matches!(soft_threshold(&array![1.0], -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(nonneg_project(&array![-3.0]), array![0.0]);
        assert_eq!(nonneg_project(&array![4.0]), array![4.0]);
        assert_eq!(nonneg_project(&array![-1.0, 0.5, 2.0]), array![0.0, 0.5, 2.0]);
    }

    proptest! {
        #[test]
        fn threshold_contracts_toward_zero(x in -1e3f64..1e3, eta in 0.0f64..10.0) {
            let out = shrink(x, eta);
            prop_assert!(out.abs() <= x.abs());
            prop_assert!(out * x >= 0.0);
        }

        #[test]
        fn projection_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            let s = Array1::from(v);
            let once = nonneg_project(&s);
            prop_assert_eq!(nonneg_project(&once), once);
        }
    }
}
