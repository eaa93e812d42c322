//! Adam and the cosine learning-rate schedule.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step_count: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn for_param(param: &Matrix) -> Self {
        Self::new(param.rows(), param.cols())
    }
}

/// One bias-corrected Adam update without weight decay.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState, lr: f64) -> Result<()> {
    param.check_same_shape(grad, "adam gradient")?;
    param.check_same_shape(&state.first_moment, "adam state")?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let m = state.first_moment.as_mut_slice();
    let v = state.second_moment.as_mut_slice();
    for (((p, &g), m), v) in param.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        if lr != 0.0 {
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// `lr_max · cos²(π r / 2R)`, i.e. half-cosine annealing from `lr_max` at
/// `r = 0` down to zero at `r = R`.
pub fn cosine_lr(r: usize, total: usize, lr_max: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Range("schedule length must be positive".into()));
    }
    if r > total {
        return Err(Error::Range(format!("schedule step {r} exceeds length {total}")));
    }
    Ok(lr_max * cos_squared_fraction(r, total))
}

/// `cos²(π r / 2R)`, clamped to exactly zero at `r = R`.
pub(crate) fn cos_squared_fraction(r: usize, total: usize) -> f64 {
    if r >= total {
        return 0.0;
    }
    (FRAC_PI_2 * r as f64 / total as f64).cos().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adam_examples() {
        let mut p = Matrix::from_rows(&[[0.0]]);
        let mut s = AdamState::for_param(&p);
        adam_step(&mut p, &Matrix::from_rows(&[[1.0]]), &mut s, 0.005).unwrap();
        assert!((p[(0, 0)] + 0.005).abs() < 1e-10);
        assert_eq!(s.step_count, 1);

        let mut p = Matrix::from_rows(&[[2.0, -1.0]]);
        let mut s = AdamState::for_param(&p);
        adam_step(&mut p, &Matrix::from_rows(&[[0.3, 7.0]]), &mut s, 0.0).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[2.0, -1.0]]));
        assert!(s.first_moment.max_abs() > 0.0);

        let mut s = AdamState::for_param(&p);
        adam_step(&mut p, &Matrix::zeros(1, 2), &mut s, 0.1).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[2.0, -1.0]]));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 500, 0.005).unwrap(), 0.005);
        assert_eq!(cosine_lr(500, 500, 0.005).unwrap(), 0.0);
        assert!((cosine_lr(250, 500, 0.005).unwrap() - 0.0025).abs() < 1e-15);
        assert!(cosine_lr(501, 500, 0.005).is_err());
        assert!(cosine_lr(0, 0, 0.005).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_monotone_and_bounded(total in 1usize..600, lr in 0.0f64..1.0) {
            let mut prev = f64::INFINITY;
            for r in 0..=total {
                let v = cosine_lr(r, total, lr).unwrap();
                prop_assert!((0.0..=lr).contains(&v));
                prop_assert!(v <= prev);
                prev = v;
            }
        }

        #[test]
        fn zero_gradient_is_a_fixed_point(vals in prop::collection::vec(-10.0f64..10.0, 1..12), steps in 1usize..20) {
            let n = vals.len();
            let mut p = Matrix::from_vec(1, n, vals.clone()).unwrap();
            let mut s = AdamState::for_param(&p);
            for _ in 0..steps {
                adam_step(&mut p, &Matrix::zeros(1, n), &mut s, 0.01).unwrap();
            }
            prop_assert_eq!(p.as_slice(), &vals[..]);
            prop_assert_eq!(s.step_count, steps as u64);
        }
    }
}
