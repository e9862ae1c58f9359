//! Convex regularizers `r(w)` and their proximal operators
//! `prox^eta_r(x) = argmin_w 0.5 |w - x|^2 + eta r(w)`.

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `(gamma / 2) |w|^2`
    Ridge { gamma: f64 },
    /// `weight * |w|_1`
    L1 { weight: f64 },
    /// Indicator of the box `lo <= w_j <= hi`.
    Box { lo: f64, hi: f64 },
}

impl Default for Regularizer {
    fn default() -> Self {
        Regularizer::Zero
    }
}

impl Regularizer {
    /// Indicator of the L-infinity ball of the given radius.
    pub fn linf_ball(radius: f64) -> Self {
        Regularizer::Box {
            lo: -radius,
            hi: radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::Ridge { gamma } if gamma >= 0.0 && gamma.is_finite() => Ok(()),
            Regularizer::L1 { weight } if weight >= 0.0 && weight.is_finite() => Ok(()),
            Regularizer::Box { lo, hi } if lo <= hi && !lo.is_nan() && !hi.is_nan() => Ok(()),
            other => Err(Error::Configuration(format!("invalid regularizer {other:?}"))),
        }
    }

    /// `r(w)`; `+inf` outside the box for the indicator.
    pub fn value(&self, w: &[f64]) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::Ridge { gamma } => 0.5 * gamma * norm_sq(w),
            Regularizer::L1 { weight } => weight * w.iter().map(|x| x.abs()).sum::<f64>(),
            Regularizer::Box { lo, hi } => {
                if w.iter().all(|&x| x >= lo && x <= hi) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Regularizer::Zero | Regularizer::Ridge { .. })
    }

    /// Gradient of a smooth regularizer.
    pub fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Regularizer::Zero => Ok(vec![0.0; w.len()]),
            Regularizer::Ridge { gamma } => Ok(w.iter().map(|x| gamma * x).collect()),
            _ => Err(Error::Unsupported(format!(
                "{self:?} is not differentiable; use the gradient mapping"
            ))),
        }
    }

    /// Smoothness constant of the regularizer (0 for non-smooth ones, which
    /// are only ever handled through their prox).
    pub fn smoothness(&self) -> f64 {
        match *self {
            Regularizer::Ridge { gamma } => gamma,
            _ => 0.0,
        }
    }

    pub fn prox(&self, eta: f64, x: &[f64]) -> ParamVector {
        let out = match *self {
            Regularizer::Zero => x.to_vec(),
            Regularizer::Ridge { gamma } => {
                let s = 1.0 / (1.0 + eta * gamma);
                x.iter().map(|v| v * s).collect()
            }
            Regularizer::L1 { weight } => {
                let thr = eta * weight;
                x.iter()
                    .map(|&v| v.signum() * (v.abs() - thr).max(0.0))
                    .collect()
            }
            Regularizer::Box { lo, hi } => x.iter().map(|v| v.clamp(lo, hi)).collect(),
        };
        ParamVector::new(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic_prox_is_shrinkage() {
        let r = Regularizer::Ridge { gamma: 2.0 };
        assert_eq!(&*r.prox(0.5, &[2.0]), &[1.0]);
    }

    #[test]
    fn box_prox_clamps() {
        let r = Regularizer::linf_ball(1.0);
        assert_eq!(&*r.prox(1.0, &[3.0, -0.5]), &[1.0, -0.5]);
    }

    #[test]
    fn soft_threshold() {
        let r = Regularizer::L1 { weight: 1.0 };
        assert_eq!(&*r.prox(0.5, &[2.0, -0.25, -1.0]), &[1.5, 0.0, -0.5]);
    }

    #[test]
    fn zero_prox_is_identity() {
        let x = [1.5, -2.0, 1e-300];
        assert_eq!(&*Regularizer::Zero.prox(3.0, &x), &x);
    }

    #[test]
    fn nonsmooth_grad_is_unsupported() {
        assert!(Regularizer::L1 { weight: 1.0 }.grad(&[1.0]).is_err());
        assert!(Regularizer::linf_ball(1.0).grad(&[1.0]).is_err());
    }

    fn any_regularizer() -> impl Strategy<Value = Regularizer> {
        prop_oneof![
            Just(Regularizer::Zero),
            (0.0..10.0f64).prop_map(|gamma| Regularizer::Ridge { gamma }),
            (0.0..10.0f64).prop_map(|weight| Regularizer::L1 { weight }),
            (0.1..5.0f64).prop_map(Regularizer::linf_ball),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn prox_is_non_expansive(
            r in any_regularizer(),
            eta in 1e-3..10.0f64,
            a in prop::collection::vec(-10.0..10.0f64, 5),
            b in prop::collection::vec(-10.0..10.0f64, 5),
        ) {
            let pa = r.prox(eta, &a);
            let pb = r.prox(eta, &b);
            let lhs = crate::linalg::norm(&pa.iter().zip(pb.iter()).map(|(x, y)| x - y).collect::<Vec<_>>());
            let rhs = crate::linalg::norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
