//! Link functions mapping prevalence to the linear-predictor scale.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Smallest prevalence distinguished from 0; inverses clamp to the open
/// interval (PROB_FLOOR, 1 - PROB_FLOOR).
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Logit,
    Probit,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

impl LinkFunction {
    /// p -> eta; strictly increasing bijection (0,1) -> R.
    pub fn forward(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::validation(format!(
                "link forward: p must lie in (0,1), got {p}"
            )));
        }
        Ok(match self {
            LinkFunction::Logit => (p / (1.0 - p)).ln(),
            LinkFunction::Probit => std_normal().inverse_cdf(p),
        })
    }

    /// eta -> p, clamped to the open unit interval.
    pub fn inverse(&self, eta: f64) -> f64 {
        let p = match self {
            LinkFunction::Logit => 1.0 / (1.0 + (-eta).exp()),
            LinkFunction::Probit => std_normal().cdf(eta),
        };
        p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// Stable (log p, log(1-p)) at a given linear predictor, with both
    /// logs floored at log(PROB_FLOOR).
    pub fn log_prob_pair(&self, eta: f64) -> (f64, f64) {
        let floor = PROB_FLOOR.ln();
        match self {
            LinkFunction::Logit => {
                let lp = -softplus(-eta);
                let lq = -softplus(eta);
                (lp.max(floor), lq.max(floor))
            }
            LinkFunction::Probit => {
                let n = std_normal();
                let p = n.cdf(eta).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                let q = n.cdf(-eta).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                (p.ln().max(floor), q.ln().max(floor))
            }
        }
    }

    /// dp/deta, used by gradient-informed proposals.
    pub fn inverse_derivative(&self, eta: f64) -> f64 {
        match self {
            LinkFunction::Logit => {
                let p = self.inverse(eta);
                p * (1.0 - p)
            }
            LinkFunction::Probit => std_normal().pdf(eta),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn logit_half_is_zero() {
        assert_abs_diff_eq!(LinkFunction::Logit.forward(0.5).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn probit_upper_tail_quantile() {
        assert_abs_diff_eq!(
            LinkFunction::Probit.forward(0.975).unwrap(),
            1.95996,
            epsilon = 1e-5
        );
    }

    #[test]
    fn scaled_logit_chain() {
        // inverse(1.017 * logit(0.2)) computed independently as 1/(1 + 4^1.017)
        let expected = 1.0 / (1.0 + 4.0f64.powf(1.017));
        let eta = 1.017 * LinkFunction::Logit.forward(0.2).unwrap();
        let p = LinkFunction::Logit.inverse(eta);
        assert_abs_diff_eq!(p, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.19622, epsilon = 1e-4);
        assert_abs_diff_eq!(eta, -1.40988, epsilon = 5e-5);
    }

    #[test]
    fn forward_rejects_boundary() {
        for link in [LinkFunction::Logit, LinkFunction::Probit] {
            assert!(link.forward(0.0).is_err());
            assert!(link.forward(1.0).is_err());
            assert!(link.forward(-0.2).is_err());
        }
    }

    #[test]
    fn inverse_is_clamped_open() {
        for link in [LinkFunction::Logit, LinkFunction::Probit] {
            let lo = link.inverse(-1e6);
            let hi = link.inverse(1e6);
            assert!(lo > 0.0 && lo <= PROB_FLOOR);
            assert!(hi < 1.0 && hi >= 1.0 - PROB_FLOOR - 1e-15);
        }
    }

    #[test]
    fn round_trip_grid_to_1e9() {
        // grid kept inside the p in [1e-8, 1-1e-8] band of the contract
        for link in [LinkFunction::Logit, LinkFunction::Probit] {
            for k in 0..=200 {
                let eta = -5.5 + k as f64 * 0.055;
                let p = link.inverse(eta);
                let back = link.forward(p).unwrap();
                assert_abs_diff_eq!(back, eta, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn log_prob_pair_matches_naive() {
        for link in [LinkFunction::Logit, LinkFunction::Probit] {
            for eta in [-3.0, -0.4, 0.0, 1.2, 4.5] {
                let p = link.inverse(eta);
                let (lp, lq) = link.log_prob_pair(eta);
                assert_abs_diff_eq!(lp, p.ln(), epsilon = 1e-10);
                assert_abs_diff_eq!(lq, (1.0 - p).ln(), epsilon = 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn forward_inverse_identity(p in 1e-8f64..=0.99999999) {
            for link in [LinkFunction::Logit, LinkFunction::Probit] {
                let eta = link.forward(p).unwrap();
                let back = link.inverse(eta);
                prop_assert!((back - p).abs() < 1e-9);
            }
        }
    }
}
