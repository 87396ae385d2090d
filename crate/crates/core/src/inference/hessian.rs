//! Wald confidence intervals from the curvature of the Monte Carlo
//! objective at its maximum.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::inference::objective::McmlObjective;
use crate::model::{ParamName, ParameterVector, Transform};
use crate::numeric::chol;
use crate::numeric::eigen::symmetric_eigenvalues;
use crate::numeric::optim::numerical_hessian;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfInterval {
    pub lower: f64,
    pub upper: f64,
}

const HESSIAN_REL_STEP: f64 = 1e-4;
/// Relative eigenvalue floor for the observed information.
const EIGEN_FLOOR: f64 = 1e-10;

/// 95% intervals per parameter, in layout order. Fixed parameters get
/// `None`; if the negated Hessian is not positive definite all intervals
/// are absent and a warning explains why.
///
/// Intervals are formed on the unconstrained scale and mapped back through
/// each parameter's transform, so intervals for variances and scales are
/// strictly positive and always contain the point estimate.
pub fn wald_intervals(
    obj: &McmlObjective,
    theta_hat: &ParameterVector,
) -> (Vec<(ParamName, Option<ConfInterval>)>, Vec<String>) {
    let mut warnings = Vec::new();
    let names: Vec<ParamName> = theta_hat.names().collect();
    let free = theta_hat.free_names();
    let t_hat = theta_hat.free_transformed();

    let mut f = |t: &[f64]| obj.eval_free(t);
    let h = numerical_hessian(&mut f, &t_hat, HESSIAN_REL_STEP);
    if h.iter().any(|v| !v.is_finite()) {
        warnings.push(
            "observed information contains non-finite entries; confidence intervals \
             unavailable"
                .to_string(),
        );
        return (names.into_iter().map(|n| (n, None)).collect(), warnings);
    }
    let neg_h = h.mapv(|v| -v);

    let ev = symmetric_eigenvalues(neg_h.view());
    let lambda_min = ev.first().copied().unwrap_or(0.0);
    let lambda_max = ev.last().copied().unwrap_or(0.0);
    let spd_ok = lambda_min > EIGEN_FLOOR * lambda_max.max(1e-300) && lambda_max > 0.0;
    if !spd_ok {
        warnings.push(format!(
            "observed information is not positive definite \
             (eigenvalue range [{lambda_min:.3e}, {lambda_max:.3e}]); \
             confidence intervals unavailable"
        ));
        return (names.into_iter().map(|n| (n, None)).collect(), warnings);
    }

    let factor = match chol::cholesky(neg_h.view()) {
        Ok(l) => l,
        Err(e) => {
            warnings.push(format!("observed information factorization failed: {e}"));
            return (names.into_iter().map(|n| (n, None)).collect(), warnings);
        }
    };
    let cov = chol::spd_inverse(factor.view());
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);

    let mut by_name = std::collections::HashMap::new();
    for (i, name) in free.iter().enumerate() {
        let se = cov[[i, i]].max(0.0).sqrt();
        let lo_t = t_hat[i] - z * se;
        let hi_t = t_hat[i] + z * se;
        let tr = theta_hat.transform_of(*name).unwrap_or(Transform::Identity);
        by_name.insert(*name, ConfInterval {
            lower: tr.to_natural(lo_t),
            upper: tr.to_natural(hi_t),
        });
    }
    let out = names
        .into_iter()
        .map(|n| (n, by_name.get(&n).copied()))
        .collect();
    (out, warnings)
}
