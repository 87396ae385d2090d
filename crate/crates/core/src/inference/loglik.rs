//! Complete-data log-likelihood: binomial terms plus the Gaussian density of
//! the latent vector.
//!
//! The binomial coefficient is omitted everywhere; it is constant in the
//! parameters and the latent field, and the choice is uniform across all
//! likelihood evaluations in the crate.

use crate::error::Result;
use crate::geometry::distance_matrix;
use crate::gp::{covariance_matrix, GpParams};
use crate::model::latent::{LatentField, LatentState};
use crate::model::predictor::linear_predictor;
use crate::model::{ModelSpec, ParamName, ParameterVector, SurveyDataset};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Binomial log-likelihood term for one record at linear predictor `eta`.
pub(crate) fn binomial_term(link: crate::model::LinkFunction, eta: f64, y: u32, n: u32) -> f64 {
    let (lp, lq) = link.log_prob_pair(eta);
    f64::from(y) * lp + f64::from(n - y) * lq
}

/// Gaussian log-density of the latent vector under the model's latent law.
pub fn latent_log_density(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &SurveyDataset,
    latent: &LatentState,
) -> Result<f64> {
    let _ = spec;
    let mut total = 0.0;
    for comp in &latent.layout.components {
        let m = comp.len() as f64;
        let values = &latent.values[comp.offset..comp.offset + comp.len()];
        match comp.field {
            LatentField::Z(k) => {
                let tau2 = params.value(ParamName::Tau2(k))?;
                let ssq: f64 = values.iter().map(|v| v * v).sum();
                total += -0.5 * (m * (LN_2PI + tau2.ln()) + ssq / tau2);
            }
            spatial => {
                let (sigma2, phi) = match spatial {
                    LatentField::S(k) => (
                        params.value(ParamName::Sigma2(k))?,
                        params.value(ParamName::Phi(k))?,
                    ),
                    LatentField::T => (1.0, params.value(ParamName::PhiT)?),
                    LatentField::Z(_) => unreachable!(),
                };
                let locs: Vec<_> = comp.support.iter().map(|&s| data.sites()[s]).collect();
                let d = distance_matrix(&locs)?;
                let cov = covariance_matrix(&GpParams::new(sigma2, phi)?, &d, None)?;
                let quad = cov.quad_form_inv(ndarray::ArrayView1::from(values));
                total += -0.5 * (m * LN_2PI + cov.log_determinant() + quad);
            }
        }
    }
    Ok(total)
}

/// Sum of binomial record terms and the latent Gaussian log-density.
pub fn complete_data_loglik(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &SurveyDataset,
    latent: &LatentState,
) -> Result<f64> {
    let eta = linear_predictor(spec, params, data, latent)?;
    let mut total = 0.0;
    for k in 0..spec.n_diagnostics() {
        for (r, rec) in data.records(k).iter().enumerate() {
            total += binomial_term(spec.links[k], eta[k][r], rec.y, rec.n);
        }
    }
    total += latent_log_density(spec, params, data, latent)?;
    Ok(total)
}
