//! Per-record linear predictors for all model structures.

use crate::error::{Error, Result};
use crate::model::latent::{dot, LatentField, LatentState};
use crate::model::{ModelSpec, ParamName, ParameterVector, Structure, SurveyDataset};

/// Linear predictors eta for every record, per diagnostic.
///
/// Asymmetric: eta_1 = d'b1 + S1 + Z1 and eta_2 = d'b2 + S2 + Z2 +
/// alpha * eta_1(site), where eta_1(site) is rebuilt from the diagnostic-2
/// record's own design (covariates are site properties in this structure).
/// Symmetric: eta_k = d'b_k + nu_k (S_k + T) + Z_k.
pub fn linear_predictor(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &SurveyDataset,
    latent: &LatentState,
) -> Result<[Vec<f64>; 2]> {
    data.check_spec(spec)?;
    params.validate()?;
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    match spec.structure {
        Structure::Univariate => {
            let beta = params.beta(0);
            out[0] = data
                .records(0)
                .iter()
                .map(|r| {
                    dot(&r.design, &beta)
                        + latent.value_at(LatentField::S(0), r.site)
                        + latent.value_at(LatentField::Z(0), r.site)
                })
                .collect();
        }
        Structure::Asymmetric => {
            let beta1 = params.beta(0);
            let beta2 = params.beta(1);
            let alpha = params.value(ParamName::Alpha)?;
            out[0] = data
                .records(0)
                .iter()
                .map(|r| {
                    dot(&r.design, &beta1)
                        + latent.value_at(LatentField::S(0), r.site)
                        + latent.value_at(LatentField::Z(0), r.site)
                })
                .collect();
            out[1] = data
                .records(1)
                .iter()
                .map(|r| {
                    let eta1 = dot(&r.design, &beta1)
                        + latent.value_at(LatentField::S(0), r.site)
                        + latent.value_at(LatentField::Z(0), r.site);
                    dot(&r.design, &beta2)
                        + latent.value_at(LatentField::S(1), r.site)
                        + latent.value_at(LatentField::Z(1), r.site)
                        + alpha * eta1
                })
                .collect();
        }
        Structure::Symmetric => {
            for k in 0..2 {
                let beta = params.beta(k);
                let nu = params.value(ParamName::Nu2(k))?.sqrt();
                out[k] = data
                    .records(k)
                    .iter()
                    .map(|r| {
                        dot(&r.design, &beta)
                            + nu * (latent.value_at(LatentField::S(k), r.site)
                                + latent.value_at(LatentField::T, r.site))
                            + latent.value_at(LatentField::Z(k), r.site)
                    })
                    .collect();
            }
        }
    }
    for k in 0..spec.n_diagnostics() {
        if out[k].iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "linear predictor for diagnostic {} is non-finite",
                k + 1
            )));
        }
    }
    Ok(out)
}
